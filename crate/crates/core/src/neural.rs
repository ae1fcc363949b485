//! Minimal differentiable kernel: dense layers, rectifier activations,
//! inverted dropout, sum pooling, a tanh recurrent cell, softmax
//! cross-entropy, and RMSprop — enough to host the discriminator and the
//! task backbones. Everything is 64-bit, single-threaded, and exactly
//! reproducible; dropout masks come from an explicitly passed RNG.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay: 0.99,
            epsilon: 1e-8,
            batch_size: 8,
        }
    }
}

/// One RMSprop update: `v ← decay·v + (1−decay)·g²`, then
/// `p ← p − lr·g/(√v + ε)`. Errors on non-finite gradients.
pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut [f64],
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::DimensionMismatch(format!(
            "rmsprop: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(state.iter_mut()) {
        *v = config.decay * *v + (1.0 - config.decay) * g * g;
        *p -= config.learning_rate * g / (v.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Fully connected layer `y = xW + b` with accumulated gradients and
/// per-parameter RMSprop state.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
    grad_w: Matrix,
    grad_b: Vec<f64>,
    state_w: Matrix,
    state_b: Vec<f64>,
    cache: Option<Matrix>,
}

impl Dense {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::from_parts(
            Matrix::new(fan_in, fan_out, data).expect("finite init"),
            vec![0.0; fan_out],
        )
    }

    pub fn from_parts(w: Matrix, b: Vec<f64>) -> Self {
        let (fi, fo) = (w.rows(), w.cols());
        Self {
            w,
            b,
            grad_w: Matrix::zeros(fi, fo),
            grad_b: vec![0.0; fo],
            state_w: Matrix::zeros(fi, fo),
            state_b: vec![0.0; fo],
            cache: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }

    fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        if x.cols() != self.w.rows() {
            return Err(Error::DimensionMismatch(format!(
                "dense input {} vs fan-in {}",
                x.cols(),
                self.w.rows()
            )));
        }
        let mut y = x.matmul(&self.w);
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, dout: &Matrix) -> Result<Matrix> {
        let x = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        self.grad_w = self.grad_w.add(&x.transpose().matmul(dout));
        for i in 0..dout.rows() {
            for (g, d) in self.grad_b.iter_mut().zip(dout.row(i)) {
                *g += d;
            }
        }
        Ok(dout.matmul(&self.w.transpose()))
    }

    pub fn zero_grads(&mut self) {
        self.grad_w = Matrix::zeros(self.w.rows(), self.w.cols());
        self.grad_b.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn step(&mut self, config: &OptimizerConfig) -> Result<()> {
        rmsprop_step(
            self.w.data_mut(),
            self.grad_w.data(),
            self.state_w.data_mut(),
            config,
        )?;
        let grad_b = self.grad_b.clone();
        rmsprop_step(&mut self.b, &grad_b, &mut self.state_b, config)
    }
}

#[derive(Debug, Clone)]
pub struct Relu {
    cache: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    cache: Option<Matrix>,
}

/// Inverted dropout: surviving activations are scaled by `1/(1−rate)` at
/// train time so eval needs no rescale.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Matrix>,
}

/// Sums all input rows into one row.
#[derive(Debug, Clone)]
pub struct SumPool {
    rows: Option<usize>,
}

/// A feed-forward layer.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Relu(Relu),
    LeakyRelu(LeakyRelu),
    Dropout(Dropout),
    SumPool(SumPool),
}

impl Layer {
    pub fn dense(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Layer {
        Layer::Dense(Dense::new(fan_in, fan_out, rng))
    }

    pub fn relu() -> Layer {
        Layer::Relu(Relu { cache: None })
    }

    pub fn leaky_relu(slope: f64) -> Layer {
        Layer::LeakyRelu(LeakyRelu { slope, cache: None })
    }

    pub fn dropout(rate: f64) -> Layer {
        assert!((0.0..1.0).contains(&rate), "dropout rate in [0,1)");
        Layer::Dropout(Dropout { rate, mask: None })
    }

    pub fn sum_pool() -> Layer {
        Layer::SumPool(SumPool { rows: None })
    }

    fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        match self {
            Layer::Dense(l) => l.forward(x, mode),
            Layer::Relu(l) => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                });
                if mode == Mode::Train {
                    l.cache = Some(x.clone());
                }
                Ok(y)
            }
            Layer::LeakyRelu(l) => {
                let slope = l.slope;
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                });
                if mode == Mode::Train {
                    l.cache = Some(x.clone());
                }
                Ok(y)
            }
            Layer::Dropout(l) => {
                if mode == Mode::Eval || l.rate == 0.0 {
                    l.mask = Some(Matrix::new(
                        x.rows(),
                        x.cols(),
                        vec![1.0; x.rows() * x.cols()],
                    )?);
                    return Ok(x.clone());
                }
                let keep = 1.0 - l.rate;
                let mask_data: Vec<f64> = (0..x.rows() * x.cols())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mask = Matrix::new(x.rows(), x.cols(), mask_data)?;
                let mut y = x.clone();
                for (v, m) in y.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
                l.mask = Some(mask);
                Ok(y)
            }
            Layer::SumPool(l) => {
                let mut y = Matrix::zeros(1, x.cols());
                for i in 0..x.rows() {
                    for (a, b) in y.row_mut(0).iter_mut().zip(x.row(i)) {
                        *a += b;
                    }
                }
                if mode == Mode::Train {
                    l.rows = Some(x.rows());
                }
                Ok(y)
            }
        }
    }

    fn backward(&mut self, dout: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(l) => l.backward(dout),
            Layer::Relu(l) => {
                let x = l.cache.as_ref().ok_or(Error::NoForwardCache)?;
                let mut dx = dout.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if v < 0.0 {
                        *d = 0.0;
                    }
                }
                Ok(dx)
            }
            Layer::LeakyRelu(l) => {
                let x = l.cache.as_ref().ok_or(Error::NoForwardCache)?;
                let slope = l.slope;
                let mut dx = dout.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if v < 0.0 {
                        *d *= slope;
                    }
                }
                Ok(dx)
            }
            Layer::Dropout(l) => {
                let mask = l.mask.as_ref().ok_or(Error::NoForwardCache)?;
                let mut dx = dout.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(mask.data()) {
                    *d *= m;
                }
                Ok(dx)
            }
            Layer::SumPool(l) => {
                let rows = l.rows.ok_or(Error::NoForwardCache)?;
                let mut dx = Matrix::zeros(rows, dout.cols());
                for i in 0..rows {
                    dx.row_mut(i).copy_from_slice(dout.row(0));
                }
                Ok(dx)
            }
        }
    }
}

/// A stack of layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, mode, rng)?;
        }
        Ok(cur)
    }

    /// Propagates `dout` back through the stack, accumulating parameter
    /// gradients; returns the gradient with respect to the input.
    pub fn backward(&mut self, dout: &Matrix) -> Result<Matrix> {
        let mut cur = dout.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            if let Layer::Dense(d) = layer {
                d.zero_grads();
            }
        }
    }

    pub fn step(&mut self, config: &OptimizerConfig) -> Result<()> {
        for layer in &mut self.layers {
            if let Layer::Dense(d) = layer {
                d.step(config)?;
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.w.data().len() + d.b.len(),
                _ => 0,
            })
            .sum()
    }

    fn locate(&self, index: usize) -> (usize, usize) {
        let mut rest = index;
        for (li, layer) in self.layers.iter().enumerate() {
            if let Layer::Dense(d) = layer {
                let n = d.w.data().len() + d.b.len();
                if rest < n {
                    return (li, rest);
                }
                rest -= n;
            }
        }
        panic!("parameter index {index} out of range");
    }

    pub fn param(&self, index: usize) -> f64 {
        let (li, off) = self.locate(index);
        if let Layer::Dense(d) = &self.layers[li] {
            if off < d.w.data().len() {
                d.w.data()[off]
            } else {
                d.b[off - d.w.data().len()]
            }
        } else {
            unreachable!()
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (li, off) = self.locate(index);
        if let Layer::Dense(d) = &mut self.layers[li] {
            let nw = d.w.data().len();
            if off < nw {
                d.w.data_mut()[off] = value;
            } else {
                d.b[off - nw] = value;
            }
        }
    }

    pub fn grad(&self, index: usize) -> f64 {
        let (li, off) = self.locate(index);
        if let Layer::Dense(d) = &self.layers[li] {
            if off < d.w.data().len() {
                d.grad_w.data()[off]
            } else {
                d.grad_b[off - d.w.data().len()]
            }
        } else {
            unreachable!()
        }
    }

    /// Flat text checkpoint: one header line per layer followed by matrix
    /// blocks for parameters.
    pub fn to_text(&self) -> String {
        let mut s = format!("layers {}\n", self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    s.push_str("dense\n");
                    s.push_str(&d.w.to_text());
                    s.push_str(&Matrix::new(1, d.b.len(), d.b.clone()).unwrap().to_text());
                }
                Layer::Relu(_) => s.push_str("relu\n"),
                Layer::LeakyRelu(l) => s.push_str(&format!("leaky_relu {}\n", l.slope)),
                Layer::Dropout(l) => s.push_str(&format!("dropout {}\n", l.rate)),
                Layer::SumPool(_) => s.push_str("sum_pool\n"),
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Sequential> {
        let mut lines = text.lines();
        Self::read(&mut lines)
    }

    pub(crate) fn read<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Sequential> {
        let parse_err = |msg: &str| Error::Parse {
            line: 0,
            msg: msg.to_string(),
        };
        let header = lines.next().ok_or_else(|| parse_err("missing layers header"))?;
        let n: usize = header
            .strip_prefix("layers ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("expected 'layers N'"))?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let kind = lines.next().ok_or_else(|| parse_err("missing layer header"))?;
            let mut parts = kind.split_whitespace();
            match parts.next() {
                Some("dense") => {
                    let w = read_matrix(lines)?;
                    let b = read_matrix(lines)?;
                    layers.push(Layer::Dense(Dense::from_parts(w, b.data().to_vec())));
                }
                Some("relu") => layers.push(Layer::relu()),
                Some("leaky_relu") => {
                    let slope: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err("leaky_relu slope"))?;
                    layers.push(Layer::leaky_relu(slope));
                }
                Some("dropout") => {
                    let rate: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err("dropout rate"))?;
                    layers.push(Layer::dropout(rate));
                }
                Some("sum_pool") => layers.push(Layer::sum_pool()),
                other => return Err(parse_err(&format!("unknown layer kind {other:?}"))),
            }
        }
        Ok(Sequential { layers })
    }
}

pub(crate) fn read_matrix<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Matrix> {
    let header = lines.next().ok_or(Error::Parse {
        line: 0,
        msg: "missing matrix header".into(),
    })?;
    let mut parts = header.split_whitespace();
    let rows: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::Parse {
            line: 0,
            msg: "matrix rows".into(),
        })?;
    let cols: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::Parse {
            line: 0,
            msg: "matrix cols".into(),
        })?;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let line = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "missing matrix row".into(),
        })?;
        for tok in line.split_whitespace() {
            data.push(tok.parse().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("bad float '{tok}'"),
            })?);
        }
    }
    Matrix::new(rows, cols, data)
}

/// Basic tanh recurrent cell `h_t = tanh(x_t·W_in + h_{t−1}·W_rec + b)`
/// with zero initial state.
#[derive(Debug, Clone)]
pub struct RecurrentCell {
    pub w_in: Matrix,
    pub w_rec: Matrix,
    pub b: Vec<f64>,
    grad_w_in: Matrix,
    grad_w_rec: Matrix,
    grad_b: Vec<f64>,
    state_w_in: Matrix,
    state_w_rec: Matrix,
    state_b: Vec<f64>,
    cache: Option<(Matrix, Matrix)>,
}

impl RecurrentCell {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound_in = (6.0 / (input_dim + hidden) as f64).sqrt();
        let bound_rec = (6.0 / (2 * hidden) as f64).sqrt();
        let data_in: Vec<f64> = (0..input_dim * hidden)
            .map(|_| rng.random_range(-bound_in..bound_in))
            .collect();
        let data_rec: Vec<f64> = (0..hidden * hidden)
            .map(|_| rng.random_range(-bound_rec..bound_rec))
            .collect();
        Self::from_parts(
            Matrix::new(input_dim, hidden, data_in).expect("finite init"),
            Matrix::new(hidden, hidden, data_rec).expect("finite init"),
            vec![0.0; hidden],
        )
    }

    pub fn from_parts(w_in: Matrix, w_rec: Matrix, b: Vec<f64>) -> Self {
        let (di, h) = (w_in.rows(), w_in.cols());
        Self {
            w_in,
            w_rec,
            b,
            grad_w_in: Matrix::zeros(di, h),
            grad_w_rec: Matrix::zeros(h, h),
            grad_b: vec![0.0; h],
            state_w_in: Matrix::zeros(di, h),
            state_w_rec: Matrix::zeros(h, h),
            state_b: vec![0.0; h],
            cache: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_in.cols()
    }

    /// Runs the cell over a sequence of row vectors; returns all hidden
    /// states, one row per step.
    pub fn forward_seq(&mut self, xs: &Matrix, mode: Mode) -> Result<Matrix> {
        if xs.cols() != self.w_in.rows() {
            return Err(Error::DimensionMismatch(format!(
                "recurrent input {} vs {}",
                xs.cols(),
                self.w_in.rows()
            )));
        }
        let t = xs.rows();
        let h = self.hidden();
        let mut hs = Matrix::zeros(t, h);
        let mut prev = vec![0.0; h];
        for step in 0..t {
            let mut a = vec![0.0; h];
            for (k, &x) in xs.row(step).iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (j, aj) in a.iter_mut().enumerate() {
                    *aj += x * self.w_in.at(k, j);
                }
            }
            for (k, &p) in prev.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (j, aj) in a.iter_mut().enumerate() {
                    *aj += p * self.w_rec.at(k, j);
                }
            }
            for (j, aj) in a.iter_mut().enumerate() {
                *aj = (*aj + self.b[j]).tanh();
            }
            hs.row_mut(step).copy_from_slice(&a);
            prev = a;
        }
        if mode == Mode::Train {
            self.cache = Some((xs.clone(), hs.clone()));
        }
        Ok(hs)
    }

    /// Backpropagation through time; `dhs` holds the loss gradient flowing
    /// into each hidden state from outside. Returns the input gradients.
    pub fn backward_seq(&mut self, dhs: &Matrix) -> Result<Matrix> {
        let (xs, hs) = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        let t = xs.rows();
        let h = self.hidden();
        if dhs.rows() != t || dhs.cols() != h {
            return Err(Error::DimensionMismatch(format!(
                "dhs {}x{} vs {}x{}",
                dhs.rows(),
                dhs.cols(),
                t,
                h
            )));
        }
        let mut dxs = Matrix::zeros(t, xs.cols());
        let mut carry = vec![0.0; h];
        for step in (0..t).rev() {
            // da = (dh_out + carry) ⊙ (1 − h²)
            let mut da = vec![0.0; h];
            for j in 0..h {
                let total = dhs.at(step, j) + carry[j];
                let hv = hs.at(step, j);
                da[j] = total * (1.0 - hv * hv);
            }
            for (k, &x) in xs.row(step).iter().enumerate() {
                for (j, &dj) in da.iter().enumerate() {
                    self.grad_w_in.set(k, j, self.grad_w_in.at(k, j) + x * dj);
                }
            }
            if step > 0 {
                for k in 0..h {
                    let hp = hs.at(step - 1, k);
                    for (j, &dj) in da.iter().enumerate() {
                        self.grad_w_rec.set(k, j, self.grad_w_rec.at(k, j) + hp * dj);
                    }
                }
            }
            for (g, &dj) in self.grad_b.iter_mut().zip(&da) {
                *g += dj;
            }
            for (k, dx) in dxs.row_mut(step).iter_mut().enumerate() {
                for (j, &dj) in da.iter().enumerate() {
                    *dx += dj * self.w_in.at(k, j);
                }
            }
            for (k, c) in carry.iter_mut().enumerate() {
                *c = 0.0;
                for (j, &dj) in da.iter().enumerate() {
                    *c += dj * self.w_rec.at(k, j);
                }
            }
        }
        Ok(dxs)
    }

    pub fn zero_grads(&mut self) {
        self.grad_w_in = Matrix::zeros(self.w_in.rows(), self.w_in.cols());
        self.grad_w_rec = Matrix::zeros(self.w_rec.rows(), self.w_rec.cols());
        self.grad_b.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn step(&mut self, config: &OptimizerConfig) -> Result<()> {
        rmsprop_step(
            self.w_in.data_mut(),
            self.grad_w_in.data(),
            self.state_w_in.data_mut(),
            config,
        )?;
        rmsprop_step(
            self.w_rec.data_mut(),
            self.grad_w_rec.data(),
            self.state_w_rec.data_mut(),
            config,
        )?;
        let grad_b = self.grad_b.clone();
        rmsprop_step(&mut self.b, &grad_b, &mut self.state_b, config)
    }

    pub fn n_params(&self) -> usize {
        self.w_in.data().len() + self.w_rec.data().len() + self.b.len()
    }

    pub fn param(&self, index: usize) -> f64 {
        let ni = self.w_in.data().len();
        let nr = self.w_rec.data().len();
        if index < ni {
            self.w_in.data()[index]
        } else if index < ni + nr {
            self.w_rec.data()[index - ni]
        } else {
            self.b[index - ni - nr]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let ni = self.w_in.data().len();
        let nr = self.w_rec.data().len();
        if index < ni {
            self.w_in.data_mut()[index] = value;
        } else if index < ni + nr {
            self.w_rec.data_mut()[index - ni] = value;
        } else {
            self.b[index - ni - nr] = value;
        }
    }

    pub fn grad(&self, index: usize) -> f64 {
        let ni = self.w_in.data().len();
        let nr = self.w_rec.data().len();
        if index < ni {
            self.grad_w_in.data()[index]
        } else if index < ni + nr {
            self.grad_w_rec.data()[index - ni]
        } else {
            self.grad_b[index - ni - nr]
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("recurrent\n");
        s.push_str(&self.w_in.to_text());
        s.push_str(&self.w_rec.to_text());
        s.push_str(&Matrix::new(1, self.b.len(), self.b.clone()).unwrap().to_text());
        s
    }

    pub(crate) fn read<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<RecurrentCell> {
        let header = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "missing recurrent header".into(),
        })?;
        if header.trim() != "recurrent" {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected 'recurrent', got '{header}'"),
            });
        }
        let w_in = read_matrix(lines)?;
        let w_rec = read_matrix(lines)?;
        let b = read_matrix(lines)?;
        Ok(RecurrentCell::from_parts(w_in, w_rec, b.data().to_vec()))
    }
}

/// Mean softmax cross-entropy over rows of `logits`; returns the loss and
/// the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::EmptyInput("logits".into()));
    }
    let classes = logits.cols();
    let mut dlogits = Matrix::zeros(logits.rows(), classes);
    let mut loss = 0.0;
    let inv_n = 1.0 / logits.rows() as f64;
    for i in 0..logits.rows() {
        let label = labels[i];
        if label >= classes {
            return Err(Error::InvalidLabel { label, classes });
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += -(exps[label] / sum).ln() * inv_n;
        for (j, &e) in exps.iter().enumerate() {
            let p = e / sum;
            let indicator = if j == label { 1.0 } else { 0.0 };
            dlogits.set(i, j, (p - indicator) * inv_n);
        }
    }
    Ok((loss, dlogits))
}

/// Numerically safe logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
