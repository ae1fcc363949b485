//! Code embeddings from visit co-occurrence by weighted least-squares
//! factorization.
//!
//! The context of a code is the whole visit (codes are unordered sets), so
//! the co-occurrence count `X_ij` is the number of unordered (i,j) pairs
//! across all visits, with multiplicity and without the diagonal. Training
//! minimizes
//!
//! ```text
//!   Σ_{X_ij > 0}  f(X_ij) · (w_iᵀ w̃_j + b_i + b̃_j − ln X_ij)²
//! ```
//!
//! with `f(x) = min(1, (x/x_max)^exponent)`, by per-entry adaptive gradient
//! steps, and emits `w + w̃` per code.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::corpus::Corpus;
use crate::numerics::Matrix;
use crate::rng::substream;
use crate::{Error, Result};

/// Symmetric visit co-occurrence counts; only `i < j` is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    dim: usize,
    entries: BTreeMap<(u32, u32), f64>,
}

impl CooccurrenceMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, i: usize, j: usize, count: f64) {
        assert!(i != j, "diagonal is excluded");
        assert!(i < self.dim && j < self.dim);
        let key = (i.min(j) as u32, i.max(j) as u32);
        *self.entries.entry(key).or_insert(0.0) += count;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let key = (i.min(j) as u32, i.max(j) as u32);
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    pub fn nonzero_len(&self) -> usize {
        self.entries.len()
    }

    /// Directed entries `(i, j, x)` with both orientations of every stored
    /// pair, in deterministic order.
    pub fn directed_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.entries.len() * 2);
        for (&(i, j), &x) in &self.entries {
            out.push((i as usize, j as usize, x));
            out.push((j as usize, i as usize, x));
        }
        out
    }
}

/// Counts codes co-occurring within a visit, over all patients.
pub fn build_cooccurrence(corpus: &Corpus) -> Result<CooccurrenceMatrix> {
    if corpus.patients.is_empty() {
        return Err(Error::EmptyInput("corpus".into()));
    }
    let mut x = CooccurrenceMatrix::new(corpus.vocab_size());
    for p in &corpus.patients {
        for v in &p.visits {
            for (a, &ca) in v.codes.iter().enumerate() {
                for &cb in v.codes.iter().skip(a + 1) {
                    if ca != cb {
                        x.add(ca, cb, 1.0);
                    }
                }
            }
        }
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct GloveConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub x_max: f64,
    pub weight_exponent: f64,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            epochs: 50,
            learning_rate: 0.05,
            x_max: 100.0,
            weight_exponent: 0.75,
            seed: 0,
        }
    }
}

impl GloveConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig("embedding dim must be >= 2".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || self.x_max <= 0.0 || self.weight_exponent <= 0.0 {
            return Err(Error::InvalidConfig("glove rates must be positive".into()));
        }
        Ok(())
    }
}

/// Embeddings in vocabulary order: row `i` is the vector of code `i`.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    codes: Vec<String>,
    rows: Matrix,
    index_by_id: HashMap<String, usize>,
}

impl PartialEq for EmbeddingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.codes == other.codes && self.rows == other.rows
    }
}

impl EmbeddingMatrix {
    pub fn new(codes: Vec<String>, rows: Matrix) -> Result<Self> {
        if codes.len() != rows.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} codes vs {} embedding rows",
                codes.len(),
                rows.rows()
            )));
        }
        let mut index_by_id = HashMap::with_capacity(codes.len());
        for (i, id) in codes.iter().enumerate() {
            if index_by_id.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate code id {id}")));
            }
        }
        Ok(Self {
            codes,
            rows,
            index_by_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        self.rows.row(index)
    }

    pub fn index_of(&self, code_id: &str) -> Option<usize> {
        self.index_by_id.get(code_id).copied()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    /// First line `num_codes dim`, then `code_id v1 … vd` per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        writeln!(out, "{} {}", self.len(), self.dim())?;
        for (i, id) in self.codes.iter().enumerate() {
            let vals: Vec<String> = self.rows.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{id} {}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty embedding file".into(),
        })?;
        let header = header?;
        let mut parts = header.split_whitespace();
        let n: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                msg: "expected 'num_codes dim'".into(),
            })?;
        let d: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                msg: "expected 'num_codes dim'".into(),
            })?;
        let mut codes = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * d);
        for (idx, line) in lines.take(n) {
            let line = line?;
            let mut toks = line.split_whitespace();
            let id = toks.next().ok_or(Error::Parse {
                line: idx + 1,
                msg: "missing code id".into(),
            })?;
            codes.push(id.to_string());
            let mut count = 0;
            for t in toks {
                let v: f64 = t.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad float '{t}'"),
                })?;
                data.push(v);
                count += 1;
            }
            if count != d {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {d} values, found {count}"),
                });
            }
        }
        if codes.len() != n {
            return Err(Error::Parse {
                line: codes.len() + 1,
                msg: format!("expected {n} embedding rows, found {}", codes.len()),
            });
        }
        EmbeddingMatrix::new(codes, Matrix::new(n, d, data)?)
    }
}

/// Factorization parameters: main and context vectors plus biases.
#[derive(Debug, Clone)]
pub struct GloveModel {
    pub main: Matrix,
    pub context: Matrix,
    pub bias_main: Vec<f64>,
    pub bias_context: Vec<f64>,
}

impl GloveModel {
    fn init(n: usize, d: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = substream(seed, "glove-init", 0);
        let mut rand_mat = |rows: usize, cols: usize| {
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| (rng.random::<f64>() - 0.5) / (cols as f64 + 1.0))
                .collect();
            Matrix::new(rows, cols, data).expect("finite init")
        };
        let main = rand_mat(n, d);
        let context = rand_mat(n, d);
        let mut rand_bias = || -> Vec<f64> {
            (0..n)
                .map(|_| (rng.random::<f64>() - 0.5) / (d as f64 + 1.0))
                .collect()
        };
        GloveModel {
            main,
            context,
            bias_main: rand_bias(),
            bias_context: rand_bias(),
        }
    }

    fn weight(x: f64, x_max: f64, exponent: f64) -> f64 {
        (x / x_max).powf(exponent).min(1.0)
    }

    /// Full weighted least-squares objective over all directed entries.
    pub fn loss(&self, x: &CooccurrenceMatrix, config: &GloveConfig) -> f64 {
        let mut total = 0.0;
        for (i, j, count) in x.directed_entries() {
            let f = Self::weight(count, config.x_max, config.weight_exponent);
            let diff = crate::numerics::dot(self.main.row(i), self.context.row(j))
                + self.bias_main[i]
                + self.bias_context[j]
                - count.ln();
            total += f * diff * diff;
        }
        total
    }

    /// Analytic full-batch gradient of [`Self::loss`], same layout as the
    /// parameters.
    pub fn gradients(&self, x: &CooccurrenceMatrix, config: &GloveConfig) -> GloveModel {
        let n = self.main.rows();
        let d = self.main.cols();
        let mut g = GloveModel {
            main: Matrix::zeros(n, d),
            context: Matrix::zeros(n, d),
            bias_main: vec![0.0; n],
            bias_context: vec![0.0; n],
        };
        for (i, j, count) in x.directed_entries() {
            let f = Self::weight(count, config.x_max, config.weight_exponent);
            let diff = crate::numerics::dot(self.main.row(i), self.context.row(j))
                + self.bias_main[i]
                + self.bias_context[j]
                - count.ln();
            let coef = 2.0 * f * diff;
            for k in 0..d {
                let wj = self.context.at(j, k);
                let wi = self.main.at(i, k);
                g.main.set(i, k, g.main.at(i, k) + coef * wj);
                g.context.set(j, k, g.context.at(j, k) + coef * wi);
            }
            g.bias_main[i] += coef;
            g.bias_context[j] += coef;
        }
        g
    }
}

#[derive(Debug)]
pub struct GloveOutcome {
    pub embedding: EmbeddingMatrix,
    /// Full-pass loss before training and after every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains code embeddings on the co-occurrence matrix; deterministic per
/// seed. The emitted embedding of code `i` is `w_i + w̃_i`.
pub fn train_glove(
    x: &CooccurrenceMatrix,
    codes: Vec<String>,
    config: &GloveConfig,
) -> Result<GloveOutcome> {
    config.validate()?;
    if codes.len() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} codes vs co-occurrence dim {}",
            codes.len(),
            x.dim()
        )));
    }
    if x.nonzero_len() == 0 {
        return Err(Error::EmptyInput("co-occurrence matrix has no entries".into()));
    }
    let n = x.dim();
    let d = config.dim;
    let mut model = GloveModel::init(n, d, config.seed);
    // Adaptive per-parameter step scaling, accumulator seeded at 1.
    let mut sq_main = Matrix::new(n, d, vec![1.0; n * d])?;
    let mut sq_context = Matrix::new(n, d, vec![1.0; n * d])?;
    let mut sq_bias_main = vec![1.0f64; n];
    let mut sq_bias_context = vec![1.0f64; n];

    let mut entries = x.directed_entries();
    let mut losses = Vec::with_capacity(config.epochs + 1);
    losses.push(model.loss(x, config));

    for epoch in 0..config.epochs {
        let mut rng = substream(config.seed, "glove-epoch", epoch as u64);
        entries.shuffle(&mut rng);
        for &(i, j, count) in &entries {
            let f = GloveModel::weight(count, config.x_max, config.weight_exponent);
            let diff = crate::numerics::dot(model.main.row(i), model.context.row(j))
                + model.bias_main[i]
                + model.bias_context[j]
                - count.ln();
            let fdiff = f * diff;
            for k in 0..d {
                let wi = model.main.at(i, k);
                let wj = model.context.at(j, k);
                let gi = fdiff * wj;
                let gj = fdiff * wi;
                let si = sq_main.at(i, k);
                let sj = sq_context.at(j, k);
                model.main.set(i, k, wi - config.learning_rate * gi / si.sqrt());
                model
                    .context
                    .set(j, k, wj - config.learning_rate * gj / sj.sqrt());
                sq_main.set(i, k, si + gi * gi);
                sq_context.set(j, k, sj + gj * gj);
            }
            model.bias_main[i] -= config.learning_rate * fdiff / sq_bias_main[i].sqrt();
            model.bias_context[j] -= config.learning_rate * fdiff / sq_bias_context[j].sqrt();
            sq_bias_main[i] += fdiff * fdiff;
            sq_bias_context[j] += fdiff * fdiff;
        }
        losses.push(model.loss(x, config));
    }

    let emb = model.main.add(&model.context);
    if !emb.is_finite() {
        return Err(Error::NonFinite("trained embedding".into()));
    }
    Ok(GloveOutcome {
        embedding: EmbeddingMatrix::new(codes, emb)?,
        epoch_losses: losses,
    })
}

/// Convenience: co-occurrence plus training in one step, with codes taken
/// from the corpus vocabulary.
pub fn embed_corpus(corpus: &Corpus, config: &GloveConfig) -> Result<GloveOutcome> {
    let x = build_cooccurrence(corpus)?;
    let codes = corpus.vocabulary.iter().map(|c| c.id.clone()).collect();
    train_glove(&x, codes, config)
}
