//! Task backbones (feed-forward and recurrent) over pooled visit vectors,
//! the embedding parameterizations they train against, and the shared
//! early-stopped training loop used for pretraining and the direct /
//! transfer baselines.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Patient, Visit};
use crate::neural::{
    softmax_cross_entropy, Layer, Mode, OptimizerConfig, RecurrentCell, Sequential,
};
use crate::numerics::Matrix;
use crate::rng::{stream, substream};
use crate::{Error, Result};

pub const HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Mlp,
    Rnn,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Mlp => "mlp",
            BackboneKind::Rnn => "rnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(BackboneKind::Mlp),
            "rnn" => Ok(BackboneKind::Rnn),
            other => Err(Error::InvalidConfig(format!("unknown backbone '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Mortality,
    LengthOfStay,
}

impl TaskKind {
    pub fn n_classes(self) -> usize {
        match self {
            TaskKind::Mortality => 2,
            TaskKind::LengthOfStay => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Mortality => "mortality",
            TaskKind::LengthOfStay => "length_of_stay",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mortality" => Ok(TaskKind::Mortality),
            "length_of_stay" | "los" => Ok(TaskKind::LengthOfStay),
            other => Err(Error::InvalidConfig(format!("unknown task '{other}'"))),
        }
    }
}

/// Prediction model over per-visit pooled code embeddings.
///
/// Feed-forward: pooled input → dense 128 → rectifier → dense to logits;
/// mortality pools over the whole record, length of stay scores each visit.
/// Recurrent: per-visit vectors → tanh recurrent 128 → dense 128 →
/// rectifier → dense to logits; mortality reads the last hidden state.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub task: TaskKind,
    input_dim: usize,
    pub(crate) cell: Option<RecurrentCell>,
    pub(crate) head: Sequential,
}

impl Backbone {
    pub fn new(kind: BackboneKind, task: TaskKind, input_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "backbone-init");
        let (cell, head_in) = match kind {
            BackboneKind::Mlp => (None, input_dim),
            BackboneKind::Rnn => (Some(RecurrentCell::new(input_dim, HIDDEN, &mut rng)), HIDDEN),
        };
        let head = Sequential::new(vec![
            Layer::dense(head_in, HIDDEN, &mut rng),
            Layer::relu(),
            Layer::dense(HIDDEN, task.n_classes(), &mut rng),
        ]);
        Self {
            kind,
            task,
            input_dim,
            cell,
            head,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Per-patient labels: one for mortality, one per visit for length of
    /// stay.
    pub fn labels_of(&self, patient: &Patient) -> Vec<usize> {
        match self.task {
            TaskKind::Mortality => vec![patient.mortality as usize],
            TaskKind::LengthOfStay => patient.los_classes(),
        }
    }

    /// Forward over one patient's visit vectors (one row per visit);
    /// returns logits, one row per label.
    pub fn forward_patient(
        &mut self,
        zs: &Matrix,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Matrix> {
        match (self.kind, self.task) {
            (BackboneKind::Mlp, TaskKind::Mortality) => {
                // pool the whole record into one vector
                let mut pooled = Matrix::zeros(1, zs.cols());
                for i in 0..zs.rows() {
                    for (a, b) in pooled.row_mut(0).iter_mut().zip(zs.row(i)) {
                        *a += b;
                    }
                }
                self.head.forward(&pooled, mode, rng)
            }
            (BackboneKind::Mlp, TaskKind::LengthOfStay) => self.head.forward(zs, mode, rng),
            (BackboneKind::Rnn, _) => {
                let cell = self.cell.as_mut().expect("rnn backbone has a cell");
                let hs = cell.forward_seq(zs, mode)?;
                match self.task {
                    TaskKind::Mortality => {
                        let last = Matrix::from_rows(&[hs.row(hs.rows() - 1).to_vec()])?;
                        self.head.forward(&last, mode, rng)
                    }
                    TaskKind::LengthOfStay => self.head.forward(&hs, mode, rng),
                }
            }
        }
    }

    /// Backward pass matching [`Self::forward_patient`]; returns the
    /// gradient with respect to the visit vectors.
    pub fn backward_patient(&mut self, n_visits: usize, dlogits: &Matrix) -> Result<Matrix> {
        match (self.kind, self.task) {
            (BackboneKind::Mlp, TaskKind::Mortality) => {
                let dpooled = self.head.backward(dlogits)?;
                let mut dzs = Matrix::zeros(n_visits, dpooled.cols());
                for i in 0..n_visits {
                    dzs.row_mut(i).copy_from_slice(dpooled.row(0));
                }
                Ok(dzs)
            }
            (BackboneKind::Mlp, TaskKind::LengthOfStay) => self.head.backward(dlogits),
            (BackboneKind::Rnn, _) => {
                let dh_head = self.head.backward(dlogits)?;
                let cell = self.cell.as_mut().expect("rnn backbone has a cell");
                let dhs = match self.task {
                    TaskKind::Mortality => {
                        let mut m = Matrix::zeros(n_visits, HIDDEN);
                        m.row_mut(n_visits - 1).copy_from_slice(dh_head.row(0));
                        m
                    }
                    TaskKind::LengthOfStay => dh_head,
                };
                cell.backward_seq(&dhs)
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.head.zero_grads();
        if let Some(c) = &mut self.cell {
            c.zero_grads();
        }
    }

    /// Steps every backbone parameter.
    pub fn step(&mut self, config: &OptimizerConfig) -> Result<()> {
        self.head.step(config)?;
        if let Some(c) = &mut self.cell {
            c.step(config)?;
        }
        Ok(())
    }

    /// Steps only the final logit layer (the task head re-fit used when the
    /// backbone body stays frozen).
    pub fn step_output_layer(&mut self, config: &OptimizerConfig) -> Result<()> {
        if let Some(Layer::Dense(d)) = self.head.layers.last_mut() {
            return d.step(config);
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "backbone {} {} {}\n",
            self.kind.as_str(),
            self.task.as_str(),
            self.input_dim
        );
        if let Some(c) = &self.cell {
            s.push_str(&c.to_text());
        }
        s.push_str(&self.head.to_text());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing backbone header".into(),
        })?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("backbone") {
            return Err(Error::Parse {
                line: 1,
                msg: "expected 'backbone <kind> <task> <dim>'".into(),
            });
        }
        let kind = BackboneKind::parse(parts.next().unwrap_or(""))?;
        let task = TaskKind::parse(parts.next().unwrap_or(""))?;
        let input_dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                msg: "backbone input dim".into(),
            })?;
        let cell = match kind {
            BackboneKind::Rnn => Some(RecurrentCell::read(&mut lines)?),
            BackboneKind::Mlp => None,
        };
        let head = Sequential::read(&mut lines)?;
        Ok(Self {
            kind,
            task,
            input_dim,
            cell,
            head,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// How the code embeddings enter the model and what trains.
#[derive(Debug, Clone)]
pub enum EmbParam {
    /// `z = (counts·E)·W` with `E` frozen and the square map `W` trainable.
    Mapped {
        table: Matrix,
        w: Matrix,
        grad: Matrix,
        state: Matrix,
    },
    /// `z = counts·E` with the embedding rows themselves trainable.
    Table {
        table: Matrix,
        grad: Matrix,
        state: Matrix,
    },
    /// Frozen lookup table.
    Frozen { table: Matrix },
}

impl EmbParam {
    pub fn mapped(table: Matrix, w: Matrix) -> EmbParam {
        let d = w.rows();
        EmbParam::Mapped {
            table,
            w,
            grad: Matrix::zeros(d, d),
            state: Matrix::zeros(d, d),
        }
    }

    pub fn trainable(table: Matrix) -> EmbParam {
        let (n, d) = (table.rows(), table.cols());
        EmbParam::Table {
            table,
            grad: Matrix::zeros(n, d),
            state: Matrix::zeros(n, d),
        }
    }

    pub fn frozen(table: Matrix) -> EmbParam {
        EmbParam::Frozen { table }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbParam::Mapped { w, .. } => w.cols(),
            EmbParam::Table { table, .. } | EmbParam::Frozen { table } => table.cols(),
        }
    }

    /// Raw pooled code vector of a visit, before any mapping.
    fn pooled_raw(table: &Matrix, visit: &Visit) -> Vec<f64> {
        let mut u = vec![0.0; table.cols()];
        for &c in &visit.codes {
            for (a, b) in u.iter_mut().zip(table.row(c)) {
                *a += b;
            }
        }
        u
    }

    /// Visit vectors for a patient, one row per visit, plus the raw pooled
    /// vectors needed for the backward pass.
    pub fn patient_inputs(&self, patient: &Patient) -> (Matrix, Matrix) {
        let table = match self {
            EmbParam::Mapped { table, .. } => table,
            EmbParam::Table { table, .. } | EmbParam::Frozen { table } => table,
        };
        let raw_rows: Vec<Vec<f64>> = patient
            .visits
            .iter()
            .map(|v| Self::pooled_raw(table, v))
            .collect();
        let raw = Matrix::from_rows(&raw_rows).expect("patients have visits");
        let zs = match self {
            EmbParam::Mapped { w, .. } => raw.matmul(w),
            _ => raw.clone(),
        };
        (zs, raw)
    }

    /// Accumulates gradients from `dzs` (one row per visit).
    pub fn backward_patient(&mut self, patient: &Patient, raw: &Matrix, dzs: &Matrix) {
        match self {
            EmbParam::Mapped { grad, .. } => {
                // dW += rawᵀ · dzs
                let update = raw.transpose().matmul(dzs);
                *grad = grad.add(&update);
            }
            EmbParam::Table { grad, .. } => {
                for (vi, visit) in patient.visits.iter().enumerate() {
                    for &c in &visit.codes {
                        for (g, d) in grad.row_mut(c).iter_mut().zip(dzs.row(vi)) {
                            *g += d;
                        }
                    }
                }
            }
            EmbParam::Frozen { .. } => {}
        }
    }

    pub fn zero_grads(&mut self) {
        match self {
            EmbParam::Mapped { grad, .. } | EmbParam::Table { grad, .. } => {
                *grad = Matrix::zeros(grad.rows(), grad.cols());
            }
            EmbParam::Frozen { .. } => {}
        }
    }

    pub fn step(&mut self, config: &OptimizerConfig) -> Result<()> {
        match self {
            EmbParam::Mapped { w, grad, state, .. } => crate::neural::rmsprop_step(
                w.data_mut(),
                grad.data(),
                state.data_mut(),
                config,
            ),
            EmbParam::Table { table, grad, state } => crate::neural::rmsprop_step(
                table.data_mut(),
                grad.data(),
                state.data_mut(),
                config,
            ),
            EmbParam::Frozen { .. } => Ok(()),
        }
    }

    /// The effective per-code embedding table (`E·W` for the mapped form).
    pub fn effective_table(&self) -> Matrix {
        match self {
            EmbParam::Mapped { table, w, .. } => table.matmul(w),
            EmbParam::Table { table, .. } | EmbParam::Frozen { table } => table.clone(),
        }
    }

    pub fn mapping(&self) -> Option<&Matrix> {
        match self {
            EmbParam::Mapped { w, .. } => Some(w),
            _ => None,
        }
    }
}

/// Mean cross-entropy over a batch of patients, with gradients accumulated
/// into the backbone and embedding parameters when `train` is set.
pub fn task_batch(
    backbone: &mut Backbone,
    emb: &mut EmbParam,
    patients: &[&Patient],
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if patients.is_empty() {
        return Err(Error::EmptyInput("task batch".into()));
    }
    let mode = if train { Mode::Train } else { Mode::Eval };
    let scale = 1.0 / patients.len() as f64;
    let mut total = 0.0;
    for patient in patients {
        let (zs, raw) = emb.patient_inputs(patient);
        let logits = backbone.forward_patient(&zs, mode, rng)?;
        let labels = backbone.labels_of(patient);
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        total += loss * scale;
        if train {
            let dzs = backbone.backward_patient(patient.visits.len(), &dlogits.scale(scale))?;
            emb.backward_patient(patient, &raw, &dzs);
        }
    }
    Ok(total)
}

/// Per-patient mortality scores (probability of the positive class).
pub fn mortality_scores(
    backbone: &mut Backbone,
    table: &Matrix,
    corpus: &Corpus,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if backbone.task != TaskKind::Mortality {
        return Err(Error::InvalidConfig("backbone is not a mortality model".into()));
    }
    let emb = EmbParam::frozen(table.clone());
    let mut rng = stream(0, "eval-forward");
    let mut scores = Vec::with_capacity(corpus.n_patients());
    let mut labels = Vec::with_capacity(corpus.n_patients());
    for p in &corpus.patients {
        let (zs, _) = emb.patient_inputs(p);
        let logits = backbone.forward_patient(&zs, Mode::Eval, &mut rng)?;
        let row = logits.row(0);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e0 = (row[0] - max).exp();
        let e1 = (row[1] - max).exp();
        scores.push(e1 / (e0 + e1));
        labels.push(p.mortality);
    }
    Ok((scores, labels))
}

/// Per-patient length-of-stay class probabilities (rows per visit) and the
/// true classes.
pub fn los_probabilities(
    backbone: &mut Backbone,
    table: &Matrix,
    corpus: &Corpus,
) -> Result<Vec<(Matrix, Vec<usize>)>> {
    if backbone.task != TaskKind::LengthOfStay {
        return Err(Error::InvalidConfig("backbone is not a length-of-stay model".into()));
    }
    let emb = EmbParam::frozen(table.clone());
    let mut rng = stream(0, "eval-forward");
    let mut out = Vec::with_capacity(corpus.n_patients());
    for p in &corpus.patients {
        let (zs, _) = emb.patient_inputs(p);
        let logits = backbone.forward_patient(&zs, Mode::Eval, &mut rng)?;
        let mut probs = Matrix::zeros(logits.rows(), logits.cols());
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                probs.set(i, j, e / sum);
            }
        }
        out.push((probs, backbone.labels_of(p)));
    }
    Ok(out)
}

/// Validation metric for early stopping: AUC-PR for mortality, weighted
/// one-vs-one AUC-ROC for length of stay.
pub fn validation_metric(backbone: &mut Backbone, table: &Matrix, valid: &Corpus) -> Result<f64> {
    match backbone.task {
        TaskKind::Mortality => {
            let (scores, labels) = mortality_scores(backbone, table, valid)?;
            crate::eval::auc_pr(&scores, &labels)
        }
        TaskKind::LengthOfStay => {
            let per_patient = los_probabilities(backbone, table, valid)?;
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for (m, ls) in &per_patient {
                for i in 0..m.rows() {
                    rows.push(m.row(i).to_vec());
                }
                labels.extend_from_slice(ls);
            }
            crate::eval::ovo_weighted_auc(&Matrix::from_rows(&rows)?, &labels)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskTrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_backbone: bool,
    pub seed: u64,
}

impl Default for TaskTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            patience: 20,
            batch_size: 8,
            learning_rate: 1e-4,
            train_backbone: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: f64,
}

#[derive(Debug)]
pub struct TrainedTaskModel {
    pub backbone: Backbone,
    /// Effective embedding table of the best checkpoint.
    pub table: Matrix,
    pub best_val: f64,
    pub log: Vec<TaskEpoch>,
}

/// Early-stopped task training; returns the checkpoint with the best
/// validation metric (which may be the initial state).
pub fn train_task_model(
    mut backbone: Backbone,
    mut emb: EmbParam,
    train: &Corpus,
    valid: &Corpus,
    config: &TaskTrainConfig,
) -> Result<TrainedTaskModel> {
    if train.patients.is_empty() {
        return Err(Error::EmptyInput("labeled training split".into()));
    }
    let opt = OptimizerConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        ..OptimizerConfig::default()
    };
    let mut best_val = validation_metric(&mut backbone, &emb.effective_table(), valid)?;
    let mut best = (backbone.clone(), emb.effective_table());
    let mut since_best = 0usize;
    let mut log = Vec::new();
    let mut forward_rng = stream(config.seed, "task-forward");

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.n_patients()).collect();
        order.shuffle(&mut substream(config.seed, "task-epoch", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Patient> = chunk.iter().map(|&i| &train.patients[i]).collect();
            backbone.zero_grads();
            emb.zero_grads();
            let loss = task_batch(&mut backbone, &mut emb, &batch, true, &mut forward_rng)?;
            epoch_loss += loss;
            batches += 1;
            emb.step(&opt)?;
            if config.train_backbone {
                backbone.step(&opt)?;
            }
        }
        let val = validation_metric(&mut backbone, &emb.effective_table(), valid)?;
        log.push(TaskEpoch {
            epoch,
            loss: epoch_loss / batches.max(1) as f64,
            val_metric: val,
        });
        if val > best_val {
            best_val = val;
            best = (backbone.clone(), emb.effective_table());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok(TrainedTaskModel {
        backbone: best.0,
        table: best.1,
        best_val,
        log,
    })
}

/// Baseline: train a fresh backbone and a fresh embedding table end to end
/// on the labeled split.
pub fn train_backbone_direct(
    kind: BackboneKind,
    task: TaskKind,
    dim: usize,
    train: &Corpus,
    valid: &Corpus,
    config: &TaskTrainConfig,
) -> Result<TrainedTaskModel> {
    use rand::Rng;
    let mut rng = stream(config.seed, "direct-emb-init");
    let n = train.vocab_size();
    let bound = 1.0 / (dim as f64 + 1.0);
    let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-bound..bound)).collect();
    let table = Matrix::new(n, dim, data)?;
    let backbone = Backbone::new(kind, task, dim, config.seed);
    train_task_model(backbone, EmbParam::trainable(table), train, valid, config)
}

/// Baseline: keep the pretrained backbone, swap in the target embedding
/// table, and fine-tune the embeddings together with the backbone on the
/// labeled target split. With zero epochs this returns the pretrained head
/// applied to the fresh embeddings unchanged.
pub fn transfer_learning(
    pretrained: &Backbone,
    target_table: Matrix,
    train: &Corpus,
    valid: &Corpus,
    config: &TaskTrainConfig,
) -> Result<TrainedTaskModel> {
    if target_table.cols() != pretrained.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding dim {} vs backbone input {}",
            target_table.cols(),
            pretrained.input_dim()
        )));
    }
    train_task_model(
        pretrained.clone(),
        EmbParam::trainable(target_table),
        train,
        valid,
        config,
    )
}
