//! Code-level refinement of the mapping: a discriminator teacher aligns the
//! mapped target embedding distribution with the source distribution while
//! the frozen backbone's task loss keeps the mapping useful, with the two
//! teachers combined as `L_W = L_cls + α·L_G`. The discriminator takes five
//! updates for every mapping update; early stopping returns the mapping
//! with the best validation metric seen.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::embedding::EmbeddingMatrix;
use crate::neural::{sigmoid, Layer, Mode, OptimizerConfig, Sequential};
use crate::numerics::Matrix;
use crate::rng::{stream, substream};
use crate::{Error, Result};

mod backbone;

pub use backbone::{
    los_probabilities, mortality_scores, task_batch, train_backbone_direct, train_task_model,
    transfer_learning, validation_metric, Backbone, BackboneKind, EmbParam, TaskEpoch, TaskKind,
    TaskTrainConfig, TrainedTaskModel, HIDDEN,
};

const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary discriminator: three dense layers of width 128 with leaky
/// rectifiers and dropout 0.1 between them, scalar sigmoid output. Source
/// embeddings carry label 1, mapped target embeddings label 0.
#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Sequential,
}

impl Discriminator {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "discriminator-init");
        let net = Sequential::new(vec![
            Layer::dense(input_dim, 128, &mut rng),
            Layer::leaky_relu(0.01),
            Layer::dropout(0.1),
            Layer::dense(128, 128, &mut rng),
            Layer::leaky_relu(0.01),
            Layer::dropout(0.1),
            Layer::dense(128, 1, &mut rng),
        ]);
        Self { net }
    }

    /// Probability that each input row comes from the source distribution.
    pub fn probs(&mut self, x: &Matrix, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let logits = self.net.forward(x, mode, rng)?;
        Ok((0..logits.rows()).map(|i| sigmoid(logits.at(i, 0))).collect())
    }

    fn zero_grads(&mut self) {
        self.net.zero_grads();
    }

    fn backward(&mut self, dlogits: &Matrix) -> Result<Matrix> {
        self.net.backward(dlogits)
    }

    fn step(&mut self, config: &OptimizerConfig) -> Result<()> {
        self.net.step(config)
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn param(&self, i: usize) -> f64 {
        self.net.param(i)
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        self.net.set_param(i, v)
    }

    pub fn grad(&self, i: usize) -> f64 {
        self.net.grad(i)
    }
}

/// Discriminator loss on paired batches of probabilities:
/// `mean(−log p_source − log(1 − p_mapped))`, with probabilities clamped to
/// `[1e-7, 1−1e-7]` before the logs.
pub fn adversarial_loss_from_probs(p_source: &[f64], p_mapped: &[f64]) -> Result<f64> {
    if p_source.is_empty() || p_source.len() != p_mapped.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} source vs {} mapped probabilities",
            p_source.len(),
            p_mapped.len()
        )));
    }
    let n = p_source.len() as f64;
    let mut loss = 0.0;
    for (&ps, &pt) in p_source.iter().zip(p_mapped) {
        loss += -clamp_prob(ps).ln() - (1.0 - clamp_prob(pt)).ln();
    }
    Ok(loss / n)
}

/// Generator loss on mapped-target probabilities: `mean(−log p_mapped)`.
pub fn generator_loss_from_probs(p_mapped: &[f64]) -> Result<f64> {
    if p_mapped.is_empty() {
        return Err(Error::EmptyInput("mapped probabilities".into()));
    }
    let n = p_mapped.len() as f64;
    Ok(p_mapped.iter().map(|&p| -clamp_prob(p).ln()).sum::<f64>() / n)
}

/// Discriminator adversarial loss on embedding batches (pure evaluation,
/// dropout inactive): source rows against target rows mapped through `w`.
pub fn discriminator_loss(
    d: &mut Discriminator,
    source_batch: &Matrix,
    target_batch: &Matrix,
    w: &Matrix,
) -> Result<f64> {
    if source_batch.rows() == 0 || target_batch.rows() == 0 {
        return Err(Error::EmptyInput("adversarial batch".into()));
    }
    let mut rng = stream(0, "disc-eval");
    let p_s = d.probs(source_batch, Mode::Eval, &mut rng)?;
    let p_t = d.probs(&target_batch.matmul(w), Mode::Eval, &mut rng)?;
    adversarial_loss_from_probs(&p_s, &p_t)
}

/// Generator adversarial loss on an embedding batch (pure evaluation).
pub fn generator_loss(d: &mut Discriminator, target_batch: &Matrix, w: &Matrix) -> Result<f64> {
    if target_batch.rows() == 0 {
        return Err(Error::EmptyInput("adversarial batch".into()));
    }
    let mut rng = stream(0, "disc-eval");
    let p_t = d.probs(&target_batch.matmul(w), Mode::Eval, &mut rng)?;
    generator_loss_from_probs(&p_t)
}

/// Mean softmax cross-entropy of the backbone on the given patients with
/// embeddings entering as `E_T·W` (pure evaluation).
pub fn classification_loss(
    backbone: &mut Backbone,
    patients: &[&crate::corpus::Patient],
    e_t: &EmbeddingMatrix,
    w: &Matrix,
) -> Result<f64> {
    let mut emb = EmbParam::frozen(e_t.matrix().matmul(w));
    let mut rng = stream(0, "cls-eval");
    task_batch(backbone, &mut emb, patients, false, &mut rng)
}

/// Jensen-Shannon divergence in nats:
/// `½·KL(P‖M) + ½·KL(Q‖M)` with `M = (P+Q)/2`; `0·log(0/x)` is 0.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidDistribution(format!(
            "support sizes {} vs {}",
            p.len(),
            q.len()
        )));
    }
    for dist in [p, q] {
        if dist.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
        }
    }
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&ai, &bi)| {
                if ai == 0.0 {
                    0.0
                } else {
                    ai * (ai / ((ai + bi) / 2.0)).ln()
                }
            })
            .sum()
    };
    Ok(0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p))
}

#[derive(Debug, Clone)]
pub struct RefineConfig {
    /// Weight of the generator (distribution) teacher in `L_W`.
    pub alpha: f64,
    /// Discriminator updates per mapping update.
    pub d_steps_per_w_step: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Also re-fit the backbone's output layer during mapping updates.
    pub finetune_head: bool,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            d_steps_per_w_step: 5,
            epochs: 150,
            early_stop_patience: 20,
            batch_size: 8,
            learning_rate: 1e-4,
            finetune_head: false,
            seed: 0,
        }
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_cls: f64,
    pub loss_w: f64,
    pub val_metric: f64,
}

/// Training log as CSV: `epoch,l_d,l_g,l_cls,l_w,val_metric`.
pub fn training_log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,l_d,l_g,l_cls,l_w,val_metric\n");
    for r in log {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.loss_d, r.loss_g, r.loss_cls, r.loss_w, r.val_metric
        ));
    }
    s
}

/// Empirical divergence estimate implied by a discriminator loss value:
/// `ln 2 − L_D/2`, clamped at zero (an optimal discriminator attains
/// `L_D = 2·ln 2 − 2·JSD`).
pub fn jsd_estimate_from_discriminator_loss(loss_d: f64) -> f64 {
    (2f64.ln() - loss_d / 2.0).max(0.0)
}

#[derive(Debug)]
pub struct RefineOutcome {
    /// The mapping with the best validation metric (may be the input).
    pub mapping: Matrix,
    /// The backbone at the best checkpoint; differs from the input only
    /// when the output layer was re-fit.
    pub backbone: Backbone,
    /// The mapping after the last epoch, regardless of validation.
    pub final_mapping: Matrix,
    pub best_val: f64,
    pub log: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

fn sample_rows(table: &Matrix, batch: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..batch)
        .map(|_| table.row(rng.random_range(0..table.rows())).to_vec())
        .collect();
    Matrix::from_rows(&rows).expect("batch >= 1")
}

/// Fine-tunes the mapping `w0` on the labeled target split with the
/// teacher-student objective. Per batch the discriminator takes
/// `d_steps_per_w_step` updates on freshly sampled embedding rows, then the
/// mapping (and, optionally, the backbone's output layer) takes one update
/// of `L_cls + α·L_G`. Validation is evaluated each epoch and the best
/// checkpoint is returned; the initial state counts as a checkpoint.
///
/// All adversarial randomness lives on streams separate from the task
/// batches, so with `alpha = 0` the mapping trajectory is bit-identical to
/// pure task fine-tuning.
pub fn refine_mapping(
    w0: &Matrix,
    e_t: &EmbeddingMatrix,
    e_s: &EmbeddingMatrix,
    backbone: &Backbone,
    train: &Corpus,
    valid: &Corpus,
    config: &RefineConfig,
) -> Result<RefineOutcome> {
    let d = e_t.dim();
    if e_s.dim() != d || w0.rows() != d || w0.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "embedding dims {} / {} vs mapping {}x{}",
            d,
            e_s.dim(),
            w0.rows(),
            w0.cols()
        )));
    }
    if backbone.input_dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "backbone input {} vs embedding dim {d}",
            backbone.input_dim()
        )));
    }
    if config.alpha < 0.0 {
        return Err(Error::InvalidConfig("alpha must be >= 0".into()));
    }
    if config.early_stop_patience < 1 {
        return Err(Error::InvalidConfig("patience must be >= 1".into()));
    }
    let mut warnings = Vec::new();
    if train.patients.is_empty() {
        warnings.push(
            "no labeled target patients: refining with the adversarial teacher only".to_string(),
        );
    }

    let opt = OptimizerConfig {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        ..OptimizerConfig::default()
    };
    let mut disc = Discriminator::new(d, config.seed);
    let mut emb = EmbParam::mapped(e_t.matrix().clone(), w0.clone());
    let mut model = backbone.clone();

    let eval_val = |model: &mut Backbone, emb: &EmbParam| -> Result<f64> {
        validation_metric(model, &emb.effective_table(), valid)
    };
    let mut best_val = eval_val(&mut model, &emb)?;
    let mut best = (
        emb.mapping().expect("mapped parameterization").clone(),
        model.clone(),
    );
    let mut since_best = 0usize;
    let mut log = Vec::new();
    let mut task_rng = stream(config.seed, "refine-task-forward");

    for epoch in 1..=config.epochs {
        let mut adv_rng = substream(config.seed, "refine-adv", epoch as u64);
        let mut drop_rng = substream(config.seed, "refine-dropout", epoch as u64);
        let batches: Vec<Vec<usize>> = if train.patients.is_empty() {
            // adversarial-only refinement: one batch slot per vocab chunk
            let n = (e_t.len() / config.batch_size).max(1);
            (0..n).map(|_| Vec::new()).collect()
        } else {
            use rand::seq::SliceRandom;
            let mut order: Vec<usize> = (0..train.n_patients()).collect();
            order.shuffle(&mut substream(config.seed, "refine-task", epoch as u64));
            order
                .chunks(config.batch_size)
                .map(|c| c.to_vec())
                .collect()
        };

        let (mut sum_d, mut n_d) = (0.0, 0usize);
        let (mut sum_g, mut sum_cls, mut sum_w, mut n_w) = (0.0, 0.0, 0.0, 0usize);
        for batch_idx in &batches {
            // Teacher A: discriminator updates on fresh samples.
            for _ in 0..config.d_steps_per_w_step {
                let src = sample_rows(e_s.matrix(), config.batch_size, &mut adv_rng);
                let tgt_raw = sample_rows(e_t.matrix(), config.batch_size, &mut adv_rng);
                let w_now = emb.mapping().expect("mapped parameterization");
                let tgt = tgt_raw.matmul(w_now);
                disc.zero_grads();
                let p_s = disc.probs(&src, Mode::Train, &mut drop_rng)?;
                let mut dlogit_s = Matrix::zeros(p_s.len(), 1);
                for (i, &p) in p_s.iter().enumerate() {
                    dlogit_s.set(i, 0, (p - 1.0) / p_s.len() as f64);
                }
                disc.backward(&dlogit_s)?;
                let p_t = disc.probs(&tgt, Mode::Train, &mut drop_rng)?;
                let mut dlogit_t = Matrix::zeros(p_t.len(), 1);
                for (i, &p) in p_t.iter().enumerate() {
                    dlogit_t.set(i, 0, p / p_t.len() as f64);
                }
                disc.backward(&dlogit_t)?;
                disc.step(&opt)?;
                sum_d += adversarial_loss_from_probs(&p_s, &p_t)?;
                n_d += 1;
            }

            // Student update: task teacher plus α-weighted distribution
            // teacher.
            emb.zero_grads();
            model.zero_grads();
            let mut l_cls = 0.0;
            if !batch_idx.is_empty() {
                let patients: Vec<&crate::corpus::Patient> =
                    batch_idx.iter().map(|&i| &train.patients[i]).collect();
                l_cls = task_batch(&mut model, &mut emb, &patients, true, &mut task_rng)?;
            }
            let mut l_g = 0.0;
            if config.alpha > 0.0 {
                let tgt_raw = sample_rows(e_t.matrix(), config.batch_size, &mut adv_rng);
                let w_now = emb.mapping().expect("mapped parameterization");
                let mapped = tgt_raw.matmul(w_now);
                disc.zero_grads();
                let p_t = disc.probs(&mapped, Mode::Train, &mut drop_rng)?;
                l_g = generator_loss_from_probs(&p_t)?;
                let mut dlogit = Matrix::zeros(p_t.len(), 1);
                for (i, &p) in p_t.iter().enumerate() {
                    dlogit.set(i, 0, config.alpha * (p - 1.0) / p_t.len() as f64);
                }
                let dx = disc.backward(&dlogit)?;
                // route the input gradient into the mapping: dW += uᵀ·dx
                if let EmbParam::Mapped { grad, .. } = &mut emb {
                    *grad = grad.add(&tgt_raw.transpose().matmul(&dx));
                }
            }
            emb.step(&opt)?;
            if config.finetune_head {
                model.step_output_layer(&opt)?;
            }
            sum_g += l_g;
            sum_cls += l_cls;
            sum_w += l_cls + config.alpha * l_g;
            n_w += 1;
        }

        let val = eval_val(&mut model, &emb)?;
        log.push(EpochRecord {
            epoch,
            loss_d: if n_d > 0 { sum_d / n_d as f64 } else { 0.0 },
            loss_g: sum_g / n_w.max(1) as f64,
            loss_cls: sum_cls / n_w.max(1) as f64,
            loss_w: sum_w / n_w.max(1) as f64,
            val_metric: val,
        });
        if val > best_val {
            best_val = val;
            best = (
                emb.mapping().expect("mapped parameterization").clone(),
                model.clone(),
            );
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }

    Ok(RefineOutcome {
        mapping: best.0,
        backbone: best.1,
        final_mapping: emb.mapping().expect("mapped parameterization").clone(),
        best_val,
        log,
        warnings,
    })
}

/// Classification loss and its analytic gradient with respect to the
/// mapping. The backbone is used read-only; gradients flow to `W` alone.
pub fn classification_gradient_w(
    backbone: &Backbone,
    patients: &[&crate::corpus::Patient],
    e_t: &EmbeddingMatrix,
    w: &Matrix,
) -> Result<(f64, Matrix)> {
    let mut model = backbone.clone();
    let mut emb = EmbParam::mapped(e_t.matrix().clone(), w.clone());
    let mut rng = stream(0, "cls-grad");
    model.zero_grads();
    let loss = task_batch(&mut model, &mut emb, patients, true, &mut rng)?;
    match emb {
        EmbParam::Mapped { grad, .. } => Ok((loss, grad)),
        _ => unreachable!(),
    }
}

/// Generator loss with dropout active (mask drawn from `rng`), as seen by
/// one training step.
pub fn generator_loss_with_dropout(
    d: &mut Discriminator,
    target_rows: &Matrix,
    w: &Matrix,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let p_t = d.probs(&target_rows.matmul(w), Mode::Train, rng)?;
    generator_loss_from_probs(&p_t)
}

/// Generator loss and its analytic gradient with respect to the mapping,
/// under the dropout mask drawn from `rng`. The discriminator parameters
/// are not updated.
pub fn generator_gradient_w(
    d: &mut Discriminator,
    target_rows: &Matrix,
    w: &Matrix,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Matrix)> {
    let mapped = target_rows.matmul(w);
    d.zero_grads();
    let p_t = d.probs(&mapped, Mode::Train, rng)?;
    let loss = generator_loss_from_probs(&p_t)?;
    let mut dlogit = Matrix::zeros(p_t.len(), 1);
    for (i, &p) in p_t.iter().enumerate() {
        dlogit.set(i, 0, (p - 1.0) / p_t.len() as f64);
    }
    let dx = d.backward(&dlogit)?;
    d.zero_grads();
    Ok((loss, target_rows.transpose().matmul(&dx)))
}

#[cfg(test)]
mod tests;
