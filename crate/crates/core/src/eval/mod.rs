//! Mapping-accuracy and task metrics, bootstrap uncertainty, and the
//! benchmark harness.

use crate::corpus::GroundTruthMap;
use crate::embedding::EmbeddingMatrix;
use crate::numerics::{dot, norm, Matrix};
use crate::{Error, Result};

mod benchmark;

pub use benchmark::{run_benchmark, BenchmarkCell, BenchmarkConfig, BenchmarkTable, Method};

/// Mapping accuracy against a ground-truth oracle.
#[derive(Debug, Clone)]
pub struct MappingReport {
    /// Mean cosine between mapped target embeddings and their true source
    /// embeddings, over all truth pairs.
    pub similarity: f64,
    /// Fraction of target codes with a true partner in the top-k source
    /// neighbors.
    pub hit_at_k: f64,
    pub k: usize,
    /// Per-pair rows: (target id, source id, cosine, rank of source).
    pub detail: Vec<(String, String, f64, usize)>,
}

impl MappingReport {
    /// CSV with one row per truth pair plus a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("target,source,cosine,rank\n");
        for (t, src, c, r) in &self.detail {
            s.push_str(&format!("{t},{src},{c},{r}\n"));
        }
        s
    }
}

fn mapped_target_rows(w: &Matrix, e_t: &EmbeddingMatrix) -> Matrix {
    e_t.matrix().matmul(w)
}

fn lookup(emb: &EmbeddingMatrix, id: &str) -> Result<usize> {
    emb.index_of(id).ok_or_else(|| Error::UnknownCode(id.to_string()))
}

/// Mean cosine between `e_t·W` and the true source embedding over all
/// truth pairs.
pub fn mapping_similarity(
    w: &Matrix,
    e_t: &EmbeddingMatrix,
    e_s: &EmbeddingMatrix,
    truth: &GroundTruthMap,
) -> Result<f64> {
    if truth.pairs.is_empty() {
        return Err(Error::EmptyInput("ground-truth map".into()));
    }
    let mapped = mapped_target_rows(w, e_t);
    let mut total = 0.0;
    for (t, s) in &truth.pairs {
        let ti = lookup(e_t, t)?;
        let si = lookup(e_s, s)?;
        let mt = mapped.row(ti);
        let vs = e_s.vector(si);
        let denom = norm(mt) * norm(vs);
        if denom <= 0.0 || !denom.is_finite() {
            return Err(Error::DegenerateMapping(format!(
                "zero-norm mapped embedding for code {t}"
            )));
        }
        total += dot(mt, vs) / denom;
    }
    Ok(total / truth.pairs.len() as f64)
}

/// For every distinct target code in the truth map, ranks all source codes
/// by cosine to the mapped embedding; a hit is any true partner inside the
/// top `k`. Ties in similarity break toward the lower source index.
pub fn hit_at_k(
    w: &Matrix,
    e_t: &EmbeddingMatrix,
    e_s: &EmbeddingMatrix,
    truth: &GroundTruthMap,
    k: usize,
) -> Result<MappingReport> {
    if truth.pairs.is_empty() {
        return Err(Error::EmptyInput("ground-truth map".into()));
    }
    if k < 1 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let mapped = mapped_target_rows(w, e_t);
    let source_norms: Vec<f64> = (0..e_s.len()).map(|i| norm(e_s.vector(i))).collect();
    if source_norms.iter().any(|&n| n <= 0.0) {
        return Err(Error::DegenerateMapping("zero-norm source embedding".into()));
    }
    let mut hits = 0usize;
    let mut detail = Vec::new();
    let targets = truth.targets();
    for t in &targets {
        let ti = lookup(e_t, t)?;
        let mt = mapped.row(ti);
        let nt = norm(mt);
        if nt <= 0.0 || !nt.is_finite() {
            return Err(Error::DegenerateMapping(format!(
                "zero-norm mapped embedding for code {t}"
            )));
        }
        let mut sims: Vec<(usize, f64)> = (0..e_s.len())
            .map(|j| (j, dot(mt, e_s.vector(j)) / (nt * source_norms[j])))
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let rank_of = |j: usize| sims.iter().position(|&(i, _)| i == j).unwrap();
        let partners = truth.sources_of(t);
        let mut best_rank = usize::MAX;
        let mut best_pair = None;
        for s in &partners {
            let si = lookup(e_s, s)?;
            let r = rank_of(si);
            if r < best_rank {
                best_rank = r;
                best_pair = Some((s.to_string(), sims[r].1));
            }
        }
        if best_rank < k {
            hits += 1;
        }
        if let Some((sid, cos)) = best_pair {
            detail.push((t.to_string(), sid, cos, best_rank + 1));
        }
    }
    Ok(MappingReport {
        similarity: mapping_similarity(w, e_t, e_s, truth)?,
        hit_at_k: hits as f64 / targets.len() as f64,
        k,
        detail,
    })
}

fn split_classes(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    Ok((pos, neg))
}

/// Area under the ROC curve: the Mann-Whitney statistic with half credit
/// for ties, computed from average ranks.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = split_classes(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average 1-based rank of the tied block [i, j]
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    let n = neg as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision-recall step curve by descending-score sweep;
/// tied scores advance together.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _neg) = split_classes(scores, labels)?;
    if pos == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let p = pos as f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        let recall = tp / p;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

/// Per-class F1 weighted by true-class support.
pub fn weighted_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("predictions".into()));
    }
    let n_classes = pred.iter().chain(truth).max().unwrap() + 1;
    let mut tp = vec![0.0; n_classes];
    let mut fp = vec![0.0; n_classes];
    let mut fu = vec![0.0; n_classes];
    let mut support = vec![0.0; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        support[t] += 1.0;
        if p == t {
            tp[t] += 1.0;
        } else {
            fp[p] += 1.0;
            fu[t] += 1.0;
        }
    }
    let total: f64 = support.iter().sum();
    let mut f1 = 0.0;
    for c in 0..n_classes {
        if support[c] == 0.0 {
            continue;
        }
        let denom = 2.0 * tp[c] + fp[c] + fu[c];
        let class_f1 = if denom > 0.0 { 2.0 * tp[c] / denom } else { 0.0 };
        f1 += class_f1 * support[c] / total;
    }
    Ok(f1)
}

/// One-vs-one ROC-AUC averaged over unordered class pairs, each pair
/// weighted by its prevalence. `probs` holds one row per sample, one
/// column per class.
pub fn ovo_weighted_auc(probs: &Matrix, truth: &[usize]) -> Result<f64> {
    if probs.rows() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} prob rows vs {} labels",
            probs.rows(),
            truth.len()
        )));
    }
    let n_classes = probs.cols();
    let mut present: Vec<usize> = Vec::new();
    for c in 0..n_classes {
        if truth.iter().any(|&t| t == c) {
            present.push(c);
        }
    }
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    let mut weighted = 0.0;
    let mut weight_total = 0.0;
    for (ai, &a) in present.iter().enumerate() {
        for &b in &present[ai + 1..] {
            let idx: Vec<usize> = (0..truth.len())
                .filter(|&i| truth[i] == a || truth[i] == b)
                .collect();
            let auc_ab = {
                let scores: Vec<f64> = idx.iter().map(|&i| probs.at(i, a)).collect();
                let labels: Vec<bool> = idx.iter().map(|&i| truth[i] == a).collect();
                auc_roc(&scores, &labels)?
            };
            let auc_ba = {
                let scores: Vec<f64> = idx.iter().map(|&i| probs.at(i, b)).collect();
                let labels: Vec<bool> = idx.iter().map(|&i| truth[i] == b).collect();
                auc_roc(&scores, &labels)?
            };
            let pair_auc = 0.5 * (auc_ab + auc_ba);
            let w = idx.len() as f64;
            weighted += pair_auc * w;
            weight_total += w;
        }
    }
    Ok(weighted / weight_total)
}

/// Bootstrap mean and standard deviation of a metric over `n` resamples
/// with replacement at the item (patient) level. Replicates on which the
/// metric fails (e.g. a single-class resample) are redrawn a bounded number
/// of times; if more than half of the replicates fail, the whole bootstrap
/// errors. Deterministic per seed; each replicate draws from its own
/// derived stream.
pub fn bootstrap<T, F>(metric: F, data: &[T], n: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&[&T]) -> Result<f64>,
{
    use rand::Rng;
    if data.is_empty() {
        return Err(Error::EmptyInput("bootstrap data".into()));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("bootstrap n must be >= 1".into()));
    }
    const MAX_REDRAWS: usize = 100;
    let mut values = Vec::with_capacity(n);
    let mut failures = 0usize;
    for rep in 0..n {
        let mut rng = crate::rng::substream(seed, "bootstrap", rep as u64);
        let mut value = None;
        for _ in 0..MAX_REDRAWS {
            let sample: Vec<&T> = (0..data.len())
                .map(|_| &data[rng.random_range(0..data.len())])
                .collect();
            match metric(&sample) {
                Ok(v) => {
                    value = Some(v);
                    break;
                }
                Err(_) => {
                    failures += 1;
                    if failures > n / 2 {
                        return Err(Error::BootstrapFailure {
                            failed: failures,
                            total: n,
                        });
                    }
                }
            }
        }
        match value {
            Some(v) => values.push(v),
            None => {
                return Err(Error::BootstrapFailure {
                    failed: failures,
                    total: n,
                })
            }
        }
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Ok((mean, var.sqrt()))
}

/// Task metrics with bootstrap uncertainty.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub rows: Vec<TaskMetricRow>,
}

#[derive(Debug, Clone)]
pub struct TaskMetricRow {
    pub task: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

impl TaskReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,metric,mean,std\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.task, r.metric, r.mean, r.std));
        }
        s
    }
}

/// Bootstrap AUC-ROC and AUC-PR for per-patient mortality scores.
pub fn mortality_report(
    scores: &[f64],
    labels: &[bool],
    n_bootstrap: usize,
    seed: u64,
) -> Result<TaskReport> {
    let data: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    let unzip = |sample: &[&(f64, bool)]| -> (Vec<f64>, Vec<bool>) {
        (
            sample.iter().map(|p| p.0).collect(),
            sample.iter().map(|p| p.1).collect(),
        )
    };
    let (roc_mean, roc_std) = bootstrap(
        |sample| {
            let (s, l) = unzip(sample);
            auc_roc(&s, &l)
        },
        &data,
        n_bootstrap,
        seed,
    )?;
    let (pr_mean, pr_std) = bootstrap(
        |sample| {
            let (s, l) = unzip(sample);
            auc_pr(&s, &l)
        },
        &data,
        n_bootstrap,
        seed.wrapping_add(1),
    )?;
    Ok(TaskReport {
        rows: vec![
            TaskMetricRow {
                task: "mortality".into(),
                metric: "auc_roc".into(),
                mean: roc_mean,
                std: roc_std,
            },
            TaskMetricRow {
                task: "mortality".into(),
                metric: "auc_pr".into(),
                mean: pr_mean,
                std: pr_std,
            },
        ],
    })
}

/// Bootstrap weighted one-vs-one AUC and weighted F1 for per-visit
/// length-of-stay predictions, resampled at the patient level. Each data
/// item is one patient's (probability rows, labels).
pub fn los_report(
    per_patient: &[(Matrix, Vec<usize>)],
    n_bootstrap: usize,
    seed: u64,
) -> Result<TaskReport> {
    let flatten = |sample: &[&(Matrix, Vec<usize>)]| -> (Matrix, Vec<usize>, Vec<usize>) {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (m, ls) in sample {
            for i in 0..m.rows() {
                rows.push(m.row(i).to_vec());
            }
            labels.extend_from_slice(ls);
        }
        let probs = Matrix::from_rows(&rows).expect("non-empty sample");
        let preds: Vec<usize> = (0..probs.rows())
            .map(|i| {
                let row = probs.row(i);
                let mut best = (f64::NEG_INFINITY, 0usize);
                for (c, &v) in row.iter().enumerate() {
                    if v > best.0 {
                        best = (v, c);
                    }
                }
                best.1
            })
            .collect();
        (probs, labels, preds)
    };
    let (auc_mean, auc_std) = bootstrap(
        |sample| {
            let (probs, labels, _) = flatten(sample);
            ovo_weighted_auc(&probs, &labels)
        },
        per_patient,
        n_bootstrap,
        seed,
    )?;
    let (f1_mean, f1_std) = bootstrap(
        |sample| {
            let (_, labels, preds) = flatten(sample);
            weighted_f1(&preds, &labels)
        },
        per_patient,
        n_bootstrap,
        seed.wrapping_add(1),
    )?;
    Ok(TaskReport {
        rows: vec![
            TaskMetricRow {
                task: "length_of_stay".into(),
                metric: "ovo_auc_roc".into(),
                mean: auc_mean,
                std: auc_std,
            },
            TaskMetricRow {
                task: "length_of_stay".into(),
                metric: "weighted_f1".into(),
                mean: f1_mean,
                std: f1_std,
            },
        ],
    })
}

/// Exhaustive positive-negative pair counting; the brute-force ROC oracle
/// used to cross-check [`auc_roc`].
pub fn auc_roc_pair_counting(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = split_classes(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut wins = 0.0;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] {
                continue;
            }
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn auc_roc_examples() {
        // perfectly separated
        let auc = auc_roc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        // reversed
        let auc = auc_roc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 0.0);
        // pair counting by hand: (0.9,1),(0.8,0),(0.7,1),(0.6,0) -> 3 of 4 pairs
        let auc = auc_roc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.75);
        assert!(auc_roc(&[0.5, 0.6], &[true, true]).is_err());
    }

    #[test]
    fn auc_roc_matches_pair_counting_oracle_exactly() {
        let mut rng = stream(3, "auc-oracle");
        for case in 0..100 {
            let n = rng.random_range(4..=30);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..10) as f64) / 10.0)
                .collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = auc_roc(&scores, &labels).unwrap();
            let brute = auc_roc_pair_counting(&scores, &labels).unwrap();
            assert_eq!(fast, brute, "case {case}: {fast} vs {brute}");
        }
    }

    #[test]
    fn auc_pr_basics() {
        let pr = auc_pr(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(pr, 1.0);
        assert!(auc_pr(&[0.5, 0.6], &[false, false]).is_err());
        // hand sweep: scores desc 0.9(+), 0.8(−), 0.7(+), 0.6(−)
        // r=0.5 p=1.0 → area 0.5; r=0.5 p=2/3 → 0; r=1 p=2/3 → 1/3; r=1 → 0
        let pr = auc_pr(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((pr - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn weighted_f1_cases() {
        assert_eq!(weighted_f1(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        // constant predictor on balanced 2-class data:
        // class 0: precision 0.5, recall 1 → F1 = 2/3; class 1: F1 = 0
        let f1 = weighted_f1(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert!((f1 - (0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!(weighted_f1(&[], &[]).is_err());
    }

    #[test]
    fn ovo_auc_matches_exhaustive_pairwise_oracle() {
        let mut rng = stream(7, "ovo");
        let n = 60;
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut rows = Vec::new();
        for i in 0..n {
            let mut row: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.01).collect();
            row[truth[i]] += 0.4; // informative but noisy
            let s: f64 = row.iter().sum();
            rows.push(row.into_iter().map(|v| v / s).collect::<Vec<f64>>());
        }
        let probs = Matrix::from_rows(&rows).unwrap();
        let fast = ovo_weighted_auc(&probs, &truth).unwrap();

        // independent oracle: direct double loop over ordered class pairs
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for a in 0..3usize {
            for b in (a + 1)..3 {
                let idx: Vec<usize> = (0..n).filter(|&i| truth[i] == a || truth[i] == b).collect();
                let mut pair = 0.0;
                for &(pos, col) in &[(a, a), (b, b)] {
                    let mut wins = 0.0;
                    let mut total = 0.0;
                    for &i in &idx {
                        if truth[i] != pos {
                            continue;
                        }
                        for &j in &idx {
                            if truth[j] == pos {
                                continue;
                            }
                            total += 1.0;
                            if probs.at(i, col) > probs.at(j, col) {
                                wins += 1.0;
                            } else if probs.at(i, col) == probs.at(j, col) {
                                wins += 0.5;
                            }
                        }
                    }
                    pair += 0.5 * wins / total;
                }
                acc += pair * idx.len() as f64;
                wsum += idx.len() as f64;
            }
        }
        let oracle = acc / wsum;
        assert!((fast - oracle).abs() < 1e-12, "{fast} vs {oracle}");
    }

    #[test]
    fn ovo_rejects_single_class() {
        let probs = Matrix::from_rows(&[vec![0.6, 0.4], vec![0.7, 0.3]]).unwrap();
        assert!(ovo_weighted_auc(&probs, &[0, 0]).is_err());
    }

    #[test]
    fn bootstrap_constant_metric_has_zero_std() {
        let data: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let (mean, std) = bootstrap(|_| Ok(0.7), &data, 200, 5).unwrap();
        assert!((mean - 0.7).abs() < 1e-12);
        assert!(std < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let data: Vec<(f64, bool)> = (0..20)
            .map(|i| (i as f64 / 20.0 + if i % 3 == 0 { 0.3 } else { 0.0 }, i % 2 == 0))
            .collect();
        let run = || {
            bootstrap(
                |sample| {
                    let s: Vec<f64> = sample.iter().map(|p| p.0).collect();
                    let l: Vec<bool> = sample.iter().map(|p| p.1).collect();
                    auc_roc(&s, &l)
                },
                &data,
                300,
                11,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    /// Second implementation straight from the definition, with the same
    /// per-replicate stream derivation; means must agree to the bit.
    #[test]
    fn bootstrap_matches_independent_resampling_oracle() {
        let data: Vec<(f64, bool)> = vec![
            (0.9, true),
            (0.8, false),
            (0.75, true),
            (0.6, true),
            (0.55, false),
            (0.5, true),
            (0.4, false),
            (0.3, false),
            (0.25, true),
            (0.2, false),
            (0.15, false),
            (0.1, true),
            (0.95, false),
            (0.85, true),
            (0.65, false),
            (0.45, true),
            (0.35, false),
            (0.05, false),
            (0.7, true),
            (0.05, true),
        ];
        let n = 400;
        let (mean, _) = bootstrap(
            |sample| {
                let s: Vec<f64> = sample.iter().map(|p| p.0).collect();
                let l: Vec<bool> = sample.iter().map(|p| p.1).collect();
                auc_roc(&s, &l)
            },
            &data,
            n,
            13,
        )
        .unwrap();

        let mut values = Vec::new();
        for rep in 0..n {
            use rand::Rng;
            let mut rng = crate::rng::substream(13, "bootstrap", rep as u64);
            loop {
                let sample: Vec<&(f64, bool)> = (0..data.len())
                    .map(|_| &data[rng.random_range(0..data.len())])
                    .collect();
                let s: Vec<f64> = sample.iter().map(|p| p.0).collect();
                let l: Vec<bool> = sample.iter().map(|p| p.1).collect();
                if let Ok(v) = auc_roc_pair_counting(&s, &l) {
                    values.push(v);
                    break;
                }
            }
        }
        let oracle_mean = values.iter().sum::<f64>() / n as f64;
        assert!((mean - oracle_mean).abs() < 1e-12, "{mean} vs {oracle_mean}");
    }

    #[test]
    fn bootstrap_errors_when_metric_mostly_fails() {
        let data = vec![1.0; 10];
        let result = bootstrap(
            |_| -> Result<f64> { Err(Error::SingleClass) },
            &data,
            50,
            3,
        );
        match result {
            Err(Error::BootstrapFailure { .. }) => {}
            other => panic!("expected bootstrap failure, got {other:?}"),
        }
    }

    #[test]
    fn bootstrap_std_is_stable_across_seeds() {
        let mut rng = stream(17, "bs-std");
        let data: Vec<(f64, bool)> = (0..40)
            .map(|_| {
                let label = rng.random::<f64>() < 0.5;
                let score = if label {
                    rng.random::<f64>() * 0.8 + 0.2
                } else {
                    rng.random::<f64>() * 0.8
                };
                (score, label)
            })
            .collect();
        let stds: Vec<f64> = (0..5)
            .map(|seed| {
                bootstrap(
                    |sample| {
                        let s: Vec<f64> = sample.iter().map(|p| p.0).collect();
                        let l: Vec<bool> = sample.iter().map(|p| p.1).collect();
                        auc_roc(&s, &l)
                    },
                    &data,
                    1000,
                    seed,
                )
                .unwrap()
                .1
            })
            .collect();
        let mean_std = stds.iter().sum::<f64>() / stds.len() as f64;
        let spread = stds
            .iter()
            .map(|s| (s - mean_std) * (s - mean_std))
            .sum::<f64>()
            .sqrt()
            / (stds.len() as f64).sqrt();
        assert!(
            spread < 0.1 * mean_std,
            "std of std {spread} vs mean std {mean_std}"
        );
    }

    mod mapping {
        use super::super::*;
        use crate::rng::stream;
        use rand::Rng;

        fn toy_embedding(ids: &[&str], d: usize, seed: u64) -> EmbeddingMatrix {
            let mut rng = stream(seed, "map-emb");
            let data: Vec<f64> = (0..ids.len() * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            EmbeddingMatrix::new(
                ids.iter().map(|s| s.to_string()).collect(),
                Matrix::new(ids.len(), d, data).unwrap(),
            )
            .unwrap()
        }

        fn identity_truth(n: usize) -> GroundTruthMap {
            GroundTruthMap::new(
                (0..n)
                    .map(|i| (format!("t{i}"), format!("s{i}")))
                    .collect(),
            )
        }

        fn paired(n: usize, d: usize, seed: u64) -> (EmbeddingMatrix, EmbeddingMatrix) {
            let t_ids: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let s_ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let t_refs: Vec<&str> = t_ids.iter().map(String::as_str).collect();
            let base = toy_embedding(&t_refs, d, seed);
            let e_s = EmbeddingMatrix::new(s_ids, base.matrix().clone()).unwrap();
            (base, e_s)
        }

        #[test]
        fn identity_mapping_scores_perfectly() {
            let (e_t, e_s) = paired(8, 4, 21);
            let truth = identity_truth(8);
            let w = Matrix::identity(4);
            let sim = mapping_similarity(&w, &e_t, &e_s, &truth).unwrap();
            assert!((sim - 1.0).abs() < 1e-12);
            let report = hit_at_k(&w, &e_t, &e_s, &truth, 1).unwrap();
            assert_eq!(report.hit_at_k, 1.0);
        }

        #[test]
        fn negated_mapping_scores_minus_one() {
            let (e_t, e_s) = paired(6, 3, 23);
            let truth = identity_truth(6);
            let w = Matrix::identity(3).scale(-1.0);
            let sim = mapping_similarity(&w, &e_t, &e_s, &truth).unwrap();
            assert!((sim + 1.0).abs() < 1e-12);
        }

        #[test]
        fn zero_mapping_is_a_degenerate_error() {
            let (e_t, e_s) = paired(5, 3, 25);
            let truth = identity_truth(5);
            let w = Matrix::zeros(3, 3);
            match hit_at_k(&w, &e_t, &e_s, &truth, 10) {
                Err(Error::DegenerateMapping(_)) => {}
                other => panic!("expected degenerate-mapping error, got {other:?}"),
            }
        }

        #[test]
        fn unknown_truth_id_is_named() {
            let (e_t, e_s) = paired(4, 3, 27);
            let mut truth = identity_truth(4);
            truth.pairs.push(("zzz".into(), "s0".into()));
            match mapping_similarity(&Matrix::identity(3), &e_t, &e_s, &truth) {
                Err(Error::UnknownCode(id)) => assert_eq!(id, "zzz"),
                other => panic!("unexpected {other:?}"),
            }
        }

        #[test]
        fn hit_at_k_is_monotone_in_k() {
            let (e_t, e_s) = paired(20, 6, 29);
            let truth = identity_truth(20);
            let mut rng = stream(31, "w");
            let w = crate::numerics::random_orthogonal(6, &mut rng);
            let mut prev = 0.0;
            for k in 1..=20 {
                let r = hit_at_k(&w, &e_t, &e_s, &truth, k).unwrap();
                assert!(r.hit_at_k >= prev, "k={k}: {} < {prev}", r.hit_at_k);
                prev = r.hit_at_k;
            }
            assert!((prev - 1.0).abs() < 1e-12, "k = n must hit everything");
        }

        #[test]
        fn similarity_invariant_under_joint_orthogonal_conjugation() {
            let (e_t, e_s) = paired(10, 5, 33);
            let truth = identity_truth(10);
            let mut rng = stream(35, "w");
            let w = crate::numerics::random_orthogonal(5, &mut rng);
            let base = mapping_similarity(&w, &e_t, &e_s, &truth).unwrap();
            let q = crate::numerics::random_orthogonal(5, &mut rng);
            // rotate both spaces by Q and conjugate W accordingly
            let e_t2 = EmbeddingMatrix::new(e_t.codes().to_vec(), e_t.matrix().matmul(&q)).unwrap();
            let e_s2 = EmbeddingMatrix::new(e_s.codes().to_vec(), e_s.matrix().matmul(&q)).unwrap();
            let w2 = q.transpose().matmul(&w).matmul(&q);
            let rotated = mapping_similarity(&w2, &e_t2, &e_s2, &truth).unwrap();
            assert!((base - rotated).abs() < 1e-9, "{base} vs {rotated}");
        }
    }
}
