//! Ontology-level alignment: group codes by ontology category (or k-means
//! when no ontology exists), match groups unsupervisedly by their row-sorted
//! self-similarity profiles, and fit an orthogonal mapping by iterated
//! Procrustes over the accumulated anchor pairs, level by level down to the
//! leaves.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::corpus::Ontology;
use crate::embedding::EmbeddingMatrix;
use crate::numerics::{
    cosine_similarity_matrix, dot, norm, normalize_rows, procrustes_from_pairs, Matrix,
};
use crate::rng::stream;
use crate::{Error, Result};

/// Level tag of the final pass where every leaf code is its own group.
pub const LEAF_LEVEL: usize = usize::MAX;

/// One code group: an ontology category or a cluster.
#[derive(Debug, Clone)]
pub struct Group {
    pub category: String,
    /// Vocabulary indices of the member codes.
    pub members: Vec<usize>,
    /// Arithmetic mean of the member embeddings.
    pub mean: Vec<f64>,
    /// The member embedding closest to the mean by cosine — the "median"
    /// member, used as the group embedding.
    pub median: Vec<f64>,
    /// Ranking weight for top-k retention: member count for category
    /// groups, code frequency for leaf singletons.
    pub weight: f64,
}

/// Groups retained at one level, largest first.
#[derive(Debug, Clone)]
pub struct GroupSet {
    pub level: usize,
    pub groups: Vec<Group>,
}

impl GroupSet {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Stacked group embeddings, one row per group. The mean embedding is
    /// used: selecting the "median" member instead proved far too noisy at
    /// desk scale (the two sides pick unrelated representatives and the
    /// cross-side similarity patterns decorrelate), while means keep the
    /// pattern correlation high.
    pub fn embedding_matrix(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.groups.iter().map(|g| g.mean.clone()).collect();
        Matrix::from_rows(&rows).expect("groups are non-empty and consistent")
    }
}

fn finish_groups(
    level: usize,
    emb: &EmbeddingMatrix,
    raw: Vec<(String, Vec<usize>, f64)>,
    k: usize,
) -> GroupSet {
    let mut groups: Vec<Group> = raw
        .into_iter()
        .map(|(category, members, weight)| {
            let d = emb.dim();
            let mut mean = vec![0.0; d];
            for &m in &members {
                for (a, b) in mean.iter_mut().zip(emb.vector(m)) {
                    *a += b;
                }
            }
            for a in mean.iter_mut() {
                *a /= members.len() as f64;
            }
            // Closest member by cosine; ties go to the lowest index.
            let mean_norm = norm(&mean).max(1e-300);
            let mut best = (f64::NEG_INFINITY, members[0]);
            for &m in &members {
                let v = emb.vector(m);
                let c = dot(v, &mean) / (norm(v).max(1e-300) * mean_norm);
                if c > best.0 {
                    best = (c, m);
                }
            }
            Group {
                category,
                members,
                mean,
                median: emb.vector(best.1).to_vec(),
                weight,
            }
        })
        .collect();
    groups.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap()
            .then_with(|| a.category.cmp(&b.category))
    });
    groups.truncate(k);
    GroupSet { level, groups }
}

/// Groups the vocabulary by level-`level` ontology category and keeps the
/// `k` largest groups. Codes shallower than `level` group under their own
/// deepest category.
pub fn group_by_ontology(
    emb: &EmbeddingMatrix,
    ontology: &Ontology,
    level: usize,
    k: usize,
) -> Result<GroupSet> {
    if k < 1 {
        return Err(Error::InvalidConfig("group count k must be >= 1".into()));
    }
    let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (idx, code) in emb.codes().iter().enumerate() {
        if !ontology.is_leaf(code) {
            return Err(Error::UnknownNode(format!(
                "code {code} is not a leaf of the ontology"
            )));
        }
        let depth = ontology.level_of(code)?;
        let ancestor = ontology.ancestor(code, level.min(depth))?;
        by_category.entry(ancestor).or_default().push(idx);
    }
    if by_category.len() < 2 {
        return Err(Error::TooFewGroups(level));
    }
    let raw: Vec<(String, Vec<usize>, f64)> = by_category
        .into_iter()
        .map(|(cat, members)| {
            let w = members.len() as f64;
            (cat, members, w)
        })
        .collect();
    Ok(finish_groups(level, emb, raw, k))
}

/// Lloyd's k-means with k-means++ seeding on the code embeddings, run to an
/// assignment fixpoint or 100 iterations; deterministic per seed. Emptied
/// clusters restart at the point farthest from its assigned centroid. Ten
/// restarts are run and the lowest-inertia clustering kept, so near-global
/// optima are found reliably; inertia comparison is rotation-invariant,
/// which keeps clusterings of isometric clouds in correspondence.
pub fn group_by_kmeans(emb: &EmbeddingMatrix, k: usize, seed: u64) -> Result<GroupSet> {
    const RESTARTS: u64 = 10;
    let mut best: Option<(f64, GroupSet)> = None;
    for r in 0..RESTARTS {
        let gs = kmeans_once(emb, k, seed, r)?;
        let inertia = kmeans_inertia(emb, &gs);
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, gs));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn kmeans_inertia(emb: &EmbeddingMatrix, gs: &GroupSet) -> f64 {
    let mut total = 0.0;
    for g in &gs.groups {
        for &m in &g.members {
            total += emb
                .vector(m)
                .iter()
                .zip(&g.mean)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>();
        }
    }
    total
}

fn kmeans_once(emb: &EmbeddingMatrix, k: usize, seed: u64, restart: u64) -> Result<GroupSet> {
    let n = emb.len();
    let d = emb.dim();
    if k < 1 || k > n {
        return Err(Error::InvalidConfig(format!(
            "kmeans k = {k} out of range for {n} codes"
        )));
    }
    let mut rng = crate::rng::substream(seed, "kmeans", restart);
    let dist_sq = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(emb.vector(rng.random_range(0..n)).to_vec());
    let mut best_d: Vec<f64> = (0..n)
        .map(|i| dist_sq(emb.vector(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = best_d.iter().sum();
        let next = if total <= 0.0 {
            // all remaining points coincide with a centroid; take the first
            // not yet chosen index deterministically
            (0..n)
                .find(|&i| centroids.iter().all(|c| dist_sq(emb.vector(i), c) > 0.0))
                .unwrap_or(0)
        } else {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in best_d.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(emb.vector(next).to_vec());
        for i in 0..n {
            let nd = dist_sq(emb.vector(i), centroids.last().unwrap());
            if nd < best_d[i] {
                best_d[i] = nd;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut best = (f64::INFINITY, 0usize);
            for (c, cent) in centroids.iter().enumerate() {
                let dd = dist_sq(emb.vector(i), cent);
                if dd < best.0 {
                    best = (dd, c);
                }
            }
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
        }
        // recompute centroids; restart empty clusters at the worst-fit point
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (a, b) in sums[assignment[i]].iter_mut().zip(emb.vector(i)) {
                *a += b;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist_sq(emb.vector(a), &centroids[assignment[a]]);
                        let db = dist_sq(emb.vector(b), &centroids[assignment[b]]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .expect("n >= 1");
                centroids[c] = emb.vector(far).to_vec();
                changed = true;
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..n {
        members[assignment[i]].push(i);
    }
    let width = (k.max(2) - 1).to_string().len();
    let raw: Vec<(String, Vec<usize>, f64)> = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(c, m)| {
            let w = m.len() as f64;
            (format!("K{c:0width$}"), m, w)
        })
        .collect();
    Ok(finish_groups(0, emb, raw, k))
}

/// Every code as its own group, ranked by code frequency (uniform when
/// `frequencies` is `None`), capped at `k`.
pub fn leaf_groups(
    emb: &EmbeddingMatrix,
    frequencies: Option<&[f64]>,
    k: usize,
) -> Result<GroupSet> {
    if let Some(f) = frequencies {
        if f.len() != emb.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} frequencies vs {} codes",
                f.len(),
                emb.len()
            )));
        }
    }
    let raw: Vec<(String, Vec<usize>, f64)> = emb
        .codes()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let w = frequencies.map_or(1.0, |f| f[i]);
            (id.clone(), vec![i], w)
        })
        .collect();
    Ok(finish_groups(LEAF_LEVEL, emb, raw, k.min(emb.len())))
}

/// Self-similarity matrix of a group set with its row-wise descending sort.
#[derive(Debug, Clone)]
pub struct SimilarityProfile {
    pub m: Matrix,
    pub m_sorted: Matrix,
}

/// Cosine self-similarities of the group embeddings, with each row sorted
/// descending. Sorted rows are invariant under any orthogonal transform of
/// the embedding space and under group reordering.
pub fn similarity_profile(groups: &GroupSet) -> Result<SimilarityProfile> {
    let g = groups.embedding_matrix();
    let m = cosine_similarity_matrix(&g, &g)?;
    let mut m_sorted = m.clone();
    for i in 0..m_sorted.rows() {
        m_sorted
            .row_mut(i)
            .sort_by(|a, b| b.partial_cmp(a).unwrap());
    }
    Ok(SimilarityProfile { m, m_sorted })
}

/// One matched anchor pair; vectors are unit-normalized group embeddings.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub level: usize,
    pub target_id: String,
    pub source_id: String,
    pub target: Vec<f64>,
    pub source: Vec<f64>,
}

/// Accumulated anchor matches driving Procrustes; levels may repeat and
/// several targets may share a source.
#[derive(Debug, Clone, Default)]
pub struct AnchorDictionary {
    pub anchors: Vec<Anchor>,
}

impl AnchorDictionary {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Union with another dictionary (duplicates kept).
    pub fn merged_with(&self, other: &AnchorDictionary) -> AnchorDictionary {
        let mut anchors = self.anchors.clone();
        anchors.extend(other.anchors.iter().cloned());
        AnchorDictionary { anchors }
    }

    fn to_matrices(&self) -> Result<(Matrix, Matrix)> {
        if self.is_empty() {
            return Err(Error::EmptyInput("anchor dictionary".into()));
        }
        let t: Vec<Vec<f64>> = self.anchors.iter().map(|a| a.target.clone()).collect();
        let s: Vec<Vec<f64>> = self.anchors.iter().map(|a| a.source.clone()).collect();
        Ok((Matrix::from_rows(&t)?, Matrix::from_rows(&s)?))
    }

    /// Debug TSV: `level<TAB>target_id<TAB>source_id` per anchor.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::fs::File::create(path)?;
        for a in &self.anchors {
            let level = if a.level == LEAF_LEVEL {
                "leaf".to_string()
            } else {
                a.level.to_string()
            };
            writeln!(out, "{level}\t{}\t{}", a.target_id, a.source_id)?;
        }
        Ok(())
    }
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n <= 0.0 || !n.is_finite() {
        return Err(Error::ZeroNormRow(0));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn anchors_from_matching(
    g_t: &GroupSet,
    g_s: &GroupSet,
    matching: &[usize],
) -> Result<Vec<Anchor>> {
    matching
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            Ok(Anchor {
                level: g_t.level,
                target_id: g_t.groups[i].category.clone(),
                source_id: g_s.groups[j].category.clone(),
                target: unit(&g_t.groups[i].mean)?,
                source: unit(&g_s.groups[j].mean)?,
            })
        })
        .collect()
}

/// Sorted off-diagonal profiles resampled onto a fixed quantile grid and
/// standardized by the side's own off-diagonal mean and deviation.
///
/// Two embedding spaces rarely share a similarity "temperature": the
/// noisier vocabulary runs uniformly colder, which drowns the relational
/// signal when raw sorted rows are compared. Dropping the constant
/// self-similarity, interpolating every sorted row onto a shared grid
/// (the two sides may have different group counts), and removing the
/// per-side offset and scale leaves exactly the shape information the
/// matching needs.
fn comparable_profiles(p: &SimilarityProfile, grid: usize) -> Matrix {
    let k = p.m_sorted.rows();
    let m = p.m_sorted.cols() - 1; // off-diagonal entries per row
    let mut out = Matrix::zeros(k, grid);
    for i in 0..k {
        let row = &p.m_sorted.row(i)[1..];
        for g in 0..grid {
            let pos = if grid == 1 {
                0.0
            } else {
                g as f64 / (grid - 1) as f64 * (m - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            out.set(i, g, row[lo] * (1.0 - frac) + row[hi.min(m - 1)] * frac);
        }
    }
    let n = (k * grid) as f64;
    let mean = out.data().iter().sum::<f64>() / n;
    let var = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    for v in out.data_mut() {
        *v = (*v - mean) / std;
    }
    out
}

/// Fraction of corpus code mass carried by each group. Falls back to
/// member-count shares when no frequencies are given.
pub fn group_shares(groups: &GroupSet, frequencies: Option<&[f64]>) -> Vec<f64> {
    let mass = |g: &Group| -> f64 {
        match frequencies {
            Some(f) => g.members.iter().map(|&m| f[m]).sum(),
            None => g.members.len() as f64,
        }
    };
    let masses: Vec<f64> = groups.groups.iter().map(mass).collect();
    let total: f64 = masses.iter().sum::<f64>();
    masses.into_iter().map(|m| (m / total).max(1e-12)).collect()
}

/// Structural priors added to matching scores at category levels.
///
/// Frequency shares transfer across coding systems (splitting a concept
/// divides its mass within the same category), pinning down matches that
/// near-symmetric similarity profiles leave ambiguous; the parent bonus
/// rewards candidates whose parent categories were matched at the coarser
/// level, which is the hierarchical anchor the coarse-to-fine scheme is
/// built around.
#[derive(Default)]
struct MatchPrior<'a> {
    shares: Option<(&'a [f64], &'a [f64])>,
    share_weight: f64,
    /// Parent category id per group on each side, plus the coarser level's
    /// established matching.
    parents: Option<(&'a [String], &'a [String], &'a std::collections::HashMap<String, String>)>,
    parent_weight: f64,
}

impl MatchPrior<'_> {
    fn adjustment(&self, i: usize, j: usize) -> f64 {
        let mut adj = 0.0;
        if let Some((sh_t, sh_s)) = self.shares {
            adj -= self.share_weight * (sh_t[i].ln() - sh_s[j].ln()).abs();
        }
        if let Some((pt, ps, matched)) = &self.parents {
            if matched.get(pt[i].as_str()).map(String::as_str) == Some(ps[j].as_str()) {
                adj += self.parent_weight;
            }
        }
        adj
    }
}

fn induce_seed_scored(
    g_t: &GroupSet,
    g_s: &GroupSet,
    prior: &MatchPrior<'_>,
) -> Result<AnchorDictionary> {
    if g_t.is_empty() || g_s.is_empty() {
        return Err(Error::EmptyInput("group sets".into()));
    }
    if g_t.groups[0].median.len() != g_s.groups[0].median.len() {
        return Err(Error::DimensionMismatch(format!(
            "group embedding dims {} vs {}",
            g_t.groups[0].median.len(),
            g_s.groups[0].median.len()
        )));
    }
    if g_t.len() < 2 || g_s.len() < 2 {
        return Err(Error::TooFewGroups(g_t.level.min(g_s.level)));
    }
    let pt = similarity_profile(g_t)?;
    let ps = similarity_profile(g_s)?;
    let grid = (g_t.len() - 1).min(g_s.len() - 1).min(64).max(2);
    let prof_t = comparable_profiles(&pt, grid);
    let prof_s = comparable_profiles(&ps, grid);
    let mut matching = Vec::with_capacity(g_t.len());
    for i in 0..g_t.len() {
        let row_t = prof_t.row(i);
        let norm_t = norm(row_t).max(1e-300);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for j in 0..g_s.len() {
            let row_s = prof_s.row(j);
            let score =
                dot(row_t, row_s) / (norm_t * norm(row_s).max(1e-300)) + prior.adjustment(i, j);
            if score > best.0 {
                best = (score, j);
            }
        }
        matching.push(best.1);
    }
    Ok(AnchorDictionary {
        anchors: anchors_from_matching(g_t, g_s, &matching)?,
    })
}

/// Matches every target group to a source group by comparing row-sorted
/// self-similarity profiles: target row `i` pairs with the source row whose
/// standardized sorted profile (see [`comparable_profiles`]) has the
/// highest cosine. Ties take the lowest source index.
pub fn induce_seed(g_t: &GroupSet, g_s: &GroupSet) -> Result<AnchorDictionary> {
    induce_seed_scored(g_t, g_s, &MatchPrior::default())
}

#[derive(Debug)]
pub struct RefineOutcome {
    pub w: Matrix,
    pub anchors: AnchorDictionary,
    /// Anchor-cosine objective after each Procrustes solve; non-decreasing.
    pub objectives: Vec<f64>,
}

/// Alternates (a) the closed-form Procrustes solve on the current anchors
/// and (b) re-induction of this level's matching from the mapped group
/// embeddings, until the matching is stable or `iters` rounds have run.
///
/// Anchors in `dict` whose level differs from `g_t.level` are kept fixed;
/// anchors at the current level (if any) seed the matching and are replaced
/// by re-induction.
pub fn procrustes_refine(
    g_t: &GroupSet,
    g_s: &GroupSet,
    dict: &AnchorDictionary,
    iters: usize,
) -> Result<RefineOutcome> {
    refine_scored(g_t, g_s, dict, iters, &MatchPrior::default())
}

/// [`procrustes_refine`] with the structural priors applied during
/// re-induction; used by the level pipeline.
fn refine_scored(
    g_t: &GroupSet,
    g_s: &GroupSet,
    dict: &AnchorDictionary,
    iters: usize,
    prior: &MatchPrior<'_>,
) -> Result<RefineOutcome> {
    if iters < 1 {
        return Err(Error::InvalidConfig("procrustes iters must be >= 1".into()));
    }
    if dict.is_empty() {
        return Err(Error::EmptyInput("anchor dictionary".into()));
    }
    let current_level = g_t.level;
    let fixed: Vec<Anchor> = dict
        .anchors
        .iter()
        .filter(|a| a.level != current_level)
        .cloned()
        .collect();

    // Current-level anchors seed the matching by category id.
    let source_index: BTreeMap<&str, usize> = g_s
        .groups
        .iter()
        .enumerate()
        .map(|(j, g)| (g.category.as_str(), j))
        .collect();
    let target_index: BTreeMap<&str, usize> = g_t
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.category.as_str(), i))
        .collect();
    let mut matching: Option<Vec<usize>> = {
        let mut m: Vec<Option<usize>> = vec![None; g_t.len()];
        let mut any = false;
        for a in dict.anchors.iter().filter(|a| a.level == current_level) {
            if let (Some(&i), Some(&j)) = (
                target_index.get(a.target_id.as_str()),
                source_index.get(a.source_id.as_str()),
            ) {
                m[i] = Some(j);
                any = true;
            }
        }
        if any && m.iter().all(Option::is_some) {
            Some(m.into_iter().map(Option::unwrap).collect())
        } else {
            None
        }
    };
    if matching.is_none() && fixed.is_empty() {
        return Err(Error::EmptyInput(
            "no usable anchors for the current level".into(),
        ));
    }

    let t_units = normalize_rows(&g_t.embedding_matrix())?;
    let s_units = normalize_rows(&g_s.embedding_matrix())?;

    let solve = |matching: &Option<Vec<usize>>| -> Result<(Matrix, f64)> {
        let mut dict_now = AnchorDictionary {
            anchors: fixed.clone(),
        };
        if let Some(m) = matching {
            dict_now.anchors.extend(anchors_from_matching(g_t, g_s, m)?);
        }
        let (t, s) = dict_now.to_matrices()?;
        let w = procrustes_from_pairs(&t, &s)?;
        let mapped = t.matmul(&w);
        let objective = (0..mapped.rows())
            .map(|i| dot(mapped.row(i), s.row(i)))
            .sum::<f64>();
        Ok((w, objective))
    };

    let mut objectives = Vec::new();
    let mut w = Matrix::identity(t_units.cols());
    for _ in 0..iters {
        let (w_now, obj) = solve(&matching)?;
        w = w_now;
        objectives.push(obj);
        // Re-induce this level's matching from the mapped group embeddings.
        let mapped = t_units.matmul(&w);
        let mut new_matching = Vec::with_capacity(g_t.len());
        for i in 0..g_t.len() {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for j in 0..g_s.len() {
                let score = dot(mapped.row(i), s_units.row(j)) + prior.adjustment(i, j);
                if score > best.0 {
                    best = (score, j);
                }
            }
            new_matching.push(best.1);
        }
        let stable = matching.as_ref() == Some(&new_matching);
        matching = Some(new_matching);
        if stable {
            break;
        }
    }
    // Final solve so the returned mapping reflects the final matching.
    let (w_final, obj) = solve(&matching)?;
    if objectives.last().map_or(true, |&o| obj >= o - 1e-9) {
        w = w_final;
        objectives.push(obj);
    }
    let mut anchors = AnchorDictionary { anchors: fixed };
    anchors
        .anchors
        .extend(anchors_from_matching(g_t, g_s, matching.as_ref().unwrap())?);
    Ok(RefineOutcome {
        w,
        anchors,
        objectives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupingMode {
    Ontology,
    KMeans,
}

#[derive(Debug, Clone)]
pub struct AlignConfig {
    /// Cap on groups per category level; the available count applies when
    /// smaller. Default 50.
    pub k: Option<usize>,
    /// Cap on leaf singleton groups for the final pass, ranked by code
    /// frequency. Default 500.
    pub leaf_k: Option<usize>,
    /// Deepest category level to visit; defaults to one above the leaves.
    pub max_level: Option<usize>,
    /// Procrustes rounds per level (early-stopped on a stable matching).
    pub procrustes_iters: usize,
    pub grouping: GroupingMode,
    /// Weight of the log frequency-share agreement term in category
    /// matching scores; 0 disables the frequency prior.
    pub frequency_weight: f64,
    /// Bonus for candidates whose parent categories are matched at the
    /// coarser level; 0 disables the hierarchy prior.
    pub parent_weight: f64,
    /// Cluster-count base for k-means grouping: level `l` uses `base^l`.
    pub kmeans_base: usize,
    /// Number of k-means pseudo-levels before the leaf pass.
    pub kmeans_levels: usize,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            k: None,
            leaf_k: None,
            max_level: None,
            procrustes_iters: 20,
            grouping: GroupingMode::Ontology,
            frequency_weight: 3.0,
            parent_weight: 0.4,
            kmeans_base: 4,
            kmeans_levels: 2,
            seed: 0,
        }
    }
}

impl AlignConfig {
    fn level_k(&self) -> usize {
        self.k.unwrap_or(50).max(2)
    }

    fn leaf_cap(&self) -> usize {
        self.leaf_k.unwrap_or(500).max(2)
    }
}

#[derive(Debug)]
pub struct AlignOutcome {
    pub w: Matrix,
    pub anchors: AnchorDictionary,
}

struct LevelSpec {
    g_t: GroupSet,
    g_s: GroupSet,
    /// Parent category per group, when a hierarchy exists.
    parents_t: Option<Vec<String>>,
    parents_s: Option<Vec<String>>,
}

fn matching_of(anchors: &AnchorDictionary, level: usize) -> std::collections::HashMap<String, String> {
    anchors
        .anchors
        .iter()
        .filter(|a| a.level == level)
        .map(|a| (a.target_id.clone(), a.source_id.clone()))
        .collect()
}

fn run_levels(
    e_t: &EmbeddingMatrix,
    e_s: &EmbeddingMatrix,
    levels: Vec<LevelSpec>,
    leaf_parents: Option<(Vec<String>, Vec<String>)>,
    frequencies: Option<(&[f64], &[f64])>,
    config: &AlignConfig,
) -> Result<AlignOutcome> {
    if e_t.dim() != e_s.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding dims {} vs {}",
            e_t.dim(),
            e_s.dim()
        )));
    }
    let (freq_t, freq_s) = match frequencies {
        Some((t, s)) => (Some(t), Some(s)),
        None => (None, None),
    };
    let mut accumulated = AnchorDictionary::default();
    let mut prev_matching: Option<std::collections::HashMap<String, String>> = None;
    for spec in &levels {
        let sh_t = group_shares(&spec.g_t, freq_t);
        let sh_s = group_shares(&spec.g_s, freq_s);
        let parents = match (&spec.parents_t, &spec.parents_s, &prev_matching) {
            (Some(pt), Some(ps), Some(m)) => Some((pt.as_slice(), ps.as_slice(), m)),
            _ => None,
        };
        let prior = MatchPrior {
            shares: Some((sh_t.as_slice(), sh_s.as_slice())),
            share_weight: config.frequency_weight,
            parents,
            parent_weight: config.parent_weight,
        };
        let seed_anchors = induce_seed_scored(&spec.g_t, &spec.g_s, &prior)?;
        let merged = accumulated.merged_with(&seed_anchors);
        let outcome = refine_scored(&spec.g_t, &spec.g_s, &merged, config.procrustes_iters, &prior)?;
        prev_matching = Some(matching_of(&outcome.anchors, spec.g_t.level));
        accumulated = outcome.anchors;
    }
    // Final pass at leaf granularity, seeded through the current mapping.
    // The frequency prior does not apply here (splitting a concept divides
    // its mass over the split codes), but the hierarchy prior does.
    let leaf_t = leaf_groups(e_t, freq_t, config.leaf_cap())?;
    let leaf_s = leaf_groups(e_s, freq_s, config.leaf_cap())?;
    if accumulated.is_empty() {
        return Err(Error::EmptyInput("no anchors accumulated before leaf pass".into()));
    }
    let leaf_parent_vecs = leaf_parents.map(|(full_t, full_s)| {
        // reorder the per-code parent lists to the retained leaf groups
        let pick = |gs: &GroupSet, emb: &EmbeddingMatrix, full: &[String]| -> Vec<String> {
            gs.groups
                .iter()
                .map(|g| full[emb.index_of(&g.category).expect("leaf group is a code")].clone())
                .collect()
        };
        (
            pick(&leaf_t, e_t, &full_t),
            pick(&leaf_s, e_s, &full_s),
        )
    });
    let parents = match (&leaf_parent_vecs, &prev_matching) {
        (Some((pt, ps)), Some(m)) => Some((pt.as_slice(), ps.as_slice(), m)),
        _ => None,
    };
    let prior = MatchPrior {
        shares: None,
        share_weight: 0.0,
        parents,
        parent_weight: config.parent_weight,
    };
    let outcome = refine_scored(&leaf_t, &leaf_s, &accumulated, config.procrustes_iters, &prior)?;
    Ok(AlignOutcome {
        w: outcome.w,
        anchors: outcome.anchors,
    })
}

/// The full multi-resolution alignment: for each level from 1 to the
/// deepest shared category level (clamped per side when one ontology is
/// shallower), group both vocabularies, induce the level's seed matching
/// under the frequency and hierarchy priors, merge it with all accumulated
/// anchors, and refine; a final leaf pass treats every code as its own
/// group. Returns the final orthogonal `W`.
pub fn ontology_align(
    e_t: &EmbeddingMatrix,
    e_s: &EmbeddingMatrix,
    o_t: &Ontology,
    o_s: &Ontology,
    frequencies: Option<(&[f64], &[f64])>,
    config: &AlignConfig,
) -> Result<AlignOutcome> {
    let depth_t = o_t.max_depth();
    let depth_s = o_s.max_depth();
    if depth_t < 2 || depth_s < 2 {
        return Err(Error::TooFewGroups(1));
    }
    let deepest_category = depth_t.max(depth_s).saturating_sub(1);
    let max_level = config.max_level.unwrap_or(deepest_category).min(deepest_category);
    if max_level < 1 {
        return Err(Error::TooFewGroups(0));
    }
    let parent_list = |gs: &GroupSet, o: &Ontology| -> Vec<String> {
        gs.groups
            .iter()
            .map(|g| o.parent_of(&g.category).unwrap_or(&o.root).to_string())
            .collect()
    };
    let mut levels = Vec::new();
    for l in 1..=max_level {
        let l_t = l.min(depth_t - 1);
        let l_s = l.min(depth_s - 1);
        let mut g_t = group_by_ontology(e_t, o_t, l_t, config.level_k())?;
        let mut g_s = group_by_ontology(e_s, o_s, l_s, config.level_k())?;
        // Tag both sides with the loop level so anchors merge consistently
        // even when one side is clamped.
        g_t.level = l;
        g_s.level = l;
        let parents_t = parent_list(&g_t, o_t);
        let parents_s = parent_list(&g_s, o_s);
        levels.push(LevelSpec {
            g_t,
            g_s,
            parents_t: Some(parents_t),
            parents_s: Some(parents_s),
        });
    }
    let leaf_parents = (
        e_t.codes()
            .iter()
            .map(|c| o_t.parent_of(c).unwrap_or(&o_t.root).to_string())
            .collect::<Vec<_>>(),
        e_s.codes()
            .iter()
            .map(|c| o_s.parent_of(c).unwrap_or(&o_s.root).to_string())
            .collect::<Vec<_>>(),
    );
    run_levels(e_t, e_s, levels, Some(leaf_parents), frequencies, config)
}

/// One side's discovered cluster hierarchy: per level, the groups plus the
/// parent cluster id of every group; finally the deepest cluster id per
/// code.
struct ClusterTree {
    levels: Vec<(GroupSet, Vec<String>)>,
    leaf_parents: Vec<String>,
}

/// Clusters the vocabulary recursively: `base` clusters, then `base`
/// sub-clusters within each cluster, for `depth` levels.
fn nested_kmeans(
    emb: &EmbeddingMatrix,
    base: usize,
    depth: usize,
    seed: u64,
) -> Result<ClusterTree> {
    // (parent id, member indices) partitions refined level by level
    let mut partitions: Vec<(String, Vec<usize>)> =
        vec![("ROOT".to_string(), (0..emb.len()).collect())];
    let mut levels = Vec::new();
    for l in 1..=depth {
        let mut next: Vec<(String, Vec<usize>)> = Vec::new();
        let mut groups: Vec<Group> = Vec::new();
        let mut parents: Vec<String> = Vec::new();
        for (pi, (parent_id, members)) in partitions.iter().enumerate() {
            let k = base.min(members.len());
            let sub_codes: Vec<String> = members.iter().map(|&m| emb.codes()[m].clone()).collect();
            let sub_rows: Vec<Vec<f64>> =
                members.iter().map(|&m| emb.vector(m).to_vec()).collect();
            let sub_emb = EmbeddingMatrix::new(sub_codes, Matrix::from_rows(&sub_rows)?)?;
            let sub = group_by_kmeans(&sub_emb, k, seed.wrapping_add((l * 1000 + pi) as u64))?;
            for (ci, g) in sub.groups.iter().enumerate() {
                let id = format!("{parent_id}.{ci}");
                let global: Vec<usize> = g.members.iter().map(|&m| members[m]).collect();
                groups.push(Group {
                    category: id.clone(),
                    members: global.clone(),
                    mean: g.mean.clone(),
                    median: g.median.clone(),
                    weight: g.weight,
                });
                parents.push(parent_id.clone());
                next.push((id, global));
            }
        }
        groups.sort_by(|a, b| {
            b.weight
                .partial_cmp(&a.weight)
                .unwrap()
                .then_with(|| a.category.cmp(&b.category))
        });
        let order: std::collections::HashMap<&str, usize> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.category.as_str(), i))
            .collect();
        // parents must follow the sorted group order
        let mut sorted_parents = vec![String::new(); groups.len()];
        let mut parent_by_id: std::collections::HashMap<String, String> = Default::default();
        for ((id, _), p) in next.iter().zip(parents.iter()) {
            parent_by_id.insert(id.clone(), p.clone());
        }
        for g in &groups {
            sorted_parents[order[g.category.as_str()]] = parent_by_id[&g.category].clone();
        }
        levels.push((GroupSet { level: l, groups }, sorted_parents));
        partitions = next;
    }
    let mut leaf_parents = vec![String::new(); emb.len()];
    for (id, members) in &partitions {
        for &m in members {
            leaf_parents[m] = id.clone();
        }
    }
    Ok(ClusterTree {
        levels,
        leaf_parents,
    })
}

/// Ontology-free variant: a cluster hierarchy is discovered by nested
/// k-means (`kmeans_base` clusters per node, `kmeans_levels` levels) and
/// then aligned exactly like an ontology, hierarchy prior included.
pub fn kmeans_align(
    e_t: &EmbeddingMatrix,
    e_s: &EmbeddingMatrix,
    frequencies: Option<(&[f64], &[f64])>,
    config: &AlignConfig,
) -> Result<AlignOutcome> {
    if config.kmeans_levels < 1 {
        return Err(Error::TooFewGroups(0));
    }
    let tree_t = nested_kmeans(e_t, config.kmeans_base, config.kmeans_levels, config.seed)?;
    let tree_s = nested_kmeans(
        e_s,
        config.kmeans_base,
        config.kmeans_levels,
        config.seed,
    )?;
    let mut levels = Vec::new();
    for ((g_t, p_t), (g_s, p_s)) in tree_t.levels.into_iter().zip(tree_s.levels) {
        levels.push(LevelSpec {
            g_t,
            g_s,
            parents_t: Some(p_t),
            parents_s: Some(p_s),
        });
    }
    run_levels(
        e_t,
        e_s,
        levels,
        Some((tree_t.leaf_parents, tree_s.leaf_parents)),
        frequencies,
        config,
    )
}

/// Code-level-only baseline: a single pass in which every code is its own
/// group, seeded by row-sorted profile matching over the leaf codes.
pub fn code_level_align(
    e_t: &EmbeddingMatrix,
    e_s: &EmbeddingMatrix,
    frequencies: Option<(&[f64], &[f64])>,
    config: &AlignConfig,
) -> Result<AlignOutcome> {
    let (freq_t, freq_s) = match frequencies {
        Some((t, s)) => (Some(t), Some(s)),
        None => (None, None),
    };
    let leaf_t = leaf_groups(e_t, freq_t, config.leaf_cap())?;
    let leaf_s = leaf_groups(e_s, freq_s, config.leaf_cap())?;
    let seed_anchors = induce_seed(&leaf_t, &leaf_s)?;
    let outcome = procrustes_refine(&leaf_t, &leaf_s, &seed_anchors, config.procrustes_iters)?;
    Ok(AlignOutcome {
        w: outcome.w,
        anchors: outcome.anchors,
    })
}
