//! Synthetic two-vocabulary benchmark generator.
//!
//! A latent concept tree is shared by both coding systems. Source codes are
//! the leaf concepts themselves; each concept is split into one or more
//! target codes with Dirichlet usage weights, emulating the granularity
//! mismatch between an older and a newer coding system. Both corpora sample
//! visits from the same per-patient topic mixtures over concepts, so the
//! concept-level co-occurrence structure of the two corpora agrees in
//! expectation and the embedding spaces are approximately isometric.
//! Mortality is a Bernoulli draw of a logistic score over a designated
//! block of risk concepts; length of stay is log-normal with a
//! concept-dependent location.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};

use super::{Code, Corpus, GroundTruthMap, Ontology, Patient, Role, Visit};
use crate::rng::{stream, substream};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    /// Depth of the concept tree; leaves sit at this level (root is 0).
    pub concept_tree_depth: usize,
    /// Fan-out of every internal node.
    pub branching: usize,
    /// Maximum number of target codes one concept is split into.
    pub split_max: usize,
    pub n_patients: usize,
    /// Mean visits per patient (minimum 1 is always enforced).
    pub visits_mean: f64,
    /// Mean codes per visit (minimum 1 is always enforced).
    pub codes_per_visit_mean: f64,
    /// Dirichlet concentration of the per-patient topic mixture; smaller
    /// values concentrate patients on fewer topics.
    pub topic_concentration: f64,
    /// Fraction of concepts (a contiguous block of subtrees) that carry
    /// mortality risk and longer stays.
    pub risk_concept_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            concept_tree_depth: 3,
            branching: 4,
            split_max: 3,
            n_patients: 2000,
            visits_mean: 4.0,
            codes_per_visit_mean: 6.0,
            topic_concentration: 0.4,
            risk_concept_fraction: 0.25,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        if self.concept_tree_depth < 2 {
            return Err(Error::InvalidConfig("concept_tree_depth must be >= 2".into()));
        }
        if self.branching < 2 {
            return Err(Error::InvalidConfig("branching must be >= 2".into()));
        }
        if self.split_max < 1 {
            return Err(Error::InvalidConfig("split_max must be >= 1".into()));
        }
        if self.n_patients == 0 {
            return Err(Error::InvalidConfig("n_patients must be positive".into()));
        }
        if self.visits_mean < 1.0 || self.codes_per_visit_mean < 1.0 {
            return Err(Error::InvalidConfig("visit and code means must be >= 1".into()));
        }
        if self.topic_concentration <= 0.0 {
            return Err(Error::InvalidConfig("topic_concentration must be positive".into()));
        }
        if self.risk_concept_fraction <= 0.0 || self.risk_concept_fraction >= 1.0 {
            return Err(Error::InvalidConfig("risk_concept_fraction must be in (0,1)".into()));
        }
        let n_concepts = (self.branching as u64).checked_pow(self.concept_tree_depth as u32);
        match n_concepts {
            None | Some(0) => Err(Error::InvalidConfig("empty or overflowing vocabulary".into())),
            Some(n) if n > 1_000_000 => {
                Err(Error::InvalidConfig(format!("vocabulary of {n} concepts is too large")))
            }
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub source: Corpus,
    pub target: Corpus,
    pub source_ontology: Ontology,
    pub target_ontology: Ontology,
    pub truth: GroundTruthMap,
}

/// Latent structure shared by both corpora.
struct Latent {
    /// Per-topic cumulative distribution over concepts.
    topic_cdf: Vec<Vec<f64>>,
    /// Per-concept target codes (indices into the target vocabulary) and
    /// their cumulative usage weights.
    concept_targets: Vec<Vec<usize>>,
    concept_usage_cdf: Vec<Vec<f64>>,
    risk: Vec<bool>,
    severity: Vec<f64>,
    n_topics: usize,
    /// Relative topic prevalences scaling the patient mixture prior.
    prevalence: Vec<f64>,
}

fn symmetric_dirichlet(alpha: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("valid gamma");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let sum: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= sum;
    }
    draws
}

/// Dirichlet draw with per-component concentration `alpha * prevalence`.
fn prevalence_dirichlet(alpha: f64, prevalence: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let mut draws: Vec<f64> = prevalence
        .iter()
        .map(|&p| {
            Gamma::new((alpha * p).max(1e-3), 1.0)
                .expect("valid gamma")
                .sample(rng)
                .max(1e-300)
        })
        .collect();
    let sum: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= sum;
    }
    draws
}

fn cdf_from_weights(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    match cdf.binary_search_by(|p| p.partial_cmp(&u).unwrap()) {
        Ok(i) => (i + 1).min(cdf.len() - 1),
        Err(i) => i.min(cdf.len() - 1),
    }
}

/// Digits of `concept` in base `branching`, most significant first.
fn concept_path(concept: usize, depth: usize, branching: usize) -> Vec<usize> {
    let mut digits = vec![0; depth];
    let mut c = concept;
    for d in (0..depth).rev() {
        digits[d] = c % branching;
        c /= branching;
    }
    digits
}

fn category_id(side: char, level: usize, path: &[usize]) -> String {
    let joined: Vec<String> = path[..level].iter().map(|d| d.to_string()).collect();
    format!("{side}C{level}_{}", joined.join("."))
}

/// Deterministically generates the paired benchmark for a config.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<SyntheticBenchmark> {
    config.validate()?;
    let depth = config.concept_tree_depth;
    let branching = config.branching;
    let n_concepts = branching.pow(depth as u32);
    let pad = (n_concepts - 1).to_string().len().max(3);

    let mut rng_structure = stream(config.seed, "gen-structure");

    // Source vocabulary: one code per concept, ids sorted by construction.
    let source_vocab: Vec<Code> = (0..n_concepts)
        .map(|c| Code { id: format!("S{c:0pad$}"), index: c })
        .collect();

    // Target vocabulary: 1..=split_max codes per concept with Dirichlet
    // usage weights; suffix letters keep ids lexicographically sorted.
    let mut target_vocab: Vec<Code> = Vec::new();
    let mut concept_targets: Vec<Vec<usize>> = Vec::with_capacity(n_concepts);
    let mut concept_usage_cdf: Vec<Vec<f64>> = Vec::with_capacity(n_concepts);
    let mut truth_pairs: Vec<(String, String)> = Vec::new();
    for c in 0..n_concepts {
        let n_split = if config.split_max == 1 {
            1
        } else {
            rng_structure.random_range(1..=config.split_max)
        };
        // Moderately even usage: every split code keeps enough mass to
        // estimate an embedding from.
        let usage = symmetric_dirichlet(3.0, n_split, &mut rng_structure);
        let mut indices = Vec::with_capacity(n_split);
        for s in 0..n_split {
            let suffix = (b'a' + s as u8) as char;
            let id = format!("T{c:0pad$}{suffix}");
            truth_pairs.push((id.clone(), source_vocab[c].id.clone()));
            indices.push(target_vocab.len());
            target_vocab.push(Code { id, index: target_vocab.len() });
        }
        concept_targets.push(indices);
        concept_usage_cdf.push(cdf_from_weights(&usage));
    }

    // Ontologies: identical internal structure, leaves differ per side.
    let build_ontology = |side: char, leaf_ids: &dyn Fn(usize) -> Vec<String>| -> Result<Ontology> {
        let mut edges: Vec<(String, String)> = Vec::new();
        let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();
        for c in 0..n_concepts {
            let path = concept_path(c, depth, branching);
            let mut parent = "ROOT".to_string();
            for l in 1..depth {
                let cat = category_id(side, l, &path);
                if seen.insert(cat.clone()) {
                    edges.push((parent.clone(), cat.clone()));
                }
                parent = cat;
            }
            for leaf in leaf_ids(c) {
                edges.push((parent.clone(), leaf));
            }
        }
        Ontology::new("ROOT".into(), &edges)
    };
    let source_ontology = build_ontology('S', &|c| vec![source_vocab[c].id.clone()])?;
    let target_ontology = build_ontology('T', &|c| {
        concept_targets[c]
            .iter()
            .map(|&t| target_vocab[t].id.clone())
            .collect()
    })?;

    // Risk block: the first ceil(fraction * n) concepts in leaf order, i.e.
    // whole subtrees, so risk correlates with the topic structure.
    let n_risk = ((config.risk_concept_fraction * n_concepts as f64).ceil() as usize)
        .clamp(1, n_concepts - 1);
    let risk: Vec<bool> = (0..n_concepts).map(|c| c < n_risk).collect();
    let severity: Vec<f64> = risk
        .iter()
        .map(|&r| {
            let base: f64 = if r { 0.75 } else { 0.2 };
            (base + rng_structure.random_range(-0.1..0.1)).clamp(0.05, 0.95)
        })
        .collect();

    // Topics are the categories at the deepest internal level, and every
    // topic carries its own relational fingerprint. Coding systems are
    // nothing like exchangeable: prevalences are long-tailed and category
    // pairs co-occur with very different strengths, and that asymmetry is
    // what makes unsupervised matching identifiable at all. The latent
    // model therefore draws hierarchical popularity factors, per-topic
    // self-cohesion, and a hierarchically structured affinity for every
    // topic pair, all shared by both coding systems.
    let mut rng_topics = stream(config.seed, "gen-topics");
    let n_topics = branching.pow(depth as u32 - 1);
    let per_topic = n_concepts / n_topics;
    let popularity: Vec<f64> = {
        let node_factor = LogNormal::new(0.0, 0.4).expect("valid lognormal");
        let leaf_factor = LogNormal::new(0.0, 0.5).expect("valid lognormal");
        let mut level_factors: Vec<Vec<f64>> = Vec::new();
        for l in 1..depth {
            let count = branching.pow(l as u32);
            level_factors
                .push((0..count).map(|_| node_factor.sample(&mut rng_topics)).collect());
        }
        (0..n_concepts)
            .map(|c| {
                let mut f = leaf_factor.sample(&mut rng_topics);
                let path = concept_path(c, depth, branching);
                for l in 1..depth {
                    let mut idx = 0;
                    for &d in &path[..l] {
                        idx = idx * branching + d;
                    }
                    f *= level_factors[l - 1][idx];
                }
                f
            })
            .collect()
    };
    // Affinities: a coarse random structure over level-1 ancestors refined
    // by per-pair jitter; topics under one ancestor attract more.
    let n_parents = branching;
    let topics_per_parent = n_topics / n_parents;
    let parent_aff: Vec<Vec<f64>> = (0..n_parents)
        .map(|_| (0..n_parents).map(|_| rng_topics.random_range(0.1..1.0)).collect())
        .collect();
    let affinity: Vec<Vec<f64>> = (0..n_topics)
        .map(|t| {
            (0..n_topics)
                .map(|u| {
                    if t == u {
                        0.0
                    } else if t / topics_per_parent == u / topics_per_parent {
                        rng_topics.random_range(0.4..1.6)
                    } else {
                        parent_aff[t / topics_per_parent][u / topics_per_parent]
                            * rng_topics.random_range(0.2..1.8)
                    }
                })
                .collect()
        })
        .collect();
    // Per-topic cohesion: the fraction of a topic's mass kept on its own
    // concepts; the rest spreads over other categories by affinity.
    let in_fraction: Vec<f64> = (0..n_topics)
        .map(|_| rng_topics.random_range(0.65..0.9))
        .collect();
    let prevalence: Vec<f64> = {
        let ln = LogNormal::new(0.0, 0.5).expect("valid lognormal");
        let raw: Vec<f64> = (0..n_topics).map(|_| ln.sample(&mut rng_topics)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v * n_topics as f64 / sum).collect()
    };
    let topic_cdf: Vec<Vec<f64>> = (0..n_topics)
        .map(|t| {
            // popularity-weighted masses, separately normalized inside and
            // outside the topic, then mixed by the topic's cohesion
            let mut in_w = vec![0.0; n_concepts];
            let mut out_w = vec![0.0; n_concepts];
            for c in 0..n_concepts {
                let cat = c / per_topic;
                if cat == t {
                    in_w[c] = popularity[c];
                } else {
                    out_w[c] = popularity[c] * affinity[t][cat];
                }
            }
            let in_total: f64 = in_w.iter().sum();
            let out_total: f64 = out_w.iter().sum();
            let weights: Vec<f64> = (0..n_concepts)
                .map(|c| {
                    in_fraction[t] * in_w[c] / in_total
                        + (1.0 - in_fraction[t]) * out_w[c] / out_total
                })
                .collect();
            cdf_from_weights(&weights)
        })
        .collect();

    let latent = Latent {
        topic_cdf,
        concept_targets,
        concept_usage_cdf,
        risk,
        severity,
        prevalence,
        n_topics,
    };

    let source = generate_corpus(config, &latent, Role::Source, &source_vocab)?;
    let target = generate_corpus(config, &latent, Role::Target, &target_vocab)?;

    Ok(SyntheticBenchmark {
        source,
        target,
        source_ontology,
        target_ontology,
        truth: GroundTruthMap::new(truth_pairs),
    })
}

fn generate_corpus(
    config: &GeneratorConfig,
    latent: &Latent,
    role: Role,
    vocab: &[Code],
) -> Result<Corpus> {
    let side = match role {
        Role::Source => "source",
        Role::Target => "target",
    };
    let visit_pois = Poisson::new((config.visits_mean - 1.0).max(1e-9)).expect("valid poisson");
    let code_pois =
        Poisson::new((config.codes_per_visit_mean - 1.0).max(1e-9)).expect("valid poisson");

    let mut patients = Vec::with_capacity(config.n_patients);
    for p in 0..config.n_patients {
        let mut rng = substream(config.seed, &format!("gen-{side}-patient"), p as u64);
        let theta = prevalence_dirichlet(
            config.topic_concentration,
            &latent.prevalence,
            &mut rng,
        );
        let theta_cdf = cdf_from_weights(&theta);

        let n_visits = 1 + visit_pois.sample(&mut rng) as usize;
        let mut visits = Vec::with_capacity(n_visits);
        let mut risk_tokens = 0usize;
        let mut total_tokens = 0usize;
        for _ in 0..n_visits {
            let n_codes = 1 + code_pois.sample(&mut rng) as usize;
            let mut codes = Vec::with_capacity(n_codes);
            let mut sev_sum = 0.0;
            for _ in 0..n_codes {
                let topic = sample_cdf(&theta_cdf, &mut rng);
                let concept = sample_cdf(&latent.topic_cdf[topic], &mut rng);
                sev_sum += latent.severity[concept];
                if latent.risk[concept] {
                    risk_tokens += 1;
                }
                total_tokens += 1;
                let code = match role {
                    Role::Source => concept,
                    Role::Target => {
                        let s = sample_cdf(&latent.concept_usage_cdf[concept], &mut rng);
                        latent.concept_targets[concept][s]
                    }
                };
                codes.push(code);
            }
            let sev = sev_sum / n_codes as f64;
            let mu = 0.4f64.ln() + sev * (25f64.ln() - 0.4f64.ln());
            let los = LogNormal::new(mu, 0.55).expect("valid lognormal").sample(&mut rng);
            visits.push(Visit { codes, los_days: los });
        }

        let load = risk_tokens as f64 / total_tokens as f64;
        let logit = 8.0 * (load - 0.3);
        let p_death = 1.0 / (1.0 + (-logit).exp());
        let mortality = rng.random::<f64>() < p_death;

        patients.push(Patient {
            id: format!("{}p{p:05}", &side[..1]),
            visits,
            mortality,
        });
    }
    Corpus::new(role, vocab.to_vec(), patients)
}

/// Returns an ontology with the same category skeleton but leaves assigned
/// to random positions; used by the random-ontology ablation.
pub fn shuffle_ontology_leaves(ontology: &Ontology, seed: u64) -> Ontology {
    use rand::seq::SliceRandom;
    let leaves: Vec<String> = ontology.leaves().iter().map(|s| s.to_string()).collect();
    let mut permuted = leaves.clone();
    permuted.shuffle(&mut stream(seed, "shuffle-ontology"));
    let replace: std::collections::HashMap<&str, &str> = leaves
        .iter()
        .map(String::as_str)
        .zip(permuted.iter().map(String::as_str))
        .collect();
    let edges: Vec<(String, String)> = ontology
        .edges()
        .iter()
        .map(|(p, c)| {
            let c2 = replace.get(c.as_str()).map_or(c.clone(), |s| s.to_string());
            (p.clone(), c2)
        })
        .collect();
    Ontology::new(ontology.root.clone(), &edges).expect("permuted ontology stays valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(split_max: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            concept_tree_depth: 3,
            branching: 3,
            split_max,
            n_patients: 50,
            visits_mean: 2.0,
            codes_per_visit_mean: 3.0,
            topic_concentration: 0.4,
            risk_concept_fraction: 0.3,
            seed,
        }
    }

    #[test]
    fn split_max_one_is_a_bijection() {
        let bench = generate_synthetic(&small_config(1, 7)).unwrap();
        assert_eq!(bench.source.vocab_size(), 27);
        assert_eq!(bench.target.vocab_size(), 27);
        assert_eq!(bench.truth.pairs.len(), 27);
        let mut sources: Vec<&str> = bench.truth.pairs.iter().map(|(_, s)| s.as_str()).collect();
        sources.sort();
        sources.dedup();
        assert_eq!(sources.len(), 27, "not a bijection");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small_config(3, 7)).unwrap();
        let b = generate_synthetic(&small_config(3, 7)).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.source_ontology, b.source_ontology);
        assert_eq!(a.target_ontology, b.target_ontology);
    }

    #[test]
    fn truth_covers_every_target_code() {
        let bench = generate_synthetic(&small_config(3, 7)).unwrap();
        let n_t = bench.target.vocab_size();
        assert!((27..=81).contains(&n_t), "|C_T| = {n_t}");
        let targets = bench.truth.targets();
        assert_eq!(targets.len(), n_t, "truth must cover all target codes");
        for code in &bench.target.vocabulary {
            let partners = bench.truth.sources_of(&code.id);
            assert_eq!(partners.len(), 1);
            assert!(bench.source.index_of(partners[0]).is_some());
        }
        bench.truth.validate(&bench.target, &bench.source).unwrap();
    }

    #[test]
    fn ontology_leaves_match_vocabularies() {
        let bench = generate_synthetic(&small_config(2, 9)).unwrap();
        let s_leaves = bench.source_ontology.leaves();
        assert_eq!(s_leaves.len(), bench.source.vocab_size());
        for code in &bench.source.vocabulary {
            assert!(bench.source_ontology.is_leaf(&code.id));
        }
        for code in &bench.target.vocabulary {
            assert!(bench.target_ontology.is_leaf(&code.id));
        }
        assert_eq!(bench.source_ontology.max_depth(), 3);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut c = small_config(1, 7);
        c.concept_tree_depth = 1;
        assert!(generate_synthetic(&c).is_err());
        let mut c = small_config(1, 7);
        c.branching = 1;
        assert!(generate_synthetic(&c).is_err());
        let mut c = small_config(1, 7);
        c.n_patients = 0;
        assert!(generate_synthetic(&c).is_err());
        let mut c = small_config(1, 7);
        c.risk_concept_fraction = 1.0;
        assert!(generate_synthetic(&c).is_err());
    }

    #[test]
    fn labels_are_mixed() {
        let mut cfg = small_config(1, 3);
        cfg.n_patients = 400;
        let bench = generate_synthetic(&cfg).unwrap();
        let deaths = bench.target.patients.iter().filter(|p| p.mortality).count();
        let rate = deaths as f64 / 400.0;
        assert!((0.05..=0.8).contains(&rate), "mortality rate {rate}");
        let mut class_counts = [0usize; 4];
        for p in &bench.target.patients {
            for c in p.los_classes() {
                class_counts[c] += 1;
            }
        }
        assert!(class_counts.iter().all(|&c| c > 0), "{class_counts:?}");
    }

    /// Normalized concept co-occurrence of source and truth-mapped target
    /// corpora converge as the corpus grows.
    #[test]
    fn cooccurrence_gap_shrinks_with_corpus_size() {
        let gap = |n: usize| -> f64 {
            let mut cfg = small_config(1, 11);
            cfg.n_patients = n;
            let bench = generate_synthetic(&cfg).unwrap();
            let k = bench.source.vocab_size();
            // With split_max = 1 the truth is T{i} -> S{i} in index order.
            let count = |corpus: &Corpus| -> Vec<f64> {
                let mut m = vec![0.0; k * k];
                for p in &corpus.patients {
                    for v in &p.visits {
                        for (a, &ca) in v.codes.iter().enumerate() {
                            for &cb in v.codes.iter().skip(a + 1) {
                                if ca != cb {
                                    m[ca * k + cb] += 1.0;
                                    m[cb * k + ca] += 1.0;
                                }
                            }
                        }
                    }
                }
                let total: f64 = m.iter().sum::<f64>().max(1.0);
                m.iter().map(|v| v / total).collect()
            };
            let ms = count(&bench.source);
            let mt = count(&bench.target);
            ms.iter()
                .zip(&mt)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let g_small = gap(200);
        let g_large = gap(2000);
        assert!(
            g_large < g_small,
            "gap did not shrink: {g_small} -> {g_large}"
        );
    }

    #[test]
    fn split_label_distribution_stays_close_at_scale() {
        let mut cfg = small_config(1, 13);
        cfg.n_patients = 500;
        let bench = generate_synthetic(&cfg).unwrap();
        let global = bench.target.patients.iter().filter(|p| p.mortality).count() as f64 / 500.0;
        let (tr, va, te) = super::super::split_corpus(&bench.target, (0.7, 0.1, 0.2), 1).unwrap();
        for part in [&tr, &va, &te] {
            let rate = part.patients.iter().filter(|p| p.mortality).count() as f64
                / part.n_patients() as f64;
            assert!(
                (rate - global).abs() < 0.15,
                "split rate {rate} vs global {global}"
            );
        }
    }

    #[test]
    fn shuffled_ontology_keeps_leaves() {
        let bench = generate_synthetic(&small_config(2, 5)).unwrap();
        let shuffled = shuffle_ontology_leaves(&bench.target_ontology, 3);
        let mut a: Vec<&str> = bench.target_ontology.leaves();
        let mut b: Vec<&str> = shuffled.leaves();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_ne!(bench.target_ontology, shuffled);
        assert_eq!(shuffled.max_depth(), bench.target_ontology.max_depth());
    }
}
