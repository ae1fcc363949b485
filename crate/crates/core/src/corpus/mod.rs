//! Data model for coded visit sequences: corpora, ontologies, ground-truth
//! maps, splits, task labels, plus the synthetic two-vocabulary generator
//! and file ingestion.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;

use crate::{Error, Result};

mod generate;
mod io;

pub use generate::{generate_synthetic, shuffle_ontology_leaves, GeneratorConfig, SyntheticBenchmark};
pub use io::{
    load_corpus, load_ontology, load_truth, save_corpus, save_ontology, save_truth,
};

/// A single code of one coding system; `index` is its 0-based position in
/// the owning corpus vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Code {
    pub id: String,
    pub index: usize,
}

/// One visit: the codes recorded (duplicates permitted, never empty) and the
/// length of stay in days.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    /// Indices into the corpus vocabulary.
    pub codes: Vec<usize>,
    pub los_days: f64,
}

impl Visit {
    /// Length-of-stay class of this visit; `los_days` is validated
    /// non-negative at corpus construction.
    pub fn los_class(&self) -> usize {
        derive_los_class(self.los_days).expect("validated at construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub id: String,
    pub visits: Vec<Visit>,
    pub mortality: bool,
}

impl Patient {
    pub fn los_classes(&self) -> Vec<usize> {
        self.visits.iter().map(Visit::los_class).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Target,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::Target => "target",
        }
    }
}

/// A corpus of patients over one coding vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub role: Role,
    pub patients: Vec<Patient>,
    pub vocabulary: Vec<Code>,
    index_by_id: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.role == other.role
            && self.patients == other.patients
            && self.vocabulary == other.vocabulary
    }
}

impl Corpus {
    /// Validates the vocabulary (unique ids, contiguous indices) and every
    /// visit (non-empty, in-range codes, non-negative length of stay).
    pub fn new(role: Role, vocabulary: Vec<Code>, patients: Vec<Patient>) -> Result<Self> {
        let mut index_by_id = HashMap::with_capacity(vocabulary.len());
        for (i, code) in vocabulary.iter().enumerate() {
            if code.index != i {
                return Err(Error::InvalidConfig(format!(
                    "code {} has index {} at position {i}",
                    code.id, code.index
                )));
            }
            if index_by_id.insert(code.id.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate code id {}", code.id)));
            }
        }
        for p in &patients {
            if p.visits.is_empty() {
                return Err(Error::InvalidConfig(format!("patient {} has no visits", p.id)));
            }
            for v in &p.visits {
                if v.codes.is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "patient {} has a visit without codes",
                        p.id
                    )));
                }
                if !v.los_days.is_finite() || v.los_days < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "patient {} has invalid los_days {}",
                        p.id, v.los_days
                    )));
                }
                for &c in &v.codes {
                    if c >= vocabulary.len() {
                        return Err(Error::InvalidConfig(format!(
                            "patient {} references code index {c} outside vocabulary",
                            p.id
                        )));
                    }
                }
            }
        }
        Ok(Self {
            role,
            patients,
            vocabulary,
            index_by_id,
        })
    }

    pub fn index_of(&self, code_id: &str) -> Option<usize> {
        self.index_by_id.get(code_id).copied()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    /// Occurrence count of every code across all visits (with multiplicity).
    pub fn code_frequencies(&self) -> Vec<f64> {
        let mut freq = vec![0.0; self.vocabulary.len()];
        for p in &self.patients {
            for v in &p.visits {
                for &c in &v.codes {
                    freq[c] += 1.0;
                }
            }
        }
        freq
    }

    /// New corpus with the same vocabulary restricted to the given patients.
    pub fn with_patients(&self, patients: Vec<Patient>) -> Result<Corpus> {
        Corpus::new(self.role, self.vocabulary.clone(), patients)
    }
}

/// Length-of-stay class bins: `<1` day is 0, `[1,7)` is 1, `[7,14)` is 2,
/// `>=14` is 3.
pub fn derive_los_class(los_days: f64) -> Result<usize> {
    if !los_days.is_finite() || los_days < 0.0 {
        return Err(Error::InvalidConfig(format!("negative los_days {los_days}")));
    }
    Ok(if los_days < 1.0 {
        0
    } else if los_days < 7.0 {
        1
    } else if los_days < 14.0 {
        2
    } else {
        3
    })
}

/// Rooted hierarchy over codes: leaves are usable codes, internal nodes are
/// categories. Stored as a DAG; level lookups follow each node's first
/// declared parent, which is the unique parent in generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct Ontology {
    pub root: String,
    nodes: Vec<String>,
    edge_list: Vec<(String, String)>,
    children: BTreeMap<String, Vec<String>>,
    parents: BTreeMap<String, Vec<String>>,
    level: HashMap<String, usize>,
}

impl Ontology {
    /// Builds and validates: single root with no parents, acyclic, every
    /// node reachable from the root.
    pub fn new(root: String, edges: &[(String, String)]) -> Result<Self> {
        let mut nodes = vec![root.clone()];
        let mut seen: HashSet<String> = nodes.iter().cloned().collect();
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (parent, child) in edges {
            if parent == child {
                return Err(Error::InvalidConfig(format!("self-loop on node {parent}")));
            }
            for n in [parent, child] {
                if seen.insert(n.clone()) {
                    nodes.push(n.clone());
                }
            }
            children.entry(parent.clone()).or_default().push(child.clone());
            parents.entry(child.clone()).or_default().push(parent.clone());
        }
        if parents.contains_key(&root) {
            return Err(Error::InvalidConfig(format!("root {root} has a parent")));
        }

        // Reachability from root (referential integrity of the edge list).
        let mut reach: HashSet<&str> = HashSet::new();
        let mut stack = vec![root.as_str()];
        while let Some(n) = stack.pop() {
            if !reach.insert(n) {
                continue;
            }
            if let Some(cs) = children.get(n) {
                stack.extend(cs.iter().map(String::as_str));
            }
        }
        for n in &nodes {
            if !reach.contains(n.as_str()) {
                return Err(Error::UnknownNode(format!("{n} is not reachable from the root")));
            }
        }

        // Acyclicity by DFS coloring over all edges.
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Gray,
            Black,
        }
        let mut color: HashMap<&str, Color> =
            nodes.iter().map(|n| (n.as_str(), Color::White)).collect();
        // Iterative DFS with an explicit enter/exit marker.
        let mut stack: Vec<(&str, bool)> = vec![(root.as_str(), false)];
        while let Some((n, exiting)) = stack.pop() {
            if exiting {
                color.insert(n, Color::Black);
                continue;
            }
            match color[n] {
                Color::Gray => return Err(Error::InvalidConfig(format!("cycle through node {n}"))),
                Color::Black => continue,
                Color::White => {}
            }
            color.insert(n, Color::Gray);
            stack.push((n, true));
            if let Some(cs) = children.get(n) {
                for c in cs {
                    match color[c.as_str()] {
                        Color::Gray => {
                            return Err(Error::InvalidConfig(format!("cycle through node {c}")))
                        }
                        Color::White => stack.push((c.as_str(), false)),
                        Color::Black => {}
                    }
                }
            }
        }

        // Levels along the canonical (first-declared) parent chain.
        let mut level: HashMap<String, usize> = HashMap::new();
        level.insert(root.clone(), 0);
        for n in &nodes {
            if level.contains_key(n) {
                continue;
            }
            let mut chain = vec![n.clone()];
            let mut cur = n.clone();
            while !level.contains_key(&cur) {
                let p = parents
                    .get(&cur)
                    .and_then(|ps| ps.first())
                    .ok_or_else(|| Error::UnknownNode(format!("{cur} has no parent")))?
                    .clone();
                chain.push(p.clone());
                cur = p;
            }
            let mut l = level[&cur];
            for node in chain.iter().rev().skip(1) {
                l += 1;
                level.insert(node.clone(), l);
            }
        }

        Ok(Self {
            root,
            nodes,
            edge_list: edges.to_vec(),
            children,
            parents,
            level,
        })
    }

    pub fn contains(&self, node: &str) -> bool {
        self.level.contains_key(node)
    }

    pub fn is_leaf(&self, node: &str) -> bool {
        self.contains(node) && !self.children.contains_key(node)
    }

    /// Leaf nodes in declaration order.
    pub fn leaves(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| !self.children.contains_key(n.as_str()))
            .map(String::as_str)
            .collect()
    }

    /// Canonical (first-declared) parent of a node; `None` for the root.
    pub fn parent_of(&self, node: &str) -> Option<&str> {
        self.parents.get(node).and_then(|ps| ps.first()).map(String::as_str)
    }

    /// Level of a node (root is 0), along its canonical parent chain.
    pub fn level_of(&self, node: &str) -> Result<usize> {
        self.level
            .get(node)
            .copied()
            .ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    /// Depth of the deepest leaf.
    pub fn max_depth(&self) -> usize {
        self.leaves()
            .iter()
            .map(|l| self.level[*l])
            .max()
            .unwrap_or(0)
    }

    /// Edges in declaration order, for serialization.
    pub fn edges(&self) -> &[(String, String)] {
        &self.edge_list
    }

    /// The unique node at `level` on the root-to-leaf path of `code`.
    /// `level` 0 is the root; `level == depth(code)` is the code itself.
    pub fn ancestor(&self, code: &str, level: usize) -> Result<String> {
        if !self.is_leaf(code) {
            return Err(Error::UnknownNode(format!("{code} is not a leaf code")));
        }
        let mut path = vec![code];
        let mut cur = code;
        while cur != self.root {
            cur = self.parents[cur].first().expect("validated").as_str();
            path.push(cur);
        }
        path.reverse();
        let depth = path.len() - 1;
        if level > depth {
            return Err(Error::InvalidLevel { level, depth });
        }
        Ok(path[level].to_string())
    }
}

/// Oracle mapping from target code ids to their true source counterparts.
/// A target code may have several partners; in generated data it has
/// exactly one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthMap {
    pub pairs: Vec<(String, String)>,
}

impl GroundTruthMap {
    pub fn new(pairs: Vec<(String, String)>) -> Self {
        Self { pairs }
    }

    /// Distinct target ids in first-appearance order.
    pub fn targets(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.pairs
            .iter()
            .filter(|(t, _)| seen.insert(t.as_str()))
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn sources_of(&self, target: &str) -> Vec<&str> {
        self.pairs
            .iter()
            .filter(|(t, _)| t == target)
            .map(|(_, s)| s.as_str())
            .collect()
    }

    /// Checks that every referenced id exists in its corpus vocabulary.
    pub fn validate(&self, target: &Corpus, source: &Corpus) -> Result<()> {
        for (t, s) in &self.pairs {
            if target.index_of(t).is_none() {
                return Err(Error::UnknownCode(t.clone()));
            }
            if source.index_of(s).is_none() {
                return Err(Error::UnknownCode(s.clone()));
            }
        }
        Ok(())
    }
}

/// Splits a corpus into patient-disjoint (train, valid, test) corpora.
/// Train and valid take `floor(ratio * n)` patients each; test takes the
/// remainder. Deterministic per seed.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    let (r0, r1, r2) = ratios;
    if r0 <= 0.0 || r1 <= 0.0 || r2 <= 0.0 {
        return Err(Error::InvalidConfig("split ratios must be positive".into()));
    }
    if (r0 + r1 + r2 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios sum to {}",
            r0 + r1 + r2
        )));
    }
    let n = corpus.n_patients();
    if n < 3 {
        return Err(Error::InvalidConfig(format!(
            "cannot split a corpus of {n} patients three ways"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::stream(seed, "split");
    order.shuffle(&mut rng);
    let n_train = (n as f64 * r0).floor() as usize;
    let n_valid = (n as f64 * r1).floor() as usize;
    let take = |idx: &[usize]| -> Vec<Patient> {
        idx.iter().map(|&i| corpus.patients[i].clone()).collect()
    };
    let train = corpus.with_patients(take(&order[..n_train]))?;
    let valid = corpus.with_patients(take(&order[n_train..n_train + n_valid]))?;
    let test = corpus.with_patients(take(&order[n_train + n_valid..]))?;
    Ok((train, valid, test))
}
