//! File formats: corpora as JSON Lines (one patient per line), ontologies
//! and ground-truth maps as TSV. Loading then saving reproduces the bytes;
//! saving then loading reproduces the value.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Code, Corpus, GroundTruthMap, Ontology, Patient, Role, Visit};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct VisitRecord {
    codes: Vec<String>,
    los_days: f64,
}

#[derive(Serialize, Deserialize)]
struct PatientRecord {
    id: String,
    mortality: u8,
    visits: Vec<VisitRecord>,
}

/// One patient per line: `{"id": .., "mortality": 0|1, "visits": [..]}`.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for p in &corpus.patients {
        let rec = PatientRecord {
            id: p.id.clone(),
            mortality: p.mortality as u8,
            visits: p
                .visits
                .iter()
                .map(|v| VisitRecord {
                    codes: v.codes.iter().map(|&c| corpus.vocabulary[c].id.clone()).collect(),
                    los_days: v.los_days,
                })
                .collect(),
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::InvalidConfig(format!("serialize patient {}: {e}", p.id)))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Loads a corpus; the vocabulary is the set of distinct code ids in the
/// file, sorted lexicographically. Errors carry 1-based line numbers.
pub fn load_corpus(path: &Path, role: Role) -> Result<Corpus> {
    let file = fs::File::open(path)?;
    let mut records: Vec<(usize, PatientRecord)> = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatientRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.mortality > 1 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("mortality must be 0 or 1, got {}", rec.mortality),
            });
        }
        if rec.visits.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("patient {} has no visits", rec.id),
            });
        }
        for v in &rec.visits {
            if v.codes.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("patient {} has a visit with an empty code list", rec.id),
                });
            }
            if !v.los_days.is_finite() || v.los_days < 0.0 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("invalid los_days {}", v.los_days),
                });
            }
            ids.extend(v.codes.iter().cloned());
        }
        records.push((i + 1, rec));
    }
    let vocabulary: Vec<Code> = ids
        .into_iter()
        .enumerate()
        .map(|(index, id)| Code { id, index })
        .collect();
    let lookup: std::collections::HashMap<&str, usize> = vocabulary
        .iter()
        .map(|c| (c.id.as_str(), c.index))
        .collect();
    let patients = records
        .into_iter()
        .map(|(_line, rec)| Patient {
            id: rec.id,
            mortality: rec.mortality == 1,
            visits: rec
                .visits
                .into_iter()
                .map(|v| Visit {
                    codes: v.codes.iter().map(|id| lookup[id.as_str()]).collect(),
                    los_days: v.los_days,
                })
                .collect(),
        })
        .collect();
    Corpus::new(role, vocabulary, patients)
}

/// One `parent<TAB>child` edge per line; the root is the reserved id `ROOT`.
pub fn save_ontology(ontology: &Ontology, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for (p, c) in ontology.edges() {
        writeln!(out, "{p}\t{c}")?;
    }
    Ok(())
}

pub fn load_ontology(path: &Path) -> Result<Ontology> {
    let file = fs::File::open(path)?;
    let mut edges = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(p), Some(c), None) if !p.is_empty() && !c.is_empty() => {
                edges.push((p.to_string(), c.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected 'parent<TAB>child'".into(),
                })
            }
        }
    }
    Ontology::new("ROOT".into(), &edges)
}

/// One `target_code<TAB>source_code` pair per line.
pub fn save_truth(truth: &GroundTruthMap, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for (t, s) in &truth.pairs {
        writeln!(out, "{t}\t{s}")?;
    }
    Ok(())
}

pub fn load_truth(path: &Path) -> Result<GroundTruthMap> {
    let file = fs::File::open(path)?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(s), None) if !t.is_empty() && !s.is_empty() => {
                pairs.push((t.to_string(), s.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected 'target_code<TAB>source_code'".into(),
                })
            }
        }
    }
    Ok(GroundTruthMap::new(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GeneratorConfig};

    fn bench() -> crate::corpus::SyntheticBenchmark {
        generate_synthetic(&GeneratorConfig {
            concept_tree_depth: 2,
            branching: 3,
            split_max: 2,
            n_patients: 20,
            visits_mean: 2.0,
            codes_per_visit_mean: 3.0,
            topic_concentration: 0.5,
            risk_concept_fraction: 0.3,
            seed: 17,
        })
        .unwrap()
    }

    #[test]
    fn corpus_round_trip() {
        let b = bench();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("target.jsonl");
        save_corpus(&b.target, &path).unwrap();
        let loaded = load_corpus(&path, Role::Target).unwrap();
        assert_eq!(b.target, loaded);
    }

    #[test]
    fn ontology_round_trip() {
        let b = bench();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("onto.tsv");
        save_ontology(&b.source_ontology, &path).unwrap();
        let loaded = load_ontology(&path).unwrap();
        assert_eq!(b.source_ontology, loaded);
    }

    #[test]
    fn truth_round_trip() {
        let b = bench();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.tsv");
        save_truth(&b.truth, &path).unwrap();
        let loaded = load_truth(&path).unwrap();
        assert_eq!(b.truth, loaded);
    }

    #[test]
    fn empty_code_list_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"p0","mortality":0,"visits":[{"codes":["a"],"los_days":1.0}]}"#,
                "\n",
                r#"{"id":"p1","mortality":1,"visits":[{"codes":[],"los_days":2.0}]}"#,
                "\n"
            ),
        )
        .unwrap();
        match load_corpus(&path, Role::Source) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("expected line-2 parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"p0\"\n").unwrap();
        match load_corpus(&path, Role::Source) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected line-1 parse error, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_ontology_edge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("onto.tsv");
        std::fs::write(&path, "ROOT\tA\nX\tY\n").unwrap();
        match load_ontology(&path) {
            Err(Error::UnknownNode(_)) => {}
            other => panic!("expected unknown-node error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_tsv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("onto.tsv");
        std::fs::write(&path, "ROOT\tA\njust-one-field\n").unwrap();
        match load_ontology(&path) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("expected line-2 parse error, got {other:?}"),
        }
    }

    #[test]
    fn truth_validation_names_missing_code() {
        let b = bench();
        let mut truth = b.truth.clone();
        truth.pairs.push(("Zmissing".into(), b.truth.pairs[0].1.clone()));
        match truth.validate(&b.target, &b.source) {
            Err(Error::UnknownCode(id)) => assert_eq!(id, "Zmissing"),
            other => panic!("expected unknown-code error, got {other:?}"),
        }
    }
}
