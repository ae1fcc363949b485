//! Sweep leaf-pass cap, iteration budget, glove epochs.
use codealign::align::{ontology_align, AlignConfig};
use codealign::corpus::{generate_synthetic, GeneratorConfig};
use codealign::embedding::{embed_corpus, GloveConfig};
use codealign::eval::hit_at_k;

fn main() {
    for &epochs in &[200usize, 300] {
        for &leaf_k in &[32usize, 48, 64, 96, 500] {
            for &iters in &[20usize, 50] {
                let mut hits = Vec::new();
                for seed in [1u64, 2, 3] {
                    let mut gen = GeneratorConfig::default();
                    gen.seed = seed;
                    let bench = generate_synthetic(&gen).unwrap();
                    let mut glove = GloveConfig::default();
                    glove.dim = 32;
                    glove.epochs = epochs;
                    glove.seed = seed;
                    let e_s = embed_corpus(&bench.source, &glove).unwrap().embedding;
                    glove.seed = seed + 7;
                    let e_t = embed_corpus(&bench.target, &glove).unwrap().embedding;
                    let freq_t = bench.target.code_frequencies();
                    let freq_s = bench.source.code_frequencies();
                    let mut cfg = AlignConfig::default();
                    cfg.seed = seed;
                    cfg.leaf_k = Some(leaf_k);
                    cfg.procrustes_iters = iters;
                    let w = ontology_align(
                        &e_t, &e_s,
                        &bench.target_ontology, &bench.source_ontology,
                        Some((freq_t.as_slice(), freq_s.as_slice())), &cfg,
                    ).unwrap().w;
                    let r = hit_at_k(&w, &e_t, &e_s, &bench.truth, 10).unwrap();
                    hits.push(r.hit_at_k);
                }
                println!(
                    "epochs {epochs} leaf_k {leaf_k:3} iters {iters}: hits {:?} mean {:.4}",
                    hits.iter().map(|h| (h * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                    hits.iter().sum::<f64>() / 3.0
                );
            }
        }
    }
}
