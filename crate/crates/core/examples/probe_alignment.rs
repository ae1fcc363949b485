//! Scratch probe: step-1 mapping quality on the default benchmark.
use codealign::align::{kmeans_align, ontology_align, code_level_align, AlignConfig};
use codealign::corpus::{generate_synthetic, shuffle_ontology_leaves, GeneratorConfig};
use codealign::embedding::{embed_corpus, GloveConfig};
use codealign::eval::hit_at_k;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    for seed in [1u64, 2, 3, 4, 5] {
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
        let freqs = Some((freq_t.as_slice(), freq_s.as_slice()));
        let mut cfg = AlignConfig::default();
        cfg.seed = seed;
        let t0 = std::time::Instant::now();
        let w = ontology_align(&e_t, &e_s, &bench.target_ontology, &bench.source_ontology, freqs, &cfg).unwrap().w;
        let r = hit_at_k(&w, &e_t, &e_s, &bench.truth, 10).unwrap();
        let wk = kmeans_align(&e_t, &e_s, freqs, &cfg).unwrap().w;
        let rk = hit_at_k(&wk, &e_t, &e_s, &bench.truth, 10).unwrap();
        let wc = code_level_align(&e_t, &e_s, freqs, &cfg).unwrap().w;
        let rc = hit_at_k(&wc, &e_t, &e_s, &bench.truth, 10).unwrap();
        let rt = shuffle_ontology_leaves(&bench.target_ontology, seed + 11);
        let rs = shuffle_ontology_leaves(&bench.source_ontology, seed + 13);
        let wr = ontology_align(&e_t, &e_s, &rt, &rs, freqs, &cfg).unwrap().w;
        let rr = hit_at_k(&wr, &e_t, &e_s, &bench.truth, 10).unwrap();
        println!(
            "seed {seed}: |C_T|={} |C_S|={} onto hit@10={:.4} sim={:.4} | kmeans {:.4} | code-level {:.4} | rand-onto {:.4} | defect {:.2e} | {:?}",
            bench.target.vocab_size(), bench.source.vocab_size(),
            r.hit_at_k, r.similarity, rk.hit_at_k, rc.hit_at_k, rr.hit_at_k,
            w.orthogonality_defect(), t0.elapsed()
        );
    }
}
