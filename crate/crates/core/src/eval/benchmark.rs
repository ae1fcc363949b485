//! Desk-scale benchmark harness: runs the reference, baseline, ablation,
//! and full-pipeline methods over the synthetic two-vocabulary benchmark
//! and tabulates task and mapping metrics.
//!
//! Task metrics are bootstrap means/stds on the target test split, averaged
//! over seeds (reported std is the root mean square of the per-seed
//! bootstrap stds). Mapping metrics (similarity, hit@k) report mean and
//! standard deviation across seeds.

use crate::align::{code_level_align, kmeans_align, ontology_align, AlignConfig, GroupingMode};
use crate::corpus::{
    generate_synthetic, shuffle_ontology_leaves, split_corpus, Corpus, GeneratorConfig,
};
use crate::embedding::{embed_corpus, EmbeddingMatrix, GloveConfig};
use crate::numerics::{random_orthogonal, Matrix};
use crate::refine::{
    los_probabilities, mortality_scores, refine_mapping, train_backbone_direct, train_task_model,
    transfer_learning, Backbone, BackboneKind, EmbParam, RefineConfig, TaskKind, TaskTrainConfig,
};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    FullLabel,
    DirectTraining,
    TransferLearning,
    CodeLevelOnly,
    Step2Only,
    Step1Only,
    Step1RandomOntology,
    Step1KMeans,
    FullPipeline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FullLabel => "full_label",
            Method::DirectTraining => "direct_training",
            Method::TransferLearning => "transfer_learning",
            Method::CodeLevelOnly => "code_level_only",
            Method::Step2Only => "step2_only",
            Method::Step1Only => "step1_only",
            Method::Step1RandomOntology => "step1_random_ontology",
            Method::Step1KMeans => "step1_kmeans",
            Method::FullPipeline => "full_pipeline",
        }
    }

    pub fn all() -> Vec<Method> {
        vec![
            Method::FullLabel,
            Method::DirectTraining,
            Method::TransferLearning,
            Method::CodeLevelOnly,
            Method::Step2Only,
            Method::Step1Only,
            Method::Step1RandomOntology,
            Method::Step1KMeans,
            Method::FullPipeline,
        ]
    }

    fn maps_embeddings(self) -> bool {
        matches!(
            self,
            Method::CodeLevelOnly
                | Method::Step2Only
                | Method::Step1Only
                | Method::Step1RandomOntology
                | Method::Step1KMeans
                | Method::FullPipeline
        )
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub generator: GeneratorConfig,
    pub embedding_dim: usize,
    pub glove: GloveConfig,
    pub align: AlignConfig,
    pub refine: RefineConfig,
    pub backbone: BackboneKind,
    pub tasks: Vec<TaskKind>,
    pub methods: Vec<Method>,
    /// Labeled target patients available to limited-label methods.
    pub label_budget: usize,
    pub seeds: Vec<u64>,
    pub bootstrap_n: usize,
    pub split_ratios: (f64, f64, f64),
    pub hit_k: usize,
    /// Cap for task-training epochs of the pretraining / direct / transfer
    /// loops.
    pub task_epochs: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            embedding_dim: 32,
            glove: GloveConfig::default(),
            align: AlignConfig::default(),
            refine: RefineConfig::default(),
            backbone: BackboneKind::Mlp,
            tasks: vec![TaskKind::Mortality, TaskKind::LengthOfStay],
            methods: Method::all(),
            label_budget: 100,
            seeds: vec![1, 2, 3],
            bootstrap_n: 1000,
            split_ratios: (0.7, 0.1, 0.2),
            hit_k: 10,
            task_epochs: 150,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkCell {
    pub method: Method,
    /// Task name, or "mapping" for alignment-quality metrics.
    pub task: String,
    pub metric: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkTable {
    pub cells: Vec<BenchmarkCell>,
}

impl BenchmarkTable {
    pub fn get(&self, method: Method, task: &str, metric: &str) -> Option<&BenchmarkCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.task == task && c.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,task,metric,mean,std,seed_count\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.method.as_str(),
                c.task,
                c.metric,
                c.mean,
                c.std,
                c.per_seed.len()
            ));
        }
        s
    }
}

/// Everything produced for one seed before per-method work: corpora,
/// splits, embeddings, and the pretrained backbones.
struct SeedFixture {
    seed: u64,
    source_train: Corpus,
    source_valid: Corpus,
    target_train: Corpus,
    target_valid: Corpus,
    target_test: Corpus,
    target_budget: Corpus,
    e_s: EmbeddingMatrix,
    e_t: EmbeddingMatrix,
    bench: crate::corpus::SyntheticBenchmark,
    freq_t: Vec<f64>,
    freq_s: Vec<f64>,
}

fn build_seed_fixture(config: &BenchmarkConfig, seed: u64) -> Result<SeedFixture> {
    let mut gen_cfg = config.generator.clone();
    gen_cfg.seed = seed;
    let bench = generate_synthetic(&gen_cfg)?;
    let (source_train, source_valid, _source_test) =
        split_corpus(&bench.source, config.split_ratios, seed)?;
    let (target_train, target_valid, target_test) =
        split_corpus(&bench.target, config.split_ratios, seed.wrapping_add(101))?;
    let budget = config.label_budget.min(target_train.n_patients());
    let target_budget =
        target_train.with_patients(target_train.patients[..budget].to_vec())?;

    let mut glove = config.glove.clone();
    glove.dim = config.embedding_dim;
    glove.seed = seed;
    let e_s = embed_corpus(&bench.source, &glove)?.embedding;
    let mut glove_t = glove.clone();
    glove_t.seed = seed.wrapping_add(7);
    let e_t = embed_corpus(&bench.target, &glove_t)?.embedding;

    let freq_t = bench.target.code_frequencies();
    let freq_s = bench.source.code_frequencies();
    Ok(SeedFixture {
        seed,
        source_train,
        source_valid,
        target_train,
        target_valid,
        target_test,
        target_budget,
        e_s,
        e_t,
        bench,
        freq_t,
        freq_s,
    })
}

fn pretrain_backbone(
    config: &BenchmarkConfig,
    fx: &SeedFixture,
    task: TaskKind,
) -> Result<Backbone> {
    let backbone = Backbone::new(config.backbone, task, config.embedding_dim, fx.seed);
    let trained = train_task_model(
        backbone,
        EmbParam::frozen(fx.e_s.matrix().clone()),
        &fx.source_train,
        &fx.source_valid,
        &TaskTrainConfig {
            epochs: config.task_epochs,
            patience: config.refine.early_stop_patience,
            batch_size: config.refine.batch_size,
            learning_rate: config.refine.learning_rate,
            train_backbone: true,
            seed: fx.seed,
        },
    )?;
    Ok(trained.backbone)
}

/// Mapping matrices produced once per seed and shared across tasks.
struct SeedMappings {
    step1: Matrix,
    step1_random_ontology: Matrix,
    step1_kmeans: Matrix,
    code_level: Matrix,
}

fn build_mappings(config: &BenchmarkConfig, fx: &SeedFixture) -> Result<SeedMappings> {
    let mut align_cfg = config.align.clone();
    align_cfg.seed = fx.seed;
    align_cfg.grouping = GroupingMode::Ontology;
    let freqs = Some((fx.freq_t.as_slice(), fx.freq_s.as_slice()));
    let step1 = ontology_align(
        &fx.e_t,
        &fx.e_s,
        &fx.bench.target_ontology,
        &fx.bench.source_ontology,
        freqs,
        &align_cfg,
    )?
    .w;
    let random_t = shuffle_ontology_leaves(&fx.bench.target_ontology, fx.seed.wrapping_add(11));
    let random_s = shuffle_ontology_leaves(&fx.bench.source_ontology, fx.seed.wrapping_add(13));
    let step1_random_ontology =
        ontology_align(&fx.e_t, &fx.e_s, &random_t, &random_s, freqs, &align_cfg)?.w;
    let step1_kmeans = kmeans_align(&fx.e_t, &fx.e_s, freqs, &align_cfg)?.w;
    let code_level = code_level_align(&fx.e_t, &fx.e_s, freqs, &align_cfg)?.w;
    Ok(SeedMappings {
        step1,
        step1_random_ontology,
        step1_kmeans,
        code_level,
    })
}

/// Per-seed scalar results keyed by (method, task, metric).
type SeedValues = Vec<((Method, String, String), f64)>;

fn task_metrics(
    method: Method,
    task: TaskKind,
    backbone: &mut Backbone,
    table: &Matrix,
    test: &Corpus,
    n_bootstrap: usize,
    seed: u64,
    out: &mut SeedValues,
) -> Result<()> {
    match task {
        TaskKind::Mortality => {
            let (scores, labels) = mortality_scores(backbone, table, test)?;
            let report = crate::eval::mortality_report(&scores, &labels, n_bootstrap, seed)?;
            for row in report.rows {
                out.push((
                    (method, row.task.clone(), row.metric.clone()),
                    row.mean,
                ));
                out.push((
                    (method, row.task, format!("{}_std", row.metric)),
                    row.std,
                ));
            }
        }
        TaskKind::LengthOfStay => {
            let per_patient = los_probabilities(backbone, table, test)?;
            let report = crate::eval::los_report(&per_patient, n_bootstrap, seed)?;
            for row in report.rows {
                out.push((
                    (method, row.task.clone(), row.metric.clone()),
                    row.mean,
                ));
                out.push((
                    (method, row.task, format!("{}_std", row.metric)),
                    row.std,
                ));
            }
        }
    }
    Ok(())
}

fn run_seed(config: &BenchmarkConfig, seed: u64) -> Result<SeedValues> {
    let fx = build_seed_fixture(config, seed)?;
    let maps = build_mappings(config, &fx)?;
    let mut out: SeedValues = Vec::new();

    // Mapping quality of every aligning method.
    for (method, w) in [
        (Method::Step1Only, &maps.step1),
        (Method::Step1RandomOntology, &maps.step1_random_ontology),
        (Method::Step1KMeans, &maps.step1_kmeans),
        (Method::CodeLevelOnly, &maps.code_level),
    ] {
        if !config.methods.contains(&method) {
            continue;
        }
        let report = crate::eval::hit_at_k(w, &fx.e_t, &fx.e_s, &fx.bench.truth, config.hit_k)?;
        out.push(((method, "mapping".into(), format!("hit_at_{}", config.hit_k)), report.hit_at_k));
        out.push(((method, "mapping".into(), "similarity".into()), report.similarity));
        out.push((
            (method, "mapping".into(), "orthogonality_defect".into()),
            w.orthogonality_defect(),
        ));
    }

    let task_cfg = |train_backbone: bool| TaskTrainConfig {
        epochs: config.task_epochs,
        patience: config.refine.early_stop_patience,
        batch_size: config.refine.batch_size,
        learning_rate: config.refine.learning_rate,
        train_backbone,
        seed,
    };

    for &task in &config.tasks {
        let pretrained = pretrain_backbone(config, &fx, task)?;

        for &method in &config.methods {
            let mut refine_cfg = config.refine.clone();
            refine_cfg.seed = seed;
            match method {
                Method::FullLabel => {
                    let trained = train_backbone_direct(
                        config.backbone,
                        task,
                        config.embedding_dim,
                        &fx.target_train,
                        &fx.target_valid,
                        &task_cfg(true),
                    )?;
                    let mut model = trained.backbone;
                    task_metrics(
                        method,
                        task,
                        &mut model,
                        &trained.table,
                        &fx.target_test,
                        config.bootstrap_n,
                        seed,
                        &mut out,
                    )?;
                }
                Method::DirectTraining => {
                    let trained = train_backbone_direct(
                        config.backbone,
                        task,
                        config.embedding_dim,
                        &fx.target_budget,
                        &fx.target_valid,
                        &task_cfg(true),
                    )?;
                    let mut model = trained.backbone;
                    task_metrics(
                        method,
                        task,
                        &mut model,
                        &trained.table,
                        &fx.target_test,
                        config.bootstrap_n,
                        seed,
                        &mut out,
                    )?;
                }
                Method::TransferLearning => {
                    let trained = transfer_learning(
                        &pretrained,
                        fx.e_t.matrix().clone(),
                        &fx.target_budget,
                        &fx.target_valid,
                        &task_cfg(true),
                    )?;
                    let mut model = trained.backbone;
                    task_metrics(
                        method,
                        task,
                        &mut model,
                        &trained.table,
                        &fx.target_test,
                        config.bootstrap_n,
                        seed,
                        &mut out,
                    )?;
                }
                Method::CodeLevelOnly
                | Method::Step1Only
                | Method::Step1RandomOntology
                | Method::Step1KMeans => {
                    let w = match method {
                        Method::CodeLevelOnly => &maps.code_level,
                        Method::Step1Only => &maps.step1,
                        Method::Step1RandomOntology => &maps.step1_random_ontology,
                        _ => &maps.step1_kmeans,
                    };
                    let table = fx.e_t.matrix().matmul(w);
                    let mut model = pretrained.clone();
                    task_metrics(
                        method,
                        task,
                        &mut model,
                        &table,
                        &fx.target_test,
                        config.bootstrap_n,
                        seed,
                        &mut out,
                    )?;
                }
                Method::Step2Only | Method::FullPipeline => {
                    let w0 = if method == Method::Step2Only {
                        random_orthogonal(
                            config.embedding_dim,
                            &mut stream(seed, "step2-only-init"),
                        )
                    } else {
                        maps.step1.clone()
                    };
                    let refined = refine_mapping(
                        &w0,
                        &fx.e_t,
                        &fx.e_s,
                        &pretrained,
                        &fx.target_budget,
                        &fx.target_valid,
                        &refine_cfg,
                    )?;
                    let table = fx.e_t.matrix().matmul(&refined.mapping);
                    let mut model = refined.backbone.clone();
                    task_metrics(
                        method,
                        task,
                        &mut model,
                        &table,
                        &fx.target_test,
                        config.bootstrap_n,
                        seed,
                        &mut out,
                    )?;
                    if task == config.tasks[0] {
                        let report = crate::eval::hit_at_k(
                            &refined.mapping,
                            &fx.e_t,
                            &fx.e_s,
                            &fx.bench.truth,
                            config.hit_k,
                        )?;
                        out.push((
                            (method, "mapping".into(), format!("hit_at_{}", config.hit_k)),
                            report.hit_at_k,
                        ));
                        out.push((
                            (method, "mapping".into(), "similarity".into()),
                            report.similarity,
                        ));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Runs every configured method over every seed and aggregates the table.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkTable> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidConfig("benchmark needs at least one seed".into()));
    }
    if config.tasks.is_empty() {
        return Err(Error::InvalidConfig("benchmark needs at least one task".into()));
    }
    let mut per_seed: Vec<SeedValues> = Vec::new();
    for &seed in &config.seeds {
        per_seed.push(run_seed(config, seed)?);
    }

    // Aggregate by key, preserving first-appearance order.
    let mut keys: Vec<(Method, String, String)> = Vec::new();
    for values in &per_seed {
        for (key, _) in values {
            if !keys.contains(key) {
                keys.push(key.clone());
            }
        }
    }
    let mut cells = Vec::new();
    for key in keys {
        let vals: Vec<f64> = per_seed
            .iter()
            .flat_map(|sv| {
                sv.iter()
                    .filter(|(k, _)| *k == key)
                    .map(|(_, v)| *v)
                    .collect::<Vec<f64>>()
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = if key.2.ends_with("_std") {
            // aggregate bootstrap stds as a root mean square
            (vals.iter().map(|v| v * v).sum::<f64>() / n).sqrt()
        } else {
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        };
        cells.push(BenchmarkCell {
            method: key.0,
            task: key.1,
            metric: key.2,
            per_seed: vals,
            mean,
            std,
        });
    }
    Ok(BenchmarkTable { cells })
}
