use super::*;
use crate::corpus::{Code, Corpus, Patient, Role, Visit};
use crate::rng::stream;

fn zeroed_discriminator(dim: usize) -> Discriminator {
    let mut d = Discriminator::new(dim, 1);
    for i in 0..d.n_params() {
        d.set_param(i, 0.0);
    }
    d
}

fn const_embedding(ids: &[&str], rows: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::new(
        ids.iter().map(|s| s.to_string()).collect(),
        Matrix::from_rows(rows).unwrap(),
    )
    .unwrap()
}

/// Two-code separable corpus: patients of class 1 carry code 0, class 0
/// carry code 1.
fn separable_corpus(role: Role, prefix: &str, n: usize) -> Corpus {
    let vocab = vec![
        Code { id: format!("{prefix}0"), index: 0 },
        Code { id: format!("{prefix}1"), index: 1 },
    ];
    let patients = (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let code = if positive { 0 } else { 1 };
            Patient {
                id: format!("{prefix}p{i}"),
                visits: vec![Visit { codes: vec![code, code, code], los_days: 2.0 }],
                mortality: positive,
            }
        })
        .collect();
    Corpus::new(role, vocab, patients).unwrap()
}

#[test]
fn indifferent_discriminator_loss_is_two_ln_two() {
    let mut d = zeroed_discriminator(3);
    let batch = Matrix::from_rows(&[vec![1.0, 0.5, -0.5], vec![0.1, 0.2, 0.3]]).unwrap();
    let loss = discriminator_loss(&mut d, &batch, &batch, &Matrix::identity(3)).unwrap();
    assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12, "loss {loss}");
}

#[test]
fn perfect_discriminator_loss_is_near_zero() {
    let loss =
        adversarial_loss_from_probs(&[1.0 - 1e-7, 1.0 - 1e-7], &[1e-7, 1e-7]).unwrap();
    assert!(loss < 1e-6, "loss {loss}");
    // exact 0 / 1 are clamped before the logs
    let clamped = adversarial_loss_from_probs(&[1.0], &[0.0]).unwrap();
    assert!(clamped.is_finite() && clamped < 1e-6);
}

#[test]
fn discriminator_loss_hand_value() {
    // single pair: −ln 0.8 − ln 0.7
    let loss = adversarial_loss_from_probs(&[0.8], &[0.3]).unwrap();
    let expect = -(0.8f64.ln()) - (0.7f64.ln());
    assert!((loss - expect).abs() < 1e-12);
    assert!((expect - 0.5798).abs() < 1e-4);
}

#[test]
fn generator_loss_values() {
    assert!(generator_loss_from_probs(&[1.0 - 1e-7]).unwrap() < 1e-6);
    let half = generator_loss_from_probs(&[0.5, 0.5]).unwrap();
    assert!((half - 2f64.ln()).abs() < 1e-12);
    let quarter = generator_loss_from_probs(&[0.25]).unwrap();
    assert!((quarter - 4f64.ln()).abs() < 1e-12);
    // end to end through an indifferent discriminator
    let mut d = zeroed_discriminator(2);
    let batch = Matrix::from_rows(&[vec![0.3, -0.4]]).unwrap();
    let loss = generator_loss(&mut d, &batch, &Matrix::identity(2)).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn classification_loss_uniform_and_hand_logits() {
    let corpus = separable_corpus(Role::Target, "t", 4);
    let e_t = const_embedding(&["t0", "t1"], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let patients: Vec<&Patient> = corpus.patients.iter().collect();

    // zero-parameter backbone → uniform logits → ln 2
    let mut backbone = Backbone::new(BackboneKind::Mlp, TaskKind::Mortality, 2, 3);
    for i in 0..backbone.head.n_params() {
        backbone.head.set_param(i, 0.0);
    }
    let loss = classification_loss(&mut backbone, &patients, &e_t, &Matrix::identity(2)).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-12);

    // 4-class variant → ln 4
    let mut los = Backbone::new(BackboneKind::Mlp, TaskKind::LengthOfStay, 2, 3);
    for i in 0..los.head.n_params() {
        los.head.set_param(i, 0.0);
    }
    let loss = classification_loss(&mut los, &patients, &e_t, &Matrix::identity(2)).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);

    // logits (2, 0) via the output bias, true class 0
    let negative_only: Vec<&Patient> =
        corpus.patients.iter().filter(|p| !p.mortality).collect();
    let mut biased = Backbone::new(BackboneKind::Mlp, TaskKind::Mortality, 2, 3);
    for i in 0..biased.head.n_params() {
        biased.head.set_param(i, 0.0);
    }
    let n = biased.head.n_params();
    biased.head.set_param(n - 2, 2.0); // bias of class 0
    let loss =
        classification_loss(&mut biased, &negative_only, &e_t, &Matrix::identity(2)).unwrap();
    let expect = -(2f64.exp() / (2f64.exp() + 1.0)).ln();
    assert!((loss - expect).abs() < 1e-12);
    assert!((expect - 0.1269).abs() < 1e-4);
}

#[test]
fn jsd_properties_and_value() {
    assert!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap().abs() < 1e-15);
    let disjoint = jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert!((disjoint - 2f64.ln()).abs() < 1e-12);

    // direct formula evaluation: M = (0.7, 0.3),
    // JSD = ½[0.5·ln(0.5/0.7) + 0.5·ln(0.5/0.3)] + ½[0.9·ln(0.9/0.7) + 0.1·ln(0.1/0.3)]
    let p = [0.5f64, 0.5];
    let q = [0.9f64, 0.1];
    let m = [0.7f64, 0.3];
    let oracle = 0.5 * (p[0] * (p[0] / m[0]).ln() + p[1] * (p[1] / m[1]).ln())
        + 0.5 * (q[0] * (q[0] / m[0]).ln() + q[1] * (q[1] / m[1]).ln());
    let got = jsd(&p, &q).unwrap();
    assert!((got - oracle).abs() < 1e-15);
    assert!((got - 0.1017492).abs() < 1e-6, "JSD(P,Q) = {got}");

    assert!(jsd(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    assert!(jsd(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
    assert!(jsd(&[1.0], &[0.5, 0.5]).is_err());
}

#[test]
fn jsd_is_symmetric_and_bounded() {
    let mut rng = stream(9, "jsd");
    use rand::Rng;
    for _ in 0..200 {
        let n = rng.random_range(2..6);
        let mut p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-6).collect();
        let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-6).collect();
        let ps: f64 = p.iter().sum();
        let qs: f64 = q.iter().sum();
        p.iter_mut().for_each(|v| *v /= ps);
        q.iter_mut().for_each(|v| *v /= qs);
        let a = jsd(&p, &q).unwrap();
        let b = jsd(&q, &p).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((0.0..=2f64.ln() + 1e-12).contains(&a));
    }
}

#[test]
fn combined_loss_gradient_matches_finite_differences() {
    let mut rng = stream(11, "combined");
    let e_t = {
        use rand::Rng;
        let data: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingMatrix::new(
            (0..6).map(|i| format!("t{i}")).collect(),
            Matrix::new(6, 3, data).unwrap(),
        )
        .unwrap()
    };
    let corpus = {
        let vocab: Vec<Code> = (0..6)
            .map(|i| Code { id: format!("t{i}"), index: i })
            .collect();
        let patients = (0..6)
            .map(|i| Patient {
                id: format!("p{i}"),
                visits: vec![
                    Visit { codes: vec![i % 6, (i + 1) % 6], los_days: 1.0 },
                    Visit { codes: vec![(i + 2) % 6], los_days: 9.0 },
                ],
                mortality: i % 2 == 0,
            })
            .collect();
        Corpus::new(Role::Target, vocab, patients).unwrap()
    };
    let patients: Vec<&Patient> = corpus.patients.iter().collect();
    let backbone = Backbone::new(BackboneKind::Mlp, TaskKind::Mortality, 3, 7);
    let mut disc = Discriminator::new(3, 5);
    let w = crate::numerics::random_orthogonal(3, &mut stream(13, "w"));
    let target_rows = e_t.matrix().clone();
    let alpha = 0.37;
    let drop_rng = stream(17, "drop");

    let (l_cls, g_cls) = classification_gradient_w(&backbone, &patients, &e_t, &w).unwrap();
    let (l_gen, g_gen) =
        generator_gradient_w(&mut disc, &target_rows, &w, &mut drop_rng.clone()).unwrap();
    let combined_grad = g_cls.add(&g_gen.scale(alpha));

    let loss_at = |w: &Matrix, disc: &mut Discriminator| -> f64 {
        let mut model = backbone.clone();
        let cls = classification_loss(&mut model, &patients, &e_t, w).unwrap();
        let gen =
            generator_loss_with_dropout(disc, &target_rows, w, &mut drop_rng.clone()).unwrap();
        cls + alpha * gen
    };
    let base = loss_at(&w, &mut disc);
    assert!((base - (l_cls + alpha * l_gen)).abs() < 1e-12);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let mut wp = w.clone();
            wp.set(i, j, w.at(i, j) + h);
            let up = loss_at(&wp, &mut disc);
            wp.set(i, j, w.at(i, j) - h);
            let down = loss_at(&wp, &mut disc);
            let fd = (up - down) / (2.0 * h);
            let analytic = combined_grad.at(i, j);
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            worst = worst.max((analytic - fd).abs() / denom);
        }
    }
    assert!(worst < 1e-4, "max relative gradient error {worst}");
}

#[test]
fn pure_loss_evaluations_do_not_move_parameters() {
    let mut d = Discriminator::new(4, 21);
    let before: Vec<f64> = (0..d.n_params()).map(|i| d.param(i)).collect();
    let batch = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
    let w = Matrix::identity(4);
    discriminator_loss(&mut d, &batch, &batch, &w).unwrap();
    generator_loss(&mut d, &batch, &w).unwrap();
    generator_gradient_w(&mut d, &batch, &w, &mut stream(23, "g")).unwrap();
    let after: Vec<f64> = (0..d.n_params()).map(|i| d.param(i)).collect();
    assert_eq!(before, after);
}

fn pretrained_separable() -> (Backbone, EmbeddingMatrix, EmbeddingMatrix, Corpus, Corpus, Corpus) {
    let e_rows = vec![vec![2.0, 0.0, 0.0, 0.0], vec![0.0, 2.0, 0.0, 0.0]];
    let e_s = const_embedding(&["s0", "s1"], &e_rows);
    let e_t = const_embedding(&["t0", "t1"], &e_rows);
    let source = separable_corpus(Role::Source, "s", 60);
    let (s_train, s_valid, _) = crate::corpus::split_corpus(&source, (0.7, 0.1, 0.2), 1).unwrap();
    let backbone = Backbone::new(BackboneKind::Mlp, TaskKind::Mortality, 4, 5);
    let trained = train_task_model(
        backbone,
        EmbParam::frozen(e_s.matrix().clone()),
        &s_train,
        &s_valid,
        &TaskTrainConfig {
            epochs: 400,
            patience: 100,
            learning_rate: 1e-2,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let target = separable_corpus(Role::Target, "t", 60);
    let (t_train, t_valid, t_test) = crate::corpus::split_corpus(&target, (0.5, 0.3, 0.2), 2).unwrap();
    (trained.backbone, e_t, e_s, t_train, t_valid, t_test)
}

#[test]
fn alpha_zero_refinement_solves_a_separable_task() {
    let (backbone, e_t, e_s, train, valid, _test) = pretrained_separable();
    let w0 = crate::numerics::random_orthogonal(4, &mut stream(7, "w0"));
    let out = refine_mapping(
        &w0,
        &e_t,
        &e_s,
        &backbone,
        &train,
        &valid,
        &RefineConfig {
            alpha: 0.0,
            epochs: 600,
            early_stop_patience: 600,
            learning_rate: 1e-2,
            seed: 11,
            ..Default::default()
        },
    )
    .unwrap();
    // validation accuracy of the fully trained mapping
    let mut model = out.backbone.clone();
    let table = e_t.matrix().matmul(&out.final_mapping);
    let (scores, labels) = mortality_scores(&mut model, &table, &valid).unwrap();
    let correct = scores
        .iter()
        .zip(&labels)
        .filter(|(s, &l)| (**s > 0.5) == l)
        .count();
    assert_eq!(correct, labels.len(), "validation accuracy must reach 1.0");
    let final_cls = out.log.last().unwrap().loss_cls;
    assert!(final_cls < 0.05, "final L_cls = {final_cls}");
}

#[test]
fn discriminator_hovers_at_chance_on_identical_distributions() {
    use rand::Rng;
    let dim = 6;
    let mut rng = stream(31, "embed");
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let table = Matrix::from_rows(&rows).unwrap();
    let w = Matrix::identity(dim);
    let mut disc = Discriminator::new(dim, 33);
    let opt = OptimizerConfig::default();
    let mut accuracies = Vec::new();
    let mut adv = stream(35, "adv");
    let mut drop = stream(37, "drop");
    for step in 0..400 {
        let src = sample_rows(&table, 8, &mut adv);
        let tgt = sample_rows(&table, 8, &mut adv).matmul(&w);
        disc.zero_grads();
        let p_s = disc.probs(&src, Mode::Train, &mut drop).unwrap();
        let mut d_s = Matrix::zeros(8, 1);
        for (i, &p) in p_s.iter().enumerate() {
            d_s.set(i, 0, (p - 1.0) / 8.0);
        }
        disc.backward(&d_s).unwrap();
        let p_t = disc.probs(&tgt, Mode::Train, &mut drop).unwrap();
        let mut d_t = Matrix::zeros(8, 1);
        for (i, &p) in p_t.iter().enumerate() {
            d_t.set(i, 0, p / 8.0);
        }
        disc.backward(&d_t).unwrap();
        disc.step(&opt).unwrap();
        if step % 10 == 9 {
            // fresh balanced evaluation batch
            let es = sample_rows(&table, 32, &mut adv);
            let et = sample_rows(&table, 32, &mut adv);
            let ps = disc.probs(&es, Mode::Eval, &mut drop).unwrap();
            let pt = disc.probs(&et, Mode::Eval, &mut drop).unwrap();
            let correct = ps.iter().filter(|&&p| p > 0.5).count()
                + pt.iter().filter(|&&p| p <= 0.5).count();
            accuracies.push(correct as f64 / 64.0);
        }
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    assert!(
        (mean - 0.5).abs() <= 0.1,
        "mean discriminator accuracy {mean} strayed from chance"
    );
}

#[test]
fn alpha_zero_trajectory_is_bit_identical_to_task_only_finetuning() {
    let (backbone, e_t, e_s, train, valid, _test) = pretrained_separable();
    let w0 = crate::numerics::random_orthogonal(4, &mut stream(41, "w0"));
    let run = |d_steps: usize| {
        refine_mapping(
            &w0,
            &e_t,
            &e_s,
            &backbone,
            &train,
            &valid,
            &RefineConfig {
                alpha: 0.0,
                d_steps_per_w_step: d_steps,
                epochs: 15,
                early_stop_patience: 15,
                seed: 43,
                ..Default::default()
            },
        )
        .unwrap()
    };
    let with_disc = run(5);
    let task_only = run(0);
    assert_eq!(
        with_disc.mapping.data(),
        task_only.mapping.data(),
        "discriminator updates must not perturb the mapping trajectory"
    );
    for (a, b) in with_disc.log.iter().zip(&task_only.log) {
        assert_eq!(a.loss_cls, b.loss_cls);
        assert_eq!(a.val_metric, b.val_metric);
    }
}

#[test]
fn early_stopping_returns_best_checkpoint_not_last() {
    let (backbone, e_t, e_s, train, valid, _test) = pretrained_separable();
    let w0 = crate::numerics::random_orthogonal(4, &mut stream(47, "w0"));
    let out = refine_mapping(
        &w0,
        &e_t,
        &e_s,
        &backbone,
        &train,
        &valid,
        &RefineConfig {
            alpha: 0.3,
            epochs: 40,
            early_stop_patience: 40,
            learning_rate: 5e-3,
            seed: 51,
            ..Default::default()
        },
    )
    .unwrap();
    let max_logged = out
        .log
        .iter()
        .map(|r| r.val_metric)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(out.best_val >= max_logged - 1e-12, "best_val must dominate the log");
    // the returned mapping reproduces the best validation metric
    let mut model = out.backbone.clone();
    let table = e_t.matrix().matmul(&out.mapping);
    let (scores, labels) = mortality_scores(&mut model, &table, &valid).unwrap();
    let val = crate::eval::auc_pr(&scores, &labels).unwrap();
    assert!((val - out.best_val).abs() < 1e-12);
}

#[test]
fn refinement_without_labels_warns_and_still_runs() {
    let (backbone, e_t, e_s, train, valid, _test) = pretrained_separable();
    let empty = train.with_patients(Vec::new()).unwrap();
    let w0 = Matrix::identity(4);
    let out = refine_mapping(
        &w0,
        &e_t,
        &e_s,
        &backbone,
        &empty,
        &valid,
        &RefineConfig {
            epochs: 3,
            seed: 53,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!out.warnings.is_empty());
    assert_eq!(out.log.len(), 3);
}

#[test]
fn transfer_with_zero_epochs_is_the_pretrained_head_on_fresh_embeddings() {
    let (backbone, e_t, _e_s, train, valid, test) = pretrained_separable();
    let out = transfer_learning(
        &backbone,
        e_t.matrix().clone(),
        &train,
        &valid,
        &TaskTrainConfig {
            epochs: 0,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let mut a = out.backbone.clone();
    let mut b = backbone.clone();
    let (scores_a, _) = mortality_scores(&mut a, &out.table, &test).unwrap();
    let (scores_b, _) = mortality_scores(&mut b, e_t.matrix(), &test).unwrap();
    assert_eq!(scores_a, scores_b);
}

#[test]
fn direct_training_is_deterministic() {
    let train = separable_corpus(Role::Target, "t", 24);
    let valid = separable_corpus(Role::Target, "t", 12);
    let cfg = TaskTrainConfig {
        epochs: 5,
        seed: 9,
        ..Default::default()
    };
    let a = train_backbone_direct(BackboneKind::Mlp, TaskKind::Mortality, 4, &train, &valid, &cfg)
        .unwrap();
    let b = train_backbone_direct(BackboneKind::Mlp, TaskKind::Mortality, 4, &train, &valid, &cfg)
        .unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.backbone.to_text(), b.backbone.to_text());
    assert_eq!(a.best_val, b.best_val);
}

#[test]
fn rnn_backbone_trains_on_the_separable_task() {
    let train = separable_corpus(Role::Target, "t", 40);
    let valid = separable_corpus(Role::Target, "t", 20);
    let out = train_backbone_direct(
        BackboneKind::Rnn,
        TaskKind::Mortality,
        4,
        &train,
        &valid,
        &TaskTrainConfig {
            epochs: 120,
            patience: 120,
            learning_rate: 5e-3,
            seed: 13,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(out.best_val > 0.9, "best val {}", out.best_val);
}

#[test]
fn los_backbone_produces_calibrated_probability_rows() {
    let mut corpus = separable_corpus(Role::Target, "t", 10);
    // vary the stays so all four classes appear
    for (i, p) in corpus.patients.iter_mut().enumerate() {
        p.visits[0].los_days = [0.5, 3.0, 9.0, 20.0][i % 4];
    }
    let mut backbone = Backbone::new(BackboneKind::Mlp, TaskKind::LengthOfStay, 4, 17);
    let table = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
    let rows = los_probabilities(&mut backbone, &table, &corpus).unwrap();
    assert_eq!(rows.len(), 10);
    for (probs, labels) in &rows {
        assert_eq!(probs.rows(), labels.len());
        for i in 0..probs.rows() {
            let sum: f64 = probs.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}

