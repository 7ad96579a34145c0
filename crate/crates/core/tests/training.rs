mod common;

use common::*;
use rand::Rng;
use spamgraph::embed::EmbeddingMatrix;
use spamgraph::error::Error;
use spamgraph::eval::auc;
use spamgraph::model::{ForwardInputs, ModelConfig, RiskLabels};
use spamgraph::records::{make_split, Label, SplitTag};
use spamgraph::trainer::*;

#[test]
fn flipping_a_batch_nodes_own_label_changes_nothing() {
    let mut task = fixture_task(0);
    task.split = make_split(300, [0.5, 0.25, 0.25], 4).unwrap();
    let train = task.split.nodes(SplitTag::Train);
    let batch: Vec<usize> = train.iter().copied().step_by(3).collect();
    for &node in batch.iter().take(8) {
        let (before, after) = leakage_pair(&task, &batch, node, 11);
        assert_eq!(before[node].to_bits(), after[node].to_bits(), "node {node}");
    }
    // A visible (non-batch) train node's label does reach the output.
    let outside = *train.iter().find(|i| !batch.contains(i)).unwrap();
    let mut flipped = task.labels.clone();
    flipped[outside] = if flipped[outside] == Label::Spam { Label::Normal } else { Label::Spam };
    let cfg = ModelConfig::new(task.embeddings.dim());
    let params = spamgraph::model::init_params(&cfg, 11).unwrap();
    let run = |labels: &[Label]| {
        let risk = build_risk_labels(&task.split, labels, &batch, MaskMode::Train).unwrap();
        spamgraph::model::forward(
            ForwardInputs {
                embeddings: &task.embeddings,
                features: None,
                risk: &risk,
                graph: &task.graph,
            },
            &params,
            &cfg,
        )
        .unwrap()
    };
    assert_ne!(run(&task.labels)[outside], run(&flipped)[outside]);
}

#[test]
fn risk_labels_follow_the_masking_protocol() {
    let labels = vec![Label::Spam, Label::Normal, Label::Spam, Label::Normal, Label::Unknown];
    let mut split = make_split(5, [1.0, 0.0, 0.0], 0).unwrap();
    split.tags[3] = SplitTag::Valid;
    use spamgraph::model::RiskLabel::*;
    let train = build_risk_labels(&split, &labels, &[0], MaskMode::Train).unwrap();
    assert_eq!(train, RiskLabels(vec![Unknown, Normal, Fraud, Unknown, Unknown]));
    let eval = build_risk_labels(&split, &labels, &[0], MaskMode::Eval).unwrap();
    assert_eq!(eval, RiskLabels(vec![Fraud, Normal, Fraud, Unknown, Unknown]));
    assert!(build_risk_labels(&split, &labels, &[3], MaskMode::Train).is_err());
    assert!(build_risk_labels(&split, &labels, &[9], MaskMode::Train).is_err());
}

fn scalar_adam(theta: f64, grads: &[f64], cfg: &AdamConfig) -> Vec<f64> {
    let (mut m, mut v, mut th) = (0.0, 0.0, theta);
    let mut out = Vec::new();
    for (k, g) in grads.iter().enumerate() {
        let t = (k + 1) as i32;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        th -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        out.push(th);
    }
    out
}

#[test]
fn adam_matches_scalar_oracle() {
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    assert_eq!((cfg.beta1, cfg.beta2, cfg.eps), (0.9, 0.999, 1e-8));
    let model = ModelConfig {
        layer_width: 3,
        heads: 1,
        layers: 1,
        ..ModelConfig::new(2)
    };
    let mut params = random_params(&model, 5, 1.0);
    let start = params.clone();
    let mut grads = params.zeros_like();
    let mut r = rng(9);
    for t in grads.tensors_mut() {
        for x in t.data_mut() {
            *x = r.random_range(-2.0..2.0);
        }
    }
    let mut state = spamgraph::trainer::AdamState::new(&params);
    adam_step(&mut params, &grads, &mut state, 1, &cfg);
    let after_one = params.clone();
    adam_step(&mut params, &grads, &mut state, 2, &cfg);
    for (((p0, p1), p2), g) in start
        .tensors()
        .iter()
        .zip(after_one.tensors())
        .zip(params.tensors())
        .zip(grads.tensors())
    {
        for k in 0..g.data().len() {
            let want = scalar_adam(p0.data()[k], &[g.data()[k]; 2], &cfg);
            assert!((p1.data()[k] - want[0]).abs() < 1e-14);
            assert!((p2.data()[k] - want[1]).abs() < 1e-14);
            assert_ne!(p1.data()[k] - p0.data()[k], p2.data()[k] - p1.data()[k]);
        }
    }
    // theta = 1, g = 1, t = 1, lr = 0.1 gives 1 - 0.1 / (1 + 1e-8).
    assert!((scalar_adam(1.0, &[1.0], &cfg)[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
}

#[test]
fn clipping_rescales_to_the_bound() {
    let model = ModelConfig {
        layer_width: 2,
        heads: 1,
        layers: 1,
        ..ModelConfig::new(2)
    };
    let mut g = random_params(&model, 1, 10.0);
    let before = global_norm(&g);
    let oracle: f64 = g.tensors().iter().flat_map(|t| t.data().iter()).map(|x| x * x).sum::<f64>().sqrt();
    assert!((before - oracle).abs() < 1e-9 * oracle);
    assert!(before > 5.0);
    clip_global_norm(&mut g, 5.0);
    assert!((global_norm(&g) - 5.0).abs() < 1e-9);
    let small = global_norm(&g);
    clip_global_norm(&mut g, 100.0);
    assert_eq!(global_norm(&g), small);
}

/// 20 nodes, random features, every node labeled and in the one batch.
fn overfit_instance() -> (spamgraph::graph::ReviewGraph, EmbeddingMatrix, Vec<Label>) {
    let mut r = rng(21);
    let x = random_dense(&mut r, 20, 8);
    let labels = (0..20).map(|i| if i % 3 == 0 { Label::Spam } else { Label::Normal }).collect();
    let edges: Vec<(usize, usize)> = (0..19).map(|i| (i, i + 1)).collect();
    (graph_from_edges(20, &edges), to_embedding(&x), labels)
}

#[test]
fn fully_supervised_overfit_within_500_steps() {
    let (graph, x, labels) = overfit_instance();
    let split = make_split(20, [1.0, 0.0, 0.0], 0).unwrap();
    let model = ModelConfig::new(8);
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 20,
        ..TrainConfig::default()
    };
    let data = TrainData {
        graph: &graph,
        embeddings: &x,
        features: None,
        labels: &labels,
        split: &split,
    };
    let out = train(data, &model, &cfg).unwrap();
    let first = out.log.iter().position(|row| row.train_loss < 0.05);
    assert!(first.is_some(), "final loss {}", out.log.last().unwrap().train_loss);
    assert!(out.log.iter().all(|row| row.valid_auc.is_none()));
}

#[test]
fn fixture_is_learnable() {
    let task = fixture_task(0);
    let model = ModelConfig::new(task.embeddings.dim());
    let out = train(task.data(), &model, &TrainConfig::default()).unwrap();
    assert!(out.best_valid_auc.unwrap() >= 0.95, "{:?}", out.best_valid_auc);
    let probs = predict(task.data(), &model, &out.best.params).unwrap();
    let valid = task.split.nodes(SplitTag::Valid);
    let s: Vec<f64> = valid.iter().map(|&i| probs[i]).collect();
    let l: Vec<bool> = valid.iter().map(|&i| task.labels[i] == Label::Spam).collect();
    assert_eq!(auc(&s, &l).unwrap(), out.best_valid_auc.unwrap());
}

#[test]
fn training_is_deterministic() {
    let task = fixture_task(1);
    let model = ModelConfig::new(task.embeddings.dim());
    let cfg = TrainConfig {
        epochs: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train(task.data(), &model, &cfg).unwrap();
    let b = train(task.data(), &model, &cfg).unwrap();
    let log_bytes = |o: &TrainOutcome| {
        let mut v = Vec::new();
        write_epoch_log(&mut v, &o.log).unwrap();
        v
    };
    assert_eq!(log_bytes(&a), log_bytes(&b));
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    let c = train(task.data(), &model, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.best.to_bytes(), c.best.to_bytes());
}

#[test]
fn epoch_log_rows_are_json_lines() {
    let log = vec![
        EpochLog {
            epoch: 1,
            train_loss: 0.5,
            valid_auc: Some(0.75),
        },
        EpochLog {
            epoch: 2,
            train_loss: 0.25,
            valid_auc: None,
        },
    ];
    let mut out = Vec::new();
    write_epoch_log(&mut out, &log).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "{\"epoch\":1,\"train_loss\":0.5,\"valid_auc\":0.75}\n{\"epoch\":2,\"train_loss\":0.25,\"valid_auc\":null}\n"
    );
}

#[test]
fn bad_configs_are_rejected() {
    let task = fixture_task(0);
    let model = ModelConfig::new(task.embeddings.dim());
    for cfg in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { lr: -1.0, ..TrainConfig::default() },
    ] {
        assert!(train(task.data(), &model, &cfg).is_err());
    }
    let wrong_dim = ModelConfig::new(7);
    assert!(train(task.data(), &wrong_dim, &TrainConfig::default()).is_err());
}

#[test]
fn divergence_is_reported() {
    let task = fixture_task(0);
    let model = ModelConfig::new(task.embeddings.dim());
    let cfg = TrainConfig {
        lr: 1e300,
        epochs: 3,
        grad_clip: None,
        ..TrainConfig::default()
    };
    match train(task.data(), &model, &cfg) {
        Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn bce_matches_hand_values() {
    let p = [0.5, 0.9, 0.0, 1.0];
    let y = [1.0, 0.0, 0.0, 1.0];
    let got = bce_loss(&p, &y, &[0, 1]).unwrap();
    let want = (-(0.5f64).ln() - (0.1f64).ln()) / 2.0;
    assert!((got - want).abs() < 1e-12);
    // Clamped probabilities keep exact 0/1 finite.
    let clamped = bce_loss(&[0.0, 1.0], &[1.0, 0.0], &[0, 1]).unwrap();
    assert!((clamped + (1e-7f64).ln()).abs() < 1e-6);
    assert!(bce_loss(&p, &y, &[]).is_err());
}
