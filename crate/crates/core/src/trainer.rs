//! Label masking, loss, gradients, Adam and the training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_term, Tape};
use crate::checkpoint::Checkpoint;
use crate::embed::{EmbeddingMatrix, FeatureMatrix};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::graph::ReviewGraph;
use crate::model::{
    forward, init_params, record_forward, ForwardInputs, ModelConfig, ModelParams, Params,
    RiskLabel, RiskLabels,
};
use crate::records::{Label, SplitAssignment, SplitTag};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Global L2 norm limit for gradients; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            early_stop_patience: 10,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Train,
    Eval,
}

/// Visible labels for one forward pass.
///
/// Train mode: train nodes outside `batch` show their label; batch,
/// validation and test nodes are unknown. Eval mode: every train node shows
/// its label and `batch` is ignored.
pub fn build_risk_labels(
    split: &SplitAssignment,
    labels: &[Label],
    batch: &[usize],
    mode: MaskMode,
) -> Result<RiskLabels> {
    if split.len() != labels.len() {
        return Err(Error::Shape(format!(
            "split covers {} nodes, labels {}",
            split.len(),
            labels.len()
        )));
    }
    let mut risk: Vec<RiskLabel> = split
        .tags
        .iter()
        .zip(labels)
        .map(|(t, l)| match t {
            SplitTag::Train => RiskLabel::from(*l),
            _ => RiskLabel::Unknown,
        })
        .collect();
    if mode == MaskMode::Train {
        for &i in batch {
            match split.tags.get(i) {
                Some(SplitTag::Train) => risk[i] = RiskLabel::Unknown,
                Some(_) => {
                    return Err(Error::InvalidArgument(format!(
                        "batch node {i} is not a train node"
                    )))
                }
                None => return Err(Error::InvalidArgument(format!("batch node {i} out of range"))),
            }
        }
    }
    Ok(RiskLabels(risk))
}

/// Mean clamped binary cross-entropy over `subset`.
pub fn bce_loss(probabilities: &[f64], targets: &[f64], subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty node subset".into()));
    }
    let mut total = 0.0;
    for &i in subset {
        let (p, y) = match (probabilities.get(i), targets.get(i)) {
            (Some(p), Some(y)) => (*p, *y),
            _ => return Err(Error::InvalidArgument(format!("node {i} out of range"))),
        };
        total += bce_term(p, y);
    }
    Ok(total / subset.len() as f64)
}

/// Forward pass, batch loss and exact reverse-mode gradients for every
/// parameter tensor. `targets[k]` is the label of `batch[k]`.
pub fn loss_and_gradients<T: Scalar>(
    params: &Params<T>,
    cfg: &ModelConfig,
    inputs: ForwardInputs<'_>,
    batch: &[usize],
    targets: &[T],
) -> Result<(f64, Params<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty node subset".into()));
    }
    let mut tape = Tape::new();
    let trace = record_forward(&mut tape, params, cfg, inputs)?;
    let loss = tape.bce(trace.probabilities, batch.to_vec(), targets.to_vec());
    let value = tape.value(loss).get(0, 0).as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss is {value}")));
    }
    let grads = tape.backward(loss);
    let mut out = params.zeros_like();
    for (slot, var) in out.tensors_mut().into_iter().zip(trace.params.vars()) {
        *slot = grads.wrt(&tape, var);
    }
    if !out.all_finite() {
        return Err(Error::NonFinite("gradient contains NaN or Inf".into()));
    }
    Ok((value, out))
}

/// Global L2 norm over every gradient entry.
pub fn global_norm<T: Scalar>(grads: &Params<T>) -> f64 {
    grads.tensors().iter().map(|m| m.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales `grads` so its global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Params<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = T::of(max_norm / norm);
        for m in grads.tensors_mut() {
            for v in m.data_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

/// First and second moment buffers, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &Params<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update; `t` is the 1-based step index.
pub fn adam_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut AdamState<T>,
    t: u64,
    cfg: &AdamConfig,
) {
    assert!(t >= 1, "adam step index starts at 1");
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (((p, g), m), v) in tensors {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut());
        for (((p, &g), m), v) in iter {
            let g = g.as_f64();
            let mn = cfg.beta1 * m.as_f64() + (1.0 - cfg.beta1) * g;
            let vn = cfg.beta2 * v.as_f64() + (1.0 - cfg.beta2) * g * g;
            *m = T::of(mn);
            *v = T::of(vn);
            let step = cfg.lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
            *p = T::of(p.as_f64() - step);
        }
    }
}

/// Everything the loop needs besides the configs.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub graph: &'a ReviewGraph,
    pub embeddings: &'a EmbeddingMatrix,
    pub features: Option<&'a FeatureMatrix>,
    pub labels: &'a [Label],
    pub split: &'a SplitAssignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the validation nodes hold a single class.
    pub valid_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_valid_auc: Option<f64>,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

pub fn write_epoch_log<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    for row in log {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io("<epoch log>", e))?;
    }
    Ok(())
}

fn target_of(l: Label) -> f64 {
    if l == Label::Spam {
        1.0
    } else {
        0.0
    }
}

/// Spam probabilities for all nodes with eval-mode risk labels.
pub fn predict(
    data: TrainData<'_>,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let risk = build_risk_labels(data.split, data.labels, &[], MaskMode::Eval)?;
    let probs = forward(
        ForwardInputs {
            embeddings: data.embeddings,
            features: data.features,
            risk: &risk,
            graph: data.graph,
        },
        params,
        cfg,
    )?;
    Ok(probs.into_iter().map(f64::from).collect())
}

fn validation_auc(
    data: TrainData<'_>,
    cfg: &ModelConfig,
    params: &ModelParams,
    valid: &[usize],
) -> Result<Option<f64>> {
    if valid.is_empty() {
        return Ok(None);
    }
    let probs = predict(data, cfg, params)?;
    let scores: Vec<f64> = valid.iter().map(|&i| probs[i]).collect();
    let labels: Vec<bool> = valid.iter().map(|&i| data.labels[i] == Label::Spam).collect();
    match auc(&scores, &labels) {
        Ok(a) => Ok(Some(a)),
        Err(Error::InvalidArgument(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mini-batch training over the full graph.
///
/// Each epoch shuffles the labeled train nodes, masks the current batch,
/// takes one Adam step per batch, then scores the validation nodes. The
/// checkpoint with the best validation AUC is kept; when no validation AUC
/// is defined the latest epoch is kept instead.
pub fn train(data: TrainData<'_>, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let n = data.graph.n_nodes();
    if data.labels.len() != n || data.split.len() != n {
        return Err(Error::Shape(format!(
            "graph has {n} nodes, labels {}, split {}",
            data.labels.len(),
            data.split.len()
        )));
    }
    let mut train_nodes: Vec<usize> = data
        .split
        .nodes(SplitTag::Train)
        .into_iter()
        .filter(|&i| data.labels[i].is_known())
        .collect();
    if train_nodes.is_empty() {
        return Err(Error::InvalidArgument("no labeled train nodes".into()));
    }
    let valid: Vec<usize> = data
        .split
        .nodes(SplitTag::Valid)
        .into_iter()
        .filter(|&i| data.labels[i].is_known())
        .collect();

    let mut params = init_params(model_cfg, cfg.seed)?;
    let mut state = AdamState::new(&params);
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut log = Vec::new();
    let mut best: Option<(Checkpoint, usize, Option<f64>)> = None;
    let mut since_improvement = 0;
    let mut stopped_early = false;
    let mut step = 0u64;
    let diverged = |epoch: usize, reason: String, best: &Option<(Checkpoint, usize, Option<f64>)>| {
        Error::Diverged {
            epoch,
            reason,
            best: best.as_ref().map(|b| Box::new(b.0.clone())),
        }
    };

    for epoch in 1..=cfg.epochs {
        train_nodes.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_nodes.chunks(cfg.batch_size) {
            let risk = build_risk_labels(data.split, data.labels, batch, MaskMode::Train)?;
            let inputs = ForwardInputs {
                embeddings: data.embeddings,
                features: data.features,
                risk: &risk,
                graph: data.graph,
            };
            let targets: Vec<f32> = batch.iter().map(|&i| target_of(data.labels[i]) as f32).collect();
            let (loss, mut grads) = match loss_and_gradients(&params, model_cfg, inputs, batch, &targets) {
                Ok(v) => v,
                Err(Error::NonFinite(reason)) => return Err(diverged(epoch, reason, &best)),
                Err(e) => return Err(e),
            };
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            step += 1;
            adam_step(&mut params, &grads, &mut state, step, &adam);
            if !params.all_finite() {
                return Err(diverged(epoch, "parameters became non-finite".into(), &best));
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_nodes.len() as f64;
        let valid_auc = match validation_auc(data, model_cfg, &params, &valid) {
            Ok(a) => a,
            Err(Error::NonFinite(reason)) => return Err(diverged(epoch, reason, &best)),
            Err(e) => return Err(e),
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_auc,
        });

        let improved = match (valid_auc, &best) {
            (_, None) => true,
            (Some(a), Some((_, _, Some(b)))) => a > *b,
            (Some(_), Some((_, _, None))) => true,
            (None, Some((_, _, None))) => true,
            (None, Some((_, _, Some(_)))) => false,
        };
        if improved {
            let ck = Checkpoint::new(model_cfg.clone(), params.clone())?;
            best = Some((ck, epoch, valid_auc));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.early_stop_patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    let (best, best_epoch, best_valid_auc) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_valid_auc,
        log,
        stopped_early,
    })
}
