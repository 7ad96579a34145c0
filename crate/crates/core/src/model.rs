//! Detection network: risk-embedding fusion, gated graph transformer
//! layers and the MLP scoring head.
//!
//! Every forward pass is recorded on an [`autodiff::Tape`]; inference
//! simply drops the tape. Weights are stored `in x out`, so a layer maps
//! row-vector inputs as `x · W`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::embed::{EmbeddingMatrix, FeatureMatrix};
use crate::error::{Error, Result};
use crate::graph::ReviewGraph;
use crate::records::Label;
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub emb_dim: usize,
    #[serde(default = "defaults::layer_width")]
    pub layer_width: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::layers")]
    pub layers: usize,
    #[serde(default = "defaults::prelu_slope")]
    pub prelu_slope_init: f32,
    #[serde(default)]
    pub attention_scaling: bool,
    #[serde(default = "defaults::use_graph")]
    pub use_graph: bool,
    #[serde(default)]
    pub feature_dim: usize,
}

mod defaults {
    pub fn layer_width() -> usize {
        96
    }
    pub fn heads() -> usize {
        3
    }
    pub fn layers() -> usize {
        2
    }
    pub fn prelu_slope() -> f32 {
        0.25
    }
    pub fn use_graph() -> bool {
        true
    }
}

impl ModelConfig {
    pub fn new(emb_dim: usize) -> Self {
        ModelConfig {
            emb_dim,
            layer_width: defaults::layer_width(),
            heads: defaults::heads(),
            layers: defaults::layers(),
            prelu_slope_init: defaults::prelu_slope(),
            attention_scaling: false,
            use_graph: true,
            feature_dim: 0,
        }
    }

    pub fn head_width(&self) -> usize {
        self.layer_width / self.heads
    }

    /// Width entering the first layer (or the MLP when the graph is off).
    pub fn input_width(&self) -> usize {
        self.emb_dim + self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.layer_width == 0 || self.heads == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !self.layer_width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "layer width {} is not divisible by {} heads",
                self.layer_width, self.heads
            )));
        }
        if self.use_graph && self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_width()
        } else {
            self.layer_width
        }
    }

    fn mlp_input(&self) -> usize {
        if self.use_graph {
            self.layer_width
        } else {
            self.input_width()
        }
    }
}

/// Visible label fed to the risk-embedding lookup for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RiskLabel {
    Normal = 0,
    Fraud = 1,
    Unknown = 2,
}

impl From<Label> for RiskLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Normal => RiskLabel::Normal,
            Label::Spam => RiskLabel::Fraud,
            Label::Unknown => RiskLabel::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskLabels(pub Vec<RiskLabel>);

impl RiskLabels {
    pub fn all_unknown(n: usize) -> Self {
        RiskLabels(vec![RiskLabel::Unknown; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|r| *r as usize).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query: Vec<Matrix<T>>,
    pub key: Vec<Matrix<T>>,
    pub value: Vec<Matrix<T>>,
    pub shortcut: Matrix<T>,
    pub gate: Matrix<T>,
}

/// All trainable tensors. The fusion projections and the layer shortcut
/// are separate parameters even though they play analogous roles.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    /// Rows: normal, fraud, unknown.
    pub risk_table: Matrix<T>,
    pub fusion_input: Matrix<T>,
    pub fusion_risk: Matrix<T>,
    pub fusion_output: Matrix<T>,
    pub fusion_slope: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub mlp_hidden: Matrix<T>,
    pub mlp_hidden_bias: Matrix<T>,
    pub mlp_slope: Matrix<T>,
    pub mlp_output: Matrix<T>,
    pub mlp_output_bias: Matrix<T>,
}

pub type ModelParams = Params<f32>;

impl<T: Scalar> Params<T> {
    /// Tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out = vec![
            &self.risk_table,
            &self.fusion_input,
            &self.fusion_risk,
            &self.fusion_output,
            &self.fusion_slope,
        ];
        for l in &self.layers {
            for s in 0..l.query.len() {
                out.extend([&l.query[s], &l.key[s], &l.value[s]]);
            }
            out.extend([&l.shortcut, &l.gate]);
        }
        out.extend([
            &self.mlp_hidden,
            &self.mlp_hidden_bias,
            &self.mlp_slope,
            &self.mlp_output,
            &self.mlp_output_bias,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![
            &mut self.risk_table,
            &mut self.fusion_input,
            &mut self.fusion_risk,
            &mut self.fusion_output,
            &mut self.fusion_slope,
        ];
        for l in &mut self.layers {
            for ((q, k), v) in l.query.iter_mut().zip(&mut l.key).zip(&mut l.value) {
                out.extend([q, k, v]);
            }
            out.extend([&mut l.shortcut, &mut l.gate]);
        }
        out.extend([
            &mut self.mlp_hidden,
            &mut self.mlp_hidden_bias,
            &mut self.mlp_slope,
            &mut self.mlp_output,
            &mut self.mlp_output_bias,
        ]);
        out
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&Matrix<T>) -> Matrix<U>) -> Params<U> {
        Params {
            risk_table: f(&self.risk_table),
            fusion_input: f(&self.fusion_input),
            fusion_risk: f(&self.fusion_risk),
            fusion_output: f(&self.fusion_output),
            fusion_slope: f(&self.fusion_slope),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    query: l.query.iter().map(&f).collect(),
                    key: l.key.iter().map(&f).collect(),
                    value: l.value.iter().map(&f).collect(),
                    shortcut: f(&l.shortcut),
                    gate: f(&l.gate),
                })
                .collect(),
            mlp_hidden: f(&self.mlp_hidden),
            mlp_hidden_bias: f(&self.mlp_hidden_bias),
            mlp_slope: f(&self.mlp_slope),
            mlp_output: f(&self.mlp_output),
            mlp_output_bias: f(&self.mlp_output_bias),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        self.map(|m| m.cast())
    }

    pub fn zeros_like(&self) -> Params<T> {
        self.map(|m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.all_finite())
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.data().len()).sum()
    }

    /// Zero-initialized parameters with the shapes dictated by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Params<T> {
        let z = Matrix::zeros;
        let d = cfg.emb_dim;
        let (w, dh) = (cfg.layer_width, cfg.head_width());
        let n_layers = if cfg.use_graph { cfg.layers } else { 0 };
        Params {
            risk_table: z(3, d),
            fusion_input: z(d, d),
            fusion_risk: z(d, d),
            fusion_output: z(d, d),
            fusion_slope: z(1, 1),
            layers: (0..n_layers)
                .map(|l| {
                    let din = cfg.layer_input(l);
                    LayerParams {
                        query: (0..cfg.heads).map(|_| z(din, dh)).collect(),
                        key: (0..cfg.heads).map(|_| z(din, dh)).collect(),
                        value: (0..cfg.heads).map(|_| z(din, dh)).collect(),
                        shortcut: z(din, w),
                        gate: z(3 * w, w),
                    }
                })
                .collect(),
            mlp_hidden: z(cfg.mlp_input(), w),
            mlp_hidden_bias: z(1, w),
            mlp_slope: z(1, 1),
            mlp_output: z(w, 1),
            mlp_output_bias: z(1, 1),
        }
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Params::<T>::zeros(cfg);
        let names = tensor_names(cfg);
        let (have, expect) = (self.tensors(), want.tensors());
        if have.len() != expect.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                expect.len(),
                have.len()
            )));
        }
        for ((h, e), name) in have.iter().zip(&expect).zip(&names) {
            if h.shape() != e.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {:?}, found {:?}",
                    e.shape(),
                    h.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Canonical tensor names, aligned with [`Params::tensors`].
pub fn tensor_names(cfg: &ModelConfig) -> Vec<String> {
    let mut out: Vec<String> = [
        "risk_table",
        "fusion.input",
        "fusion.risk",
        "fusion.output",
        "fusion.prelu",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let n_layers = if cfg.use_graph { cfg.layers } else { 0 };
    for l in 0..n_layers {
        for s in 0..cfg.heads {
            for kind in ["query", "key", "value"] {
                out.push(format!("layers.{l}.head.{s}.{kind}"));
            }
        }
        out.push(format!("layers.{l}.shortcut"));
        out.push(format!("layers.{l}.gate"));
    }
    for s in [
        "mlp.hidden.weight",
        "mlp.hidden.bias",
        "mlp.prelu",
        "mlp.output.weight",
        "mlp.output.bias",
    ] {
        out.push(s.to_string());
    }
    out
}

/// Xavier-uniform weights, zero biases, `N(0, 0.02²)` risk rows and the
/// configured PReLU slope. Deterministic per seed.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::<f32>::zeros(cfg);
    let risk = Normal::new(0.0f32, 0.02).expect("valid normal");
    for v in p.risk_table.data_mut() {
        *v = risk.sample(&mut rng);
    }
    let xavier = |m: &mut Matrix<f32>, rng: &mut ChaCha8Rng| {
        let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt() as f32;
        for v in m.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    };
    xavier(&mut p.fusion_input, &mut rng);
    xavier(&mut p.fusion_risk, &mut rng);
    xavier(&mut p.fusion_output, &mut rng);
    p.fusion_slope = Matrix::scalar(cfg.prelu_slope_init);
    for l in &mut p.layers {
        for s in 0..cfg.heads {
            xavier(&mut l.query[s], &mut rng);
            xavier(&mut l.key[s], &mut rng);
            xavier(&mut l.value[s], &mut rng);
        }
        xavier(&mut l.shortcut, &mut rng);
        xavier(&mut l.gate, &mut rng);
    }
    xavier(&mut p.mlp_hidden, &mut rng);
    p.mlp_slope = Matrix::scalar(cfg.prelu_slope_init);
    xavier(&mut p.mlp_output, &mut rng);
    Ok(p)
}

/// Tape handles for every parameter, same layout as [`Params`].
pub struct ParamVars {
    pub risk_table: Var,
    pub fusion_input: Var,
    pub fusion_risk: Var,
    pub fusion_output: Var,
    pub fusion_slope: Var,
    pub layers: Vec<LayerVars>,
    pub mlp_hidden: Var,
    pub mlp_hidden_bias: Var,
    pub mlp_slope: Var,
    pub mlp_output: Var,
    pub mlp_output_bias: Var,
}

pub struct LayerVars {
    pub query: Vec<Var>,
    pub key: Vec<Var>,
    pub value: Vec<Var>,
    pub shortcut: Var,
    pub gate: Var,
}

impl ParamVars {
    pub fn bind<T: Scalar>(tape: &mut Tape<'_, T>, p: &Params<T>) -> Self {
        let mut leaf = |m: &Matrix<T>| tape.leaf(m.clone());
        ParamVars {
            risk_table: leaf(&p.risk_table),
            fusion_input: leaf(&p.fusion_input),
            fusion_risk: leaf(&p.fusion_risk),
            fusion_output: leaf(&p.fusion_output),
            fusion_slope: leaf(&p.fusion_slope),
            layers: p.layers.iter().map(|l| LayerVars::bind_with(&mut leaf, l)).collect(),
            mlp_hidden: leaf(&p.mlp_hidden),
            mlp_hidden_bias: leaf(&p.mlp_hidden_bias),
            mlp_slope: leaf(&p.mlp_slope),
            mlp_output: leaf(&p.mlp_output),
            mlp_output_bias: leaf(&p.mlp_output_bias),
        }
    }

    /// Vars in canonical order, matching [`Params::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![
            self.risk_table,
            self.fusion_input,
            self.fusion_risk,
            self.fusion_output,
            self.fusion_slope,
        ];
        for l in &self.layers {
            for s in 0..l.query.len() {
                out.extend([l.query[s], l.key[s], l.value[s]]);
            }
            out.extend([l.shortcut, l.gate]);
        }
        out.extend([
            self.mlp_hidden,
            self.mlp_hidden_bias,
            self.mlp_slope,
            self.mlp_output,
            self.mlp_output_bias,
        ]);
        out
    }
}

impl LayerVars {
    fn bind_with<T: Scalar>(leaf: &mut impl FnMut(&Matrix<T>) -> Var, l: &LayerParams<T>) -> Self {
        LayerVars {
            query: l.query.iter().map(&mut *leaf).collect(),
            key: l.key.iter().map(&mut *leaf).collect(),
            value: l.value.iter().map(&mut *leaf).collect(),
            shortcut: leaf(&l.shortcut),
            gate: leaf(&l.gate),
        }
    }
}

/// Records `H = X + PReLU(X·β1 + Z_risk·β2)·β3`.
pub fn record_fusion<T: Scalar>(
    tape: &mut Tape<'_, T>,
    pv: &ParamVars,
    x: Var,
    risk: &RiskLabels,
) -> Var {
    let z = tape.gather_rows(pv.risk_table, risk.indices());
    let xa = tape.matmul(x, pv.fusion_input);
    let za = tape.matmul(z, pv.fusion_risk);
    let pre = tape.add(xa, za);
    let act = tape.prelu(pre, pv.fusion_slope);
    let proj = tape.matmul(act, pv.fusion_output);
    tape.add(x, proj)
}

/// Output of one recorded gated graph transformer layer.
pub struct LayerTrace {
    pub output: Var,
    pub attention: Vec<Var>,
    pub shortcut: Var,
    pub aggregated: Var,
    pub gate: Var,
}

pub fn record_layer<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    lv: &LayerVars,
    h: Var,
    graph: &'g ReviewGraph,
    cfg: &ModelConfig,
) -> LayerTrace {
    let scale = if cfg.attention_scaling {
        T::one() / T::of(cfg.head_width() as f64).sqrt()
    } else {
        T::one()
    };
    let mut heads = Vec::with_capacity(lv.query.len());
    for s in 0..lv.query.len() {
        let q = tape.matmul(h, lv.query[s]);
        let k = tape.matmul(h, lv.key[s]);
        let v = tape.matmul(h, lv.value[s]);
        heads.push(tape.attention(q, k, v, graph, scale));
    }
    let aggregated = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)
    };
    let shortcut = tape.matmul(h, lv.shortcut);
    let diff = tape.sub(shortcut, aggregated);
    let gate_in = tape.concat_cols(&[shortcut, aggregated, diff]);
    let gate_pre = tape.matmul(gate_in, lv.gate);
    let gate = tape.sigmoid(gate_pre);
    let keep = tape.mul(gate, shortcut);
    let rest = tape.one_minus(gate);
    let mixed = tape.mul(rest, aggregated);
    let output = tape.add(keep, mixed);
    LayerTrace {
        output,
        attention: heads,
        shortcut,
        aggregated,
        gate,
    }
}

/// Records `logit = PReLU(H·W1 + b1)·W2 + b2` (n x 1).
pub fn record_mlp<T: Scalar>(tape: &mut Tape<'_, T>, pv: &ParamVars, h: Var) -> Var {
    let a = tape.matmul(h, pv.mlp_hidden);
    let a = tape.add_row(a, pv.mlp_hidden_bias);
    let a = tape.prelu(a, pv.mlp_slope);
    let o = tape.matmul(a, pv.mlp_output);
    tape.add_row(o, pv.mlp_output_bias)
}

/// Per-pass inputs shared by inference and training.
#[derive(Clone, Copy)]
pub struct ForwardInputs<'a> {
    pub embeddings: &'a EmbeddingMatrix,
    pub features: Option<&'a FeatureMatrix>,
    pub risk: &'a RiskLabels,
    pub graph: &'a ReviewGraph,
}

impl ForwardInputs<'_> {
    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let n = self.graph.n_nodes();
        if self.embeddings.n_rows() != n || self.risk.len() != n {
            return Err(Error::Shape(format!(
                "graph has {n} nodes but embeddings have {} rows and risk labels {}",
                self.embeddings.n_rows(),
                self.risk.len()
            )));
        }
        if self.embeddings.dim() != cfg.emb_dim {
            return Err(Error::Shape(format!(
                "embedding dim {} does not match model emb_dim {}",
                self.embeddings.dim(),
                cfg.emb_dim
            )));
        }
        match (self.features, cfg.feature_dim) {
            (None, 0) => Ok(()),
            (Some(f), d) if f.dim() == d && f.n_rows() == n => Ok(()),
            (f, d) => Err(Error::Shape(format!(
                "model expects {d} feature columns, got {:?}",
                f.map(|f| (f.n_rows(), f.dim()))
            ))),
        }
    }
}

pub fn embedding_to_matrix<T: Scalar>(m: &EmbeddingMatrix) -> Matrix<T> {
    Matrix::new(
        m.n_rows(),
        m.dim(),
        m.data().iter().map(|&v| T::of(v as f64)).collect(),
    )
}

pub struct ForwardTrace {
    pub params: ParamVars,
    pub fused: Var,
    pub layers: Vec<LayerTrace>,
    pub logits: Var,
    pub probabilities: Var,
}

/// Records the full pass fuse → [concat F] → layers → MLP → sigmoid.
pub fn record_forward<'g, T: Scalar>(
    tape: &mut Tape<'g, T>,
    params: &Params<T>,
    cfg: &ModelConfig,
    inputs: ForwardInputs<'g>,
) -> Result<ForwardTrace> {
    inputs.check(cfg)?;
    let pv = ParamVars::bind(tape, params);
    let x = tape.leaf(embedding_to_matrix(inputs.embeddings));
    let fused = record_fusion(tape, &pv, x, inputs.risk);
    let mut h = match inputs.features {
        Some(f) if cfg.feature_dim > 0 => {
            let fv = tape.leaf(embedding_to_matrix(f));
            tape.concat_cols(&[fused, fv])
        }
        _ => fused,
    };
    let mut layers = Vec::new();
    if cfg.use_graph {
        for lv in &pv.layers {
            let trace = record_layer(tape, lv, h, inputs.graph, cfg);
            h = trace.output;
            layers.push(trace);
        }
    }
    let logits = record_mlp(tape, &pv, h);
    let probabilities = tape.sigmoid(logits);
    Ok(ForwardTrace {
        params: pv,
        fused,
        layers,
        logits,
        probabilities,
    })
}

fn check_finite<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<()> {
    if m.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or Inf")))
    }
}

/// Initial node embeddings; errors if the result is not finite.
pub fn fuse_node_embedding<T: Scalar>(
    x: &Matrix<T>,
    risk: &RiskLabels,
    params: &Params<T>,
) -> Result<Matrix<T>> {
    if x.rows() != risk.len() || x.cols() != params.fusion_input.rows() {
        return Err(Error::Shape(format!(
            "embeddings {:?} vs {} risk labels and emb_dim {}",
            x.shape(),
            risk.len(),
            params.fusion_input.rows()
        )));
    }
    let mut tape = Tape::new();
    let pv = ParamVars::bind(&mut tape, params);
    let xv = tape.leaf(x.clone());
    let h = record_fusion(&mut tape, &pv, xv, risk);
    let out = tape.value(h).clone();
    check_finite(&out, "fused node embedding")?;
    Ok(out)
}

pub fn ggt_layer_forward<T: Scalar>(
    h: &Matrix<T>,
    graph: &ReviewGraph,
    layer: &LayerParams<T>,
    cfg: &ModelConfig,
) -> Matrix<T> {
    let mut tape = Tape::new();
    let mut leaf = |m: &Matrix<T>| tape.leaf(m.clone());
    let lv = LayerVars::bind_with(&mut leaf, layer);
    let hv = tape.leaf(h.clone());
    let trace = record_layer(&mut tape, &lv, hv, graph, cfg);
    tape.value(trace.output).clone()
}

/// Per-head attention weights of one layer, each CSR-aligned with `graph`.
pub fn attention_weights<T: Scalar>(
    h: &Matrix<T>,
    graph: &ReviewGraph,
    layer: &LayerParams<T>,
    cfg: &ModelConfig,
) -> Vec<Vec<T>> {
    let mut tape = Tape::new();
    let mut leaf = |m: &Matrix<T>| tape.leaf(m.clone());
    let lv = LayerVars::bind_with(&mut leaf, layer);
    let hv = tape.leaf(h.clone());
    let trace = record_layer(&mut tape, &lv, hv, graph, cfg);
    trace
        .attention
        .iter()
        .map(|&a| tape.attention_weights(a).expect("attention node").to_vec())
        .collect()
}

/// Gate activations of one layer (n x layer_width).
pub fn gate_values<T: Scalar>(
    h: &Matrix<T>,
    graph: &ReviewGraph,
    layer: &LayerParams<T>,
    cfg: &ModelConfig,
) -> Matrix<T> {
    let mut tape = Tape::new();
    let mut leaf = |m: &Matrix<T>| tape.leaf(m.clone());
    let lv = LayerVars::bind_with(&mut leaf, layer);
    let hv = tape.leaf(h.clone());
    let trace = record_layer(&mut tape, &lv, hv, graph, cfg);
    tape.value(trace.gate).clone()
}

/// Raw logits of the MLP head, one per row of `h`.
pub fn mlp_head<T: Scalar>(h: &Matrix<T>, params: &Params<T>) -> Vec<T> {
    let mut tape = Tape::new();
    let pv = ParamVars::bind(&mut tape, params);
    let hv = tape.leaf(h.clone());
    let logits = record_mlp(&mut tape, &pv, hv);
    tape.value(logits).data().to_vec()
}

/// Spam probability per node.
pub fn forward<T: Scalar>(
    inputs: ForwardInputs<'_>,
    params: &Params<T>,
    cfg: &ModelConfig,
) -> Result<Vec<T>> {
    params.check_shapes(cfg)?;
    let mut tape = Tape::new();
    let trace = record_forward(&mut tape, params, cfg, inputs)?;
    let fused = tape.value(trace.fused);
    check_finite(fused, "fused node embedding")?;
    let probs = tape.value(trace.probabilities);
    check_finite(probs, "probabilities")?;
    Ok(probs.data().to_vec())
}
