//! TOML run configuration. Every key is optional; command-line flags take
//! precedence over the file, and the file over built-in defaults.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use spamgraph::synth::Sentiment;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Fallback seed for every section that sets none.
    pub seed: Option<u64>,
    pub split: SplitSection,
    pub graph: GraphSection,
    pub embedding: EmbeddingSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub ratios: Option<[f64; 3]>,
    pub stratified: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub max_group_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Hash,
    Service,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub provider: Option<Provider>,
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub batch_size: Option<usize>,
    pub concurrency: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layer_width: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub prelu_slope_init: Option<f64>,
    pub attention_scaling: Option<bool>,
    pub use_graph: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub early_stop_patience: Option<usize>,
    /// Global-norm bound; 0 disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub ratio: Option<f64>,
    pub include_valid: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub threshold: Option<f64>,
    pub count: Option<usize>,
    pub reviews_per_product: Option<usize>,
    pub max_words: Option<usize>,
    pub sentiment: Option<Sentiment>,
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub concurrency: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Flag, then section key, then the top-level `seed`, then 0.
    pub fn seed(&self, flag: Option<u64>, section: Option<u64>) -> u64 {
        flag.or(section).or(self.seed).unwrap_or(0)
    }
}
