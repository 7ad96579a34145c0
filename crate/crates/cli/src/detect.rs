//! Ingestion, graph, embedding, training and evaluation subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use spamgraph::checkpoint::Checkpoint;
use spamgraph::embed::{hash_embed, load_embeddings, save_embeddings, EmbeddingClient, EmbeddingMatrix};
use spamgraph::eval::{evaluate_subset, evaluation_nodes, load_scores, roc_points, save_scores, write_roc_csv};
use spamgraph::fixture::{separable_corpus, FixtureSpec};
use spamgraph::graph::{self, GraphOptions, ReviewGraph};
use spamgraph::model::ModelConfig;
use spamgraph::records::{
    ingest_qa, ingest_reviews, labels_of, make_split, make_stratified_split, save_reviews, InputFormat, Label,
    ReviewRecord, SplitAssignment,
};
use spamgraph::trainer::{self, write_epoch_log, TrainConfig, TrainData};

use crate::config::{Config, Provider};
use crate::{usage, BuildGraphArgs, DataArgs, EmbedArgs, EvaluateArgs, Format, GraphStatsArgs, IngestArgs};
use crate::{MakeFixtureArgs, PredictArgs, SplitArgs, TrainArgs};

const DEFAULT_RATIOS: [f64; 3] = [0.01, 0.09, 0.90];
const DEFAULT_HASH_DIM: usize = 64;
const DEFAULT_RATIO: f64 = 0.03;

pub fn load_records(path: &Path) -> Result<Vec<ReviewRecord>> {
    ingest_reviews(path, InputFormat::from_path(path)).with_context(|| format!("reading records {}", path.display()))
}

/// Prints `value` as one JSON line, and writes the same line to `out`.
fn emit_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string(value)?;
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let format = match a.format {
        Some(Format::Jsonl) => InputFormat::Jsonl,
        Some(Format::Csv) => InputFormat::Csv,
        None => InputFormat::from_path(&a.input),
    };
    let recs = ingest_reviews(&a.input, format).with_context(|| format!("ingesting {}", a.input.display()))?;
    save_reviews(&a.out, &recs)?;
    eprintln!("{} records -> {}", recs.len(), a.out.display());
    Ok(())
}

pub fn split(a: SplitArgs, cfg: &Config, seed: Option<u64>) -> Result<()> {
    let recs = load_records(&a.records)?;
    let ratios = match a.ratios {
        Some(r) => <[f64; 3]>::try_from(r).map_err(|_| usage("--ratios takes three comma-separated fractions"))?,
        None => cfg.split.ratios.unwrap_or(DEFAULT_RATIOS),
    };
    let seed = cfg.seed(seed, cfg.split.seed);
    let split = if a.stratified || cfg.split.stratified.unwrap_or(false) {
        make_stratified_split(&labels_of(&recs), ratios, seed)?
    } else {
        make_split(recs.len(), ratios, seed)?
    };
    split.save(&a.out)?;
    let (tr, va, te) = split.sizes();
    eprintln!("train {tr}, valid {va}, test {te} -> {}", a.out.display());
    Ok(())
}

pub fn build_graph(a: BuildGraphArgs, cfg: &Config) -> Result<()> {
    let opts = GraphOptions {
        max_group_size: a.max_group_size.or(cfg.graph.max_group_size),
    };
    let g = if a.qa {
        let recs = ingest_qa(&a.records).with_context(|| format!("reading QA records {}", a.records.display()))?;
        graph::build_qa_graph_with(&recs, &opts)
    } else {
        graph::build_review_graph_with(&load_records(&a.records)?, &opts)
    };
    g.save(&a.out)?;
    let s = g.stats();
    eprintln!("{} nodes, {} relation edges -> {}", s.nodes, s.relation_edges, a.out.display());
    Ok(())
}

pub fn graph_stats(a: GraphStatsArgs) -> Result<()> {
    let mut g = ReviewGraph::load(&a.graph)?;
    if let Some(path) = &a.records {
        g = g.with_labels(labels_of(&load_records(path)?))?;
    }
    let s = g.stats();
    #[derive(serde::Serialize)]
    struct Out {
        #[serde(flatten)]
        stats: graph::GraphStats,
        spam_ratio: Option<f64>,
    }
    let spam_ratio = (a.records.is_some() && s.nodes > 0).then(|| s.spam_nodes as f64 / s.nodes as f64);
    emit_json(&Out { stats: s, spam_ratio }, None)
}

pub fn embed(a: EmbedArgs, cfg: &Config, seed: Option<u64>) -> Result<()> {
    let recs = load_records(&a.records)?;
    let e = &cfg.embedding;
    let texts: Vec<String> = recs.into_iter().map(|r| r.text).collect();
    let m = match a.provider.or(e.provider).unwrap_or(Provider::Hash) {
        Provider::Hash => hash_embed(&texts, a.dim.or(e.dim).unwrap_or(DEFAULT_HASH_DIM), cfg.seed(seed, e.seed))?,
        Provider::Service => {
            let Some(endpoint) = a.endpoint.or_else(|| e.endpoint.clone()) else {
                return Err(usage("the service provider needs --endpoint or embedding.endpoint"));
            };
            let client = EmbeddingClient::from_env(
                &endpoint,
                a.batch_size.or(e.batch_size).unwrap_or(64),
                a.concurrency.or(e.concurrency).unwrap_or(4),
            )?;
            client.fetch(&texts)?
        }
    };
    save_embeddings(&a.out, &m)?;
    eprintln!("{} x {} embeddings -> {}", m.n_rows(), m.dim(), a.out.display());
    Ok(())
}

struct Loaded {
    labels: Vec<Label>,
    split: SplitAssignment,
    embeddings: EmbeddingMatrix,
    features: Option<EmbeddingMatrix>,
    graph: ReviewGraph,
}

impl Loaded {
    fn data(&self) -> TrainData<'_> {
        TrainData {
            graph: &self.graph,
            embeddings: &self.embeddings,
            features: self.features.as_ref(),
            labels: &self.labels,
            split: &self.split,
        }
    }
}

fn load_data(a: &DataArgs, use_graph: bool) -> Result<Loaded> {
    let labels = labels_of(&load_records(&a.records)?);
    let split = SplitAssignment::load(&a.split)?;
    let embeddings = load_embeddings(&a.embeddings)?;
    let features = a.features.as_deref().map(load_embeddings).transpose()?;
    let graph = match (&a.graph, use_graph) {
        (Some(path), _) => ReviewGraph::load(path)?,
        (None, false) => graph::self_loop_graph(labels.len()),
        (None, true) => return Err(usage("--graph is required unless the model ignores the graph")),
    };
    let n = labels.len();
    for (what, rows) in [
        ("split", split.len()),
        ("embeddings", embeddings.n_rows()),
        ("graph", graph.n_nodes()),
    ] {
        if rows != n {
            bail!("{what} covers {rows} nodes but the records hold {n}");
        }
    }
    if let Some(f) = &features {
        if f.n_rows() != n {
            bail!("features cover {} nodes but the records hold {n}", f.n_rows());
        }
    }
    Ok(Loaded {
        labels,
        split,
        embeddings,
        features,
        graph,
    })
}

fn model_config(a: &TrainArgs, cfg: &Config, emb_dim: usize, feature_dim: usize) -> ModelConfig {
    let m = &cfg.model;
    let mut out = ModelConfig::new(emb_dim);
    out.feature_dim = feature_dim;
    out.layer_width = a.layer_width.or(m.layer_width).unwrap_or(out.layer_width);
    out.heads = a.heads.or(m.heads).unwrap_or(out.heads);
    out.layers = a.layers.or(m.layers).unwrap_or(out.layers);
    out.prelu_slope_init = m.prelu_slope_init.map_or(out.prelu_slope_init, |s| s as f32);
    out.attention_scaling = a.attention_scaling || m.attention_scaling.unwrap_or(false);
    out.use_graph = !a.no_graph && m.use_graph.unwrap_or(true);
    out
}

fn train_config(a: &TrainArgs, cfg: &Config, seed: Option<u64>) -> TrainConfig {
    let t = &cfg.train;
    let d = TrainConfig::default();
    let clip = a.grad_clip.or(t.grad_clip);
    TrainConfig {
        epochs: a.epochs.or(t.epochs).unwrap_or(d.epochs),
        batch_size: a.batch_size.or(t.batch_size).unwrap_or(d.batch_size),
        lr: a.lr.or(t.lr).unwrap_or(d.lr),
        adam_beta1: t.adam_beta1.unwrap_or(d.adam_beta1),
        adam_beta2: t.adam_beta2.unwrap_or(d.adam_beta2),
        adam_eps: t.adam_eps.unwrap_or(d.adam_eps),
        seed: cfg.seed(seed, t.seed),
        early_stop_patience: a.patience.or(t.early_stop_patience).unwrap_or(d.early_stop_patience),
        grad_clip: match clip {
            Some(c) if c <= 0.0 => None,
            Some(c) => Some(c),
            None => d.grad_clip,
        },
    }
}

pub fn train(a: TrainArgs, cfg: &Config, seed: Option<u64>) -> Result<()> {
    let use_graph = !a.no_graph && cfg.model.use_graph.unwrap_or(true);
    let data = load_data(&a.data, use_graph)?;
    let model = model_config(&a, cfg, data.embeddings.dim(), data.features.as_ref().map_or(0, |f| f.dim()));
    let tc = train_config(&a, cfg, seed);
    let outcome = match trainer::train(data.data(), &model, &tc) {
        Ok(o) => o,
        Err(spamgraph::Error::Diverged { epoch, reason, best }) => {
            if let Some(ck) = best {
                ck.save(&a.checkpoint)?;
                eprintln!("saved last good checkpoint to {}", a.checkpoint.display());
            }
            bail!("training diverged at epoch {epoch}: {reason}");
        }
        Err(e) => return Err(e.into()),
    };
    outcome.best.save(&a.checkpoint)?;
    if let Some(path) = &a.log {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        write_epoch_log(&mut w, &outcome.log)?;
        w.flush()?;
    }
    if let Some(path) = &a.scores {
        save_scores(path, &trainer::predict(data.data(), &model, &outcome.best.params)?)?;
    }
    eprintln!(
        "best epoch {} of {}, validation AUC {}{}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_valid_auc.map_or("undefined".to_string(), |v| format!("{v:.4}")),
        if outcome.stopped_early { " (stopped early)" } else { "" }
    );
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = load_data(&a.data, ck.config.use_graph)?;
    let scores = trainer::predict(data.data(), &ck.config, &ck.params)?;
    save_scores(&a.out, &scores)?;
    eprintln!("{} scores -> {}", scores.len(), a.out.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs, cfg: &Config) -> Result<()> {
    let scores = load_scores(&a.scores)?;
    let labels = labels_of(&load_records(&a.records)?);
    let split = SplitAssignment::load(&a.split)?;
    if scores.len() != labels.len() || split.len() != labels.len() {
        bail!(
            "{} scores, {} records and a split over {} nodes do not line up",
            scores.len(),
            labels.len(),
            split.len()
        );
    }
    let include_valid = a.include_valid || cfg.evaluate.include_valid.unwrap_or(false);
    let nodes: Vec<usize> = evaluation_nodes(&split, include_valid)
        .into_iter()
        .filter(|&i| labels[i].is_known())
        .collect();
    let is_spam: Vec<bool> = labels.iter().map(|l| *l == Label::Spam).collect();
    let ratio = a.ratio.or(cfg.evaluate.ratio).unwrap_or(DEFAULT_RATIO);
    let report = evaluate_subset(&scores, &is_spam, &nodes, ratio)?;
    if let Some(path) = &a.roc_csv {
        let s: Vec<f64> = nodes.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = nodes.iter().map(|&i| is_spam[i]).collect();
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_roc_csv(BufWriter::new(f), &roc_points(&s, &l)?)?;
    }
    emit_json(&report, a.out.as_deref())
}

pub fn make_fixture(a: MakeFixtureArgs, cfg: &Config, seed: Option<u64>) -> Result<()> {
    let recs = separable_corpus(&FixtureSpec::default(), seed.or(cfg.seed).unwrap_or(7));
    save_reviews(&a.out, &recs)?;
    eprintln!("{} records -> {}", recs.len(), a.out.display());
    Ok(())
}
