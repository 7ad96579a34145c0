//! `spamgraph`: review-graph spam detection and spam-dataset synthesis.

mod config;
mod detect;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, Provider};

#[derive(Parser, Debug)]
#[command(name = "spamgraph", version, about, arg_required_else_help = true)]
pub struct Cli {
    /// TOML config with [split], [graph], [embedding], [model], [train],
    /// [evaluate] and [synth] sections.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every randomized step; overrides all seeds in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a JSONL or CSV review file and write canonical JSONL.
    Ingest(IngestArgs),
    /// Assign every review to train, valid or test.
    Split(SplitArgs),
    /// Build the review graph (or the QA graph with --qa).
    BuildGraph(BuildGraphArgs),
    /// Print node and edge counts of a graph file as JSON.
    GraphStats(GraphStatsArgs),
    /// Compute text embeddings for every review.
    Embed(EmbedArgs),
    /// Train a detector; writes a checkpoint and a JSONL epoch log.
    Train(TrainArgs),
    /// Score every review with a trained checkpoint.
    Predict(PredictArgs),
    /// AUC and precision/recall at a flagging ratio, as JSON.
    Evaluate(EvaluateArgs),
    /// Write the separable 300-review synthetic corpus.
    MakeFixture(MakeFixtureArgs),
    /// Spam-dataset synthesis.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train, valid and test fractions (default 0.01,0.09,0.90).
    #[arg(long, value_delimiter = ',', value_name = "TRAIN,VALID,TEST")]
    ratios: Option<Vec<f64>>,
    /// Apply the ratios within each label class.
    #[arg(long)]
    stratified: bool,
}

#[derive(Args, Debug)]
pub struct BuildGraphArgs {
    /// Reviews JSONL, or QA JSONL with --qa.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    qa: bool,
    /// Skip grouping keys shared by more than this many records.
    #[arg(long)]
    max_group_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GraphStatsArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Records whose labels fill the spam and labeled counts.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    /// Hash embedding width (default 64).
    #[arg(long)]
    dim: Option<usize>,
    /// Embedding service URL; the key is read from EMBED_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    concurrency: Option<usize>,
}

/// Inputs shared by train and predict.
#[derive(Args, Debug)]
pub struct DataArgs {
    /// Labeled records (labels only are read).
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Graph file; optional when the model ignores the graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Engineered features (EMB1 file) concatenated to the embeddings.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL rows {epoch, train_loss, valid_auc}.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also score every node with the best checkpoint.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Replace graph layers with the MLP head on fused embeddings.
    #[arg(long)]
    no_graph: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Global-norm gradient bound; 0 disables clipping.
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    layer_width: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Divide attention logits by sqrt(head width).
    #[arg(long)]
    attention_scaling: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV `node,score`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// CSV `node,score` from train or predict.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Fraction of evaluated nodes flagged as spam (default 0.03).
    #[arg(long)]
    ratio: Option<f64>,
    /// Evaluate on validation plus test nodes.
    #[arg(long)]
    include_valid: bool,
    #[arg(long)]
    roc_csv: Option<PathBuf>,
    /// Also write the JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MakeFixtureArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Choose targets, compromised users and posting times.
    Plan(synth::PlanArgs),
    /// Fill a plan with generated reviews.
    Generate(synth::GenerateArgs),
    /// Append a filled plan's reviews to the genuine corpus.
    Inject(synth::InjectArgs),
    /// Length and pairwise-BLEU statistics of a filled plan.
    Stats(synth::StatsArgs),
    /// Judge prompts for every generated review, as JSONL.
    JudgePrompts(synth::JudgePromptsArgs),
    /// Parse judge replies (JSONL with a `reply` field) into scores.
    JudgeScores(synth::JudgeScoresArgs),
}

/// Errors that mean the invocation itself was wrong (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => Config::default(),
    };
    let seed = cli.seed;
    match cli.command {
        Command::Ingest(a) => detect::ingest(a),
        Command::Split(a) => detect::split(a, &cfg, seed),
        Command::BuildGraph(a) => detect::build_graph(a, &cfg),
        Command::GraphStats(a) => detect::graph_stats(a),
        Command::Embed(a) => detect::embed(a, &cfg, seed),
        Command::Train(a) => detect::train(a, &cfg, seed),
        Command::Predict(a) => detect::predict(a),
        Command::Evaluate(a) => detect::evaluate(a, &cfg),
        Command::MakeFixture(a) => detect::make_fixture(a, &cfg, seed),
        Command::Synth(c) => synth::run(c, &cfg, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
