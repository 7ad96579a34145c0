//! `synth` subcommands: plan, generate, inject, stats and judge prompts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use spamgraph::records::save_reviews;
use spamgraph::synth::{
    build_plan, corpus_stats, generate_all, inject_spam, load_catalog, parse_judge_scores, parse_reviews,
    render_judge_prompt, word_count, ChatClient, CorpusStats, GenerationRequest, Generator, PlanConfig,
    ProductCatalog, Sentiment, StubGenerator, SynthesisPlan,
};

use crate::config::Config;
use crate::detect::load_records;
use crate::{usage, SynthCommand};

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Genuine corpus.
    #[arg(long)]
    records: PathBuf,
    /// JSONL of {product_id, name, category, description}.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Products with a mean rating below this are eligible (default 4.3).
    #[arg(long)]
    threshold: Option<f64>,
    /// Number of target products (default 500).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    reviews_per_product: Option<usize>,
    #[arg(long)]
    max_words: Option<usize>,
    #[arg(long, value_enum)]
    sentiment: Option<SentimentArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SentimentArg {
    Positive,
    Negative,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Filled plan.
    #[arg(long)]
    out: PathBuf,
    /// Offline template generator.
    #[arg(long, conflicts_with = "endpoint")]
    stub: bool,
    /// Chat service URL; the key is read from CHAT_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    /// Requests in flight at once (default 4).
    #[arg(long)]
    concurrency: Option<usize>,
    /// Parse report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    #[arg(long)]
    records: PathBuf,
    /// Filled plan.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Filled plan.
    #[arg(long)]
    plan: PathBuf,
    /// Add-one smoothing for every n-gram order.
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct JudgePromptsArgs {
    /// Filled plan.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// JSONL, one prompt per generated review.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct JudgeScoresArgs {
    /// JSONL rows carrying a string `reply`; other fields are copied through.
    #[arg(long)]
    replies: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cmd: SynthCommand, cfg: &Config, seed: Option<u64>) -> Result<()> {
    match cmd {
        SynthCommand::Plan(a) => plan(a, cfg, seed),
        SynthCommand::Generate(a) => generate(a, cfg, seed),
        SynthCommand::Inject(a) => inject(a),
        SynthCommand::Stats(a) => stats(a),
        SynthCommand::JudgePrompts(a) => judge_prompts(a),
        SynthCommand::JudgeScores(a) => judge_scores(a),
    }
}

fn catalog(path: Option<&Path>) -> Result<ProductCatalog> {
    Ok(match path {
        Some(p) => load_catalog(p)?,
        None => ProductCatalog::new(),
    })
}

fn plan(a: PlanArgs, cfg: &Config, seed: Option<u64>) -> Result<()> {
    let recs = load_records(&a.records)?;
    let s = &cfg.synth;
    let d = PlanConfig::default();
    let pc = PlanConfig {
        threshold: a.threshold.or(s.threshold).unwrap_or(d.threshold),
        count: a.count.or(s.count).unwrap_or(d.count),
        reviews_per_product: a.reviews_per_product.or(s.reviews_per_product).unwrap_or(d.reviews_per_product),
        max_words: a.max_words.or(s.max_words).unwrap_or(d.max_words),
        sentiment: match a.sentiment {
            Some(SentimentArg::Positive) => Sentiment::Positive,
            Some(SentimentArg::Negative) => Sentiment::Negative,
            None => s.sentiment.unwrap_or(d.sentiment),
        },
        seed: cfg.seed(seed, s.seed),
    };
    let plan = build_plan(&recs, &catalog(a.catalog.as_deref())?, &pc)?;
    plan.save(&a.out)?;
    eprintln!(
        "{} targets, {} reviews planned -> {}",
        plan.products.len(),
        plan.products.len() * pc.reviews_per_product,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct GenerateReport {
    required: usize,
    parsed: usize,
    shortfall: usize,
    failed_completions: usize,
    over_max_words: usize,
}

fn generate(a: GenerateArgs, cfg: &Config, seed: Option<u64>) -> Result<()> {
    let generator = match (a.stub, a.endpoint.or_else(|| cfg.synth.endpoint.clone())) {
        (true, _) => Generator::Stub(StubGenerator::new(cfg.seed(seed, cfg.synth.seed))),
        (false, Some(url)) => Generator::Chat(ChatClient::from_env(&url)?),
        (false, None) => return Err(usage("choose --stub or --endpoint (or set synth.endpoint)")),
    };
    let mut plan = SynthesisPlan::load(&a.plan)?;
    let requests: Vec<GenerationRequest> = plan.products.iter().map(|p| p.request.clone()).collect();
    let completions = generate_all(&requests, &generator, a.concurrency.or(cfg.synth.concurrency).unwrap_or(4))?;
    let mut report = GenerateReport {
        required: 0,
        parsed: 0,
        shortfall: 0,
        failed_completions: 0,
        over_max_words: 0,
    };
    for (p, text) in plan.products.iter_mut().zip(&completions) {
        let n = p.request.review_number;
        let (mut reviews, r) = parse_reviews(text, n);
        reviews.truncate(n);
        report.required += n;
        report.parsed += reviews.len();
        report.shortfall += r.shortfall;
        report.failed_completions += r.failed as usize;
        report.over_max_words += reviews.iter().filter(|t| word_count(t) > p.request.max_words).count();
        p.texts = reviews;
    }
    plan.save(&a.out)?;
    let json = serde_json::to_string(&report)?;
    if let Some(path) = &a.report {
        std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("parsed {}/{} reviews -> {}", report.parsed, report.required, a.out.display());
    Ok(())
}

fn inject(a: InjectArgs) -> Result<()> {
    let recs = load_records(&a.records)?;
    let plan = SynthesisPlan::load(&a.plan)?;
    let out = inject_spam(&recs, &plan)?;
    save_reviews(&a.out, &out)?;
    let spam = out.len() - recs.len();
    eprintln!(
        "{} genuine + {spam} spam ({:.4}% spam) -> {}",
        recs.len(),
        100.0 * spam as f64 / out.len().max(1) as f64,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct StatsReport {
    /// Parsed reviews over requested reviews.
    outputted: usize,
    required: usize,
    #[serde(flatten)]
    stats: CorpusStats,
}

fn stats(a: StatsArgs) -> Result<()> {
    let plan = SynthesisPlan::load(&a.plan)?;
    let groups: Vec<Vec<String>> = plan.products.iter().map(|p| p.texts.clone()).collect();
    let report = StatsReport {
        outputted: groups.iter().map(Vec::len).sum(),
        required: plan.products.iter().map(|p| p.request.review_number).sum(),
        stats: corpus_stats(&groups, a.smooth),
    };
    let json = serde_json::to_string(&report)?;
    if let Some(path) = &a.out {
        std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{json}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct JudgeRow<'a> {
    product_id: &'a str,
    review_index: usize,
    system: String,
    user: String,
}

fn judge_prompts(a: JudgePromptsArgs) -> Result<()> {
    let plan = SynthesisPlan::load(&a.plan)?;
    let cat = catalog(a.catalog.as_deref())?;
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(f);
    let mut n = 0;
    for p in &plan.products {
        let category = cat
            .get(&p.product_id)
            .map(|i| i.category.as_str())
            .unwrap_or(&p.request.product_category);
        for (k, text) in p.texts.iter().enumerate() {
            let prompt = render_judge_prompt(&p.request.product_name, category, text);
            let row = JudgeRow {
                product_id: &p.product_id,
                review_index: k,
                system: prompt.system,
                user: prompt.user,
            };
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
            n += 1;
        }
    }
    w.flush()?;
    eprintln!("{n} judge prompts -> {}", a.out.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ReplyRow {
    reply: String,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

fn judge_scores(a: JudgeScoresArgs) -> Result<()> {
    let f = File::open(&a.replies).with_context(|| format!("opening {}", a.replies.display()))?;
    let out = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(out);
    let (mut rows, mut complete) = (0, 0);
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ReplyRow = serde_json::from_str(&line).with_context(|| format!("replies row {i}"))?;
        let scores = parse_judge_scores(&row.reply);
        complete += scores.iter().all(Option::is_some) as usize;
        rows += 1;
        let mut obj = row.rest;
        obj.insert("scores".into(), serde_json::to_value(scores)?);
        serde_json::to_writer(&mut w, &obj)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    eprintln!("{complete}/{rows} replies with all five scores -> {}", a.out.display());
    Ok(())
}
