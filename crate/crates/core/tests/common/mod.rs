//! Independent reference implementations used as test oracles. Nothing
//! here calls into the library's numeric code paths.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spamgraph::graph::ReviewGraph;
use spamgraph::model::{forward, ForwardInputs, ModelConfig, Params, RiskLabel, RiskLabels};
use spamgraph::trainer::loss_and_gradients;
use spamgraph::records::{Label, ReviewRecord};
use spamgraph::tensor::Matrix;

pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &Matrix<f64>) -> Dense {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect())
        .collect()
}

pub fn mm(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols)
                .map(|j| (0..inner).map(|p| row[p] * b[p][j]).sum())
                .collect()
        })
        .collect()
}

pub fn zip(a: &Dense, b: &Dense, f: impl Fn(f64, f64) -> f64) -> Dense {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| f(u, v)).collect())
        .collect()
}

pub fn map(a: &Dense, f: impl Fn(f64) -> f64) -> Dense {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

pub fn hcat(parts: &[&Dense]) -> Dense {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense n x n adjacency (including the diagonal) read off a graph.
pub fn adjacency(g: &ReviewGraph) -> Vec<Vec<bool>> {
    let n = g.n_nodes();
    (0..n).map(|i| (0..n).map(|j| g.contains(i, j)).collect()).collect()
}

/// Masked full-matrix attention for one head.
pub fn dense_attention(q: &Dense, k: &Dense, v: &Dense, adj: &[Vec<bool>], scale: f64) -> (Dense, Dense) {
    let n = q.len();
    let mut alpha = vec![vec![0.0; n]; n];
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                if adj[i][j] {
                    scale * q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..n {
            alpha[i][j] = e[j] / z;
        }
    }
    (mm(&alpha, v), alpha)
}

pub struct DenseTrace {
    pub fused: Dense,
    pub layers: Vec<Dense>,
    pub gates: Vec<Dense>,
    pub alphas: Vec<Vec<Dense>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Whole network, written directly from the layer equations.
pub fn dense_forward(
    p: &Params<f64>,
    cfg: &ModelConfig,
    x: &Dense,
    features: Option<&Dense>,
    risk: &[usize],
    adj: &[Vec<bool>],
) -> DenseTrace {
    let prelu = |a: f64| move |u: f64| if u > 0.0 { u } else { a * u };
    let z: Dense = risk.iter().map(|&r| p.risk_table.row(r).to_vec()).collect();
    let pre = zip(&mm(x, &dense(&p.fusion_input)), &mm(&z, &dense(&p.fusion_risk)), |a, b| a + b);
    let act = map(&pre, prelu(p.fusion_slope.get(0, 0)));
    let fused = zip(x, &mm(&act, &dense(&p.fusion_output)), |a, b| a + b);
    let mut h = match features {
        Some(f) => hcat(&[&fused, f]),
        None => fused.clone(),
    };
    let scale = if cfg.attention_scaling {
        1.0 / (cfg.head_width() as f64).sqrt()
    } else {
        1.0
    };
    let (mut layers, mut gates, mut alphas) = (Vec::new(), Vec::new(), Vec::new());
    if cfg.use_graph {
        for l in &p.layers {
            let mut heads = Vec::new();
            let mut head_alpha = Vec::new();
            for s in 0..l.query.len() {
                let q = mm(&h, &dense(&l.query[s]));
                let k = mm(&h, &dense(&l.key[s]));
                let v = mm(&h, &dense(&l.value[s]));
                let (out, a) = dense_attention(&q, &k, &v, adj, scale);
                heads.push(out);
                head_alpha.push(a);
            }
            let refs: Vec<&Dense> = heads.iter().collect();
            let agg = hcat(&refs);
            let o = mm(&h, &dense(&l.shortcut));
            let diff = zip(&o, &agg, |a, b| a - b);
            let gate = map(&mm(&hcat(&[&o, &agg, &diff]), &dense(&l.gate)), logistic);
            let mut next = o.clone();
            for i in 0..next.len() {
                for j in 0..next[i].len() {
                    next[i][j] = gate[i][j] * o[i][j] + (1.0 - gate[i][j]) * agg[i][j];
                }
            }
            h = next;
            layers.push(h.clone());
            gates.push(gate);
            alphas.push(head_alpha);
        }
    }
    let hid = mm(&h, &dense(&p.mlp_hidden));
    let b1 = p.mlp_hidden_bias.row(0);
    let hid: Dense = hid
        .iter()
        .map(|r| r.iter().zip(b1).map(|(a, b)| a + b).collect())
        .collect();
    let hid = map(&hid, prelu(p.mlp_slope.get(0, 0)));
    let out = mm(&hid, &dense(&p.mlp_output));
    let b2 = p.mlp_output_bias.get(0, 0);
    let logits: Vec<f64> = out.iter().map(|r| r[0] + b2).collect();
    let probs = logits.iter().map(|&l| logistic(l)).collect();
    DenseTrace {
        fused,
        layers,
        gates,
        alphas,
        logits,
        probs,
    }
}

pub fn dense_bce(probs: &[f64], batch: &[usize], targets: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&i, &y) in batch.iter().zip(targets) {
        let p = probs[i].clamp(1e-7, 1.0 - 1e-7);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / batch.len() as f64
}

/// Proleptic Gregorian (year, month) from days since 1970-01-01.
pub fn civil_month(ts: i64) -> (i64, u32) {
    let z = ts.div_euclid(86_400) + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + if m <= 2 { 1 } else { 0 };
    (y, m)
}

/// Every ordered pair `(i, j)` with its relation bits, plus `(i, i) -> 8`.
pub fn oracle_entries(recs: &[ReviewRecord]) -> BTreeMap<(usize, usize), u8> {
    let mut out = BTreeMap::new();
    for i in 0..recs.len() {
        out.insert((i, i), 8);
        for j in 0..recs.len() {
            if i == j {
                continue;
            }
            let (a, b) = (&recs[i], &recs[j]);
            let mut tag = 0;
            if a.user_id == b.user_id {
                tag |= 1;
            }
            if a.product_id == b.product_id && a.rating == b.rating {
                tag |= 2;
            }
            if a.product_id == b.product_id && civil_month(a.timestamp) == civil_month(b.timestamp) {
                tag |= 4;
            }
            if tag != 0 {
                out.insert((i, j), tag);
            }
        }
    }
    out
}

pub fn graph_entries(g: &ReviewGraph) -> BTreeMap<(usize, usize), u8> {
    let mut out = BTreeMap::new();
    for i in 0..g.n_nodes() {
        for (&j, &t) in g.neighbors(i).iter().zip(g.neighbor_tags(i)) {
            out.insert((i, j as usize), t);
        }
    }
    out
}

pub fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<ReviewRecord> {
    let users = rng.random_range(1..=(n / 2).max(1));
    let products = rng.random_range(1..=(n / 3).max(1));
    (0..n)
        .map(|i| ReviewRecord {
            review_id: i,
            user_id: format!("u{}", rng.random_range(0..users)),
            product_id: format!("p{}", rng.random_range(0..products)),
            rating: rng.random_range(1..=5),
            // about three years around 2020, crossing month boundaries often
            timestamp: 1_560_000_000 + rng.random_range(-50_000_000i64..50_000_000),
            text: format!("review {i}"),
            label: if rng.random_bool(0.3) { Label::Spam } else { Label::Normal },
        })
        .collect()
}

pub fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// BLEU-4 from the textbook definition, keyed on joined n-gram strings.
pub fn bleu_oracle(candidate: &str, reference: &str) -> f64 {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let grams = |t: &[&str], n: usize| {
        let mut m: HashMap<String, i64> = HashMap::new();
        if t.len() >= n {
            for i in 0..=t.len() - n {
                *m.entry(t[i..i + n].join("\u{1}")).or_default() += 1;
            }
        }
        m
    };
    let mut prod = 1.0f64;
    for n in 1..=4 {
        let cg = grams(&c, n);
        let rg = grams(&r, n);
        let total: i64 = cg.values().sum();
        let clipped: i64 = cg.iter().map(|(g, k)| (*k).min(*rg.get(g).unwrap_or(&0))).sum();
        if total == 0 || clipped == 0 {
            return 0.0;
        }
        prod *= clipped as f64 / total as f64;
    }
    let bp = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * prod.powf(0.25)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random parameters with entries in `[-s, s]`; slopes stay at their init.
pub fn random_params(cfg: &ModelConfig, seed: u64, s: f64) -> Params<f64> {
    let mut r = rng(seed);
    let mut p = spamgraph::model::init_params(cfg, seed).unwrap().cast::<f64>();
    let names = spamgraph::model::tensor_names(cfg);
    for (m, name) in p.tensors_mut().into_iter().zip(names) {
        if name.ends_with("prelu") {
            continue;
        }
        for v in m.data_mut() {
            *v = r.random_range(-s..=s);
        }
    }
    p
}

pub fn random_dense(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Dense {
    (0..rows)
        .map(|_| (0..cols).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_embedding(d: &Dense) -> spamgraph::embed::EmbeddingMatrix {
    let rows = d.len();
    let cols = if rows == 0 { 0 } else { d[0].len() };
    spamgraph::embed::EmbeddingMatrix::new(rows, cols, d.iter().flatten().map(|&v| v as f32).collect()).unwrap()
}

/// Values exactly representable in f32, so f32 inputs and the f64 oracle agree.
pub fn f32_exact(d: &Dense) -> Dense {
    map(d, |v| v as f32 as f64)
}

/// Graph with the given undirected edges plus self-loops.
pub fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> ReviewGraph {
    let mut entries: Vec<(u32, u32, u8)> = (0..n).map(|i| (i as u32, i as u32, 8)).collect();
    for &(a, b) in edges {
        entries.push((a as u32, b as u32, 1));
        entries.push((b as u32, a as u32, 1));
    }
    ReviewGraph::from_entries(n, entries)
}

/// The bundled separable corpus prepared for training: review graph, 64-dim
/// hash embeddings, labels, and a 1% / 49% / 50% split.
pub struct FixtureTask {
    pub graph: ReviewGraph,
    pub embeddings: spamgraph::embed::EmbeddingMatrix,
    pub labels: Vec<Label>,
    pub split: spamgraph::records::SplitAssignment,
}

pub const FIXTURE_SPLIT: [f64; 3] = [0.01, 0.49, 0.5];
pub const FIXTURE_EMBED_DIM: usize = 64;

pub fn fixture_task(split_seed: u64) -> FixtureTask {
    use spamgraph::fixture::{separable_corpus, FixtureSpec};
    let recs = separable_corpus(&FixtureSpec::default(), 7);
    let texts: Vec<&str> = recs.iter().map(|r| r.text.as_str()).collect();
    FixtureTask {
        graph: spamgraph::graph::build_review_graph(&recs),
        embeddings: spamgraph::embed::hash_embed(&texts, FIXTURE_EMBED_DIM, 0).unwrap(),
        labels: spamgraph::records::labels_of(&recs),
        split: spamgraph::records::make_split(recs.len(), FIXTURE_SPLIT, split_seed).unwrap(),
    }
}

impl FixtureTask {
    pub fn data(&self) -> spamgraph::trainer::TrainData<'_> {
        spamgraph::trainer::TrainData {
            graph: &self.graph,
            embeddings: &self.embeddings,
            features: None,
            labels: &self.labels,
            split: &self.split,
        }
    }
}

/// Forward outputs before and after flipping the stored label of `node`,
/// which must sit in `batch`.
pub fn leakage_pair(task: &FixtureTask, batch: &[usize], node: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
    use spamgraph::model::{forward, init_params, ForwardInputs, ModelConfig};
    use spamgraph::trainer::{build_risk_labels, MaskMode};
    let cfg = ModelConfig::new(task.embeddings.dim());
    let params = init_params(&cfg, seed).unwrap();
    assert!(batch.contains(&node));
    let run = |labels: &[Label]| {
        let risk = build_risk_labels(&task.split, labels, batch, MaskMode::Train).unwrap();
        forward(
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
    let before = run(&task.labels);
    let mut flipped = task.labels.clone();
    flipped[node] = match flipped[node] {
        Label::Spam => Label::Normal,
        _ => Label::Spam,
    };
    (before, run(&flipped))
}

/// Marketplace-shaped corpus: every product and user has at least one
/// review; each product has its own rating bias so means spread across
/// 1..5; user activity is skewed.
pub fn market_corpus(r: &mut ChaCha8Rng, n_products: usize, n_users: usize, n_reviews: usize) -> Vec<ReviewRecord> {
    assert!(n_reviews >= n_products.max(n_users));
    let bias: Vec<f64> = (0..n_products).map(|_| r.random_range(0.0..1.0)).collect();
    (0..n_reviews)
        .map(|i| {
            let product = if i < n_products { i } else { r.random_range(0..n_products) };
            let user = if i < n_users {
                i
            } else {
                // squared uniform favours low ids
                let u: f64 = r.random_range(0.0..1.0);
                ((u * u) * n_users as f64) as usize
            };
            let rating = if r.random_bool(bias[product]) { 5 } else { r.random_range(1..=4) };
            ReviewRecord {
                review_id: i,
                user_id: format!("u{user}"),
                product_id: format!("p{product}"),
                rating,
                timestamp: 1_500_000_000 + r.random_range(0..40_000_000),
                text: format!("review {i} of p{product}"),
                label: Label::Unknown,
            }
        })
        .collect()
}

/// Plan, stub-generate, parse and inject. Returns the filled plan and the
/// augmented corpus.
pub fn synthesize(
    records: &[ReviewRecord],
    cfg: &spamgraph::synth::PlanConfig,
    stub_seed: u64,
) -> (spamgraph::synth::SynthesisPlan, Vec<ReviewRecord>) {
    use spamgraph::synth::*;
    let mut plan = build_plan(records, &ProductCatalog::new(), cfg).unwrap();
    let requests: Vec<GenerationRequest> = plan.products.iter().map(|p| p.request.clone()).collect();
    let raw = generate_all(&requests, &Generator::Stub(StubGenerator::new(stub_seed)), 4).unwrap();
    for (p, text) in plan.products.iter_mut().zip(raw) {
        p.texts = parse_reviews(&text, p.request.review_number).0;
    }
    let out = inject_spam(records, &plan).unwrap();
    (plan, out)
}

// Model cases shared by the oracle, gradient and acceptance targets.

pub fn cfg(emb: usize, width: usize, heads: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        layer_width: width,
        heads,
        layers,
        ..ModelConfig::new(emb)
    }
}

pub fn risk_of(codes: &[usize]) -> RiskLabels {
    RiskLabels(
        codes
            .iter()
            .map(|&c| [RiskLabel::Normal, RiskLabel::Fraud, RiskLabel::Unknown][c])
            .collect(),
    )
}

pub fn matrix(d: &Dense) -> Matrix<f64> {
    Matrix::from_fn(d.len(), d[0].len(), |i, j| d[i][j])
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub struct Case {
    pub cfg: ModelConfig,
    pub x: Dense,
    pub feats: Option<Dense>,
    pub risk: Vec<usize>,
    pub graph: spamgraph::graph::ReviewGraph,
    pub params: spamgraph::model::Params<f64>,
}

pub fn random_case(seed: u64, n: usize, use_graph: bool, with_features: bool) -> Case {
    let mut r = rng(seed);
    let emb = r.random_range(2..6);
    let heads = r.random_range(1..=3);
    let hw = r.random_range(1..=3);
    let mut c = cfg(emb, heads * hw, heads, r.random_range(1..=2));
    c.use_graph = use_graph;
    c.attention_scaling = r.random_bool(0.5);
    c.feature_dim = if with_features { 2 } else { 0 };
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(0.15) {
                edges.push((i, j));
            }
        }
    }
    // parameters and inputs rounded through f32 so the f32 path sees the same numbers
    let params = random_params(&c, seed, 0.6).cast::<f32>().cast::<f64>();
    Case {
        x: f32_exact(&random_dense(&mut r, n, emb)),
        feats: with_features.then(|| f32_exact(&random_dense(&mut r, n, 2))),
        risk: (0..n).map(|_| r.random_range(0..3)).collect(),
        graph: graph_from_edges(n, &edges),
        params,
        cfg: c,
    }
}

pub fn run_f32(case: &Case) -> Vec<f64> {
    let x = to_embedding(&case.x);
    let f = case.feats.as_ref().map(to_embedding);
    let risk = risk_of(&case.risk);
    forward(
        ForwardInputs {
            embeddings: &x,
            features: f.as_ref(),
            risk: &risk,
            graph: &case.graph,
        },
        &case.params.cast::<f32>(),
        &case.cfg,
    )
    .unwrap()
    .into_iter()
    .map(f64::from)
    .collect()
}

pub fn run_f64(case: &Case) -> Vec<f64> {
    let x = to_embedding(&case.x);
    let f = case.feats.as_ref().map(to_embedding);
    let risk = risk_of(&case.risk);
    forward(
        ForwardInputs {
            embeddings: &x,
            features: f.as_ref(),
            risk: &risk,
            graph: &case.graph,
        },
        &case.params,
        &case.cfg,
    )
    .unwrap()
}

pub struct Instance {
    pub cfg: ModelConfig,
    pub params: Params<f64>,
    pub x: Dense,
    pub risk: Vec<usize>,
    pub graph: ReviewGraph,
    pub batch: Vec<usize>,
    pub targets: Vec<f64>,
}

/// 6 nodes, 2 layers, 2 heads.
pub fn six_node_instance(seed: u64) -> Instance {
    let cfg = ModelConfig {
        layer_width: 4,
        heads: 2,
        layers: 2,
        ..ModelConfig::new(3)
    };
    let mut r = rng(seed);
    Instance {
        params: random_params(&cfg, seed, 0.8).cast::<f32>().cast::<f64>(),
        cfg,
        x: f32_exact(&random_dense(&mut r, 6, 3)),
        risk: vec![0, 1, 2, 2, 1, 2],
        graph: graph_from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 4), (4, 5)]),
        batch: vec![2, 3, 5],
        targets: vec![1.0, 0.0, 1.0],
    }
}

pub fn oracle_loss(inst: &Instance, p: &Params<f64>) -> f64 {
    let t = dense_forward(p, &inst.cfg, &inst.x, None, &inst.risk, &adjacency(&inst.graph));
    dense_bce(&t.probs, &inst.batch, &inst.targets)
}

/// Max over entries of `|a - n| / max(|a|, |n|, floor)` between analytic and
/// central-difference gradients, per tensor.
pub fn gradient_errors(inst: &Instance, h: f64, floor: f64) -> Vec<(String, f64)> {
    let x = to_embedding(&inst.x);
    let risk = risk_of(&inst.risk);
    let inputs = ForwardInputs {
        embeddings: &x,
        features: None,
        risk: &risk,
        graph: &inst.graph,
    };
    let (_, grads) = loss_and_gradients(&inst.params, &inst.cfg, inputs, &inst.batch, &inst.targets).unwrap();
    let names = spamgraph::model::tensor_names(&inst.cfg);
    let n_tensors = names.len();
    let mut out = Vec::new();
    for t in 0..n_tensors {
        let analytic = grads.tensors()[t].clone();
        let mut worst = 0.0f64;
        for k in 0..analytic.data().len() {
            let mut plus = inst.params.clone();
            plus.tensors_mut()[t].data_mut()[k] += h;
            let mut minus = inst.params.clone();
            minus.tensors_mut()[t].data_mut()[k] -= h;
            let numeric = (oracle_loss(inst, &plus) - oracle_loss(inst, &minus)) / (2.0 * h);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push((names[t].clone(), worst));
    }
    out
}

