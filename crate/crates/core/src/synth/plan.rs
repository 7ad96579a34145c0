//! Target selection, compromised-user assignment and spam injection.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Label, ReviewRecord};

use super::prompt::{GenerationRequest, Sentiment};

/// Length of the posting window after a product's first genuine review.
pub const INJECTION_WINDOW_SECS: i64 = 5 * 86_400;

const STREAM_TARGETS: u64 = 0;
const STREAM_USERS: u64 = 1;
const STREAM_TIMES: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductInfo {
    pub product_id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub description: String,
}

pub type ProductCatalog = HashMap<String, ProductInfo>;

/// Reads a JSONL catalog of `{product_id, name, category, description}`.
pub fn load_catalog(path: &Path) -> Result<ProductCatalog> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (row, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let info: ProductInfo = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row,
            field: "catalog".into(),
            reason: e.to_string(),
        })?;
        out.insert(info.product_id.clone(), info);
    }
    Ok(out)
}

/// Mean star rating per product, keyed in id order.
pub fn product_means(records: &[ReviewRecord]) -> BTreeMap<&str, f64> {
    let mut sums: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = sums.entry(r.product_id.as_str()).or_default();
        e.0 += r.rating as u64;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(k, (s, n))| (k, s as f64 / n as f64))
        .collect()
}

/// Uniformly samples up to `count` products whose mean rating is below
/// `threshold`.
pub fn select_target_products(
    records: &[ReviewRecord],
    threshold: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let eligible: Vec<&str> = product_means(records)
        .into_iter()
        .filter(|(_, m)| *m < threshold)
        .map(|(p, _)| p)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no product has a mean rating below {threshold}"
        )));
    }
    let mut rng = rng_for(seed, STREAM_TARGETS);
    let k = count.min(eligible.len());
    Ok(index::sample(&mut rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i].to_string())
        .collect())
}

/// Earliest genuine review of `product` (ties by review id).
pub fn first_review<'a>(records: &'a [ReviewRecord], product: &str) -> Option<&'a ReviewRecord> {
    records
        .iter()
        .filter(|r| r.product_id == product)
        .min_by_key(|r| (r.timestamp, r.review_id))
}

/// Users needed for one product: each posts two reviews, the last one
/// posts a single review when the count is odd.
pub fn users_per_product(reviews_per_product: usize) -> usize {
    reviews_per_product.div_ceil(2)
}

/// Weighted sampling without replacement, weights = review counts. Returns
/// one user id per spam review, grouped per product in pairs (2/2/1 for
/// five reviews); no user serves two products.
pub fn assign_compromised_users(
    records: &[ReviewRecord],
    n_products: usize,
    reviews_per_product: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.user_id.as_str()).or_default() += 1;
    }
    let users: Vec<(&str, usize)> = counts.into_iter().collect();
    let per_product = users_per_product(reviews_per_product);
    let needed = n_products * per_product;
    if needed > users.len() {
        return Err(Error::InvalidArgument(format!(
            "need {needed} distinct users, corpus has {}",
            users.len()
        )));
    }
    let mut rng = rng_for(seed, STREAM_USERS);
    let picked = index::sample_weighted(&mut rng, users.len(), |i| users[i].1 as f64, needed)
        .map_err(|e| Error::InvalidArgument(format!("user sampling: {e}")))?;
    let picked: Vec<usize> = picked.into_iter().collect();
    Ok(picked
        .chunks(per_product.max(1))
        .take(n_products)
        .map(|group| {
            (0..reviews_per_product)
                .map(|r| users[group[r / 2]].0.to_string())
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedProduct {
    pub product_id: String,
    pub request: GenerationRequest,
    pub user_ids: Vec<String>,
    pub timestamps: Vec<i64>,
    pub rating: u8,
    /// Filled by the generation step.
    #[serde(default)]
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisPlan {
    pub seed: u64,
    pub products: Vec<PlannedProduct>,
}

impl SynthesisPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Number of spam records `inject_spam` will append.
    pub fn n_spam(&self) -> usize {
        self.products.iter().map(injectable).sum()
    }
}

fn injectable(p: &PlannedProduct) -> usize {
    p.texts.len().min(p.user_ids.len()).min(p.timestamps.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub threshold: f64,
    pub count: usize,
    pub reviews_per_product: usize,
    pub max_words: usize,
    pub sentiment: Sentiment,
    pub seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            threshold: 4.3,
            count: 500,
            reviews_per_product: 5,
            max_words: 100,
            sentiment: Sentiment::Positive,
            seed: 0,
        }
    }
}

/// Targets, generation requests, compromised users and posting times.
/// Texts are left empty for the generation step.
pub fn build_plan(records: &[ReviewRecord], catalog: &ProductCatalog, cfg: &PlanConfig) -> Result<SynthesisPlan> {
    let targets = select_target_products(records, cfg.threshold, cfg.count, cfg.seed)?;
    let users = assign_compromised_users(records, targets.len(), cfg.reviews_per_product, cfg.seed)?;
    let mut rng = rng_for(cfg.seed, STREAM_TIMES);
    let mut products = Vec::with_capacity(targets.len());
    for (pid, user_ids) in targets.into_iter().zip(users) {
        let first = first_review(records, &pid).expect("target drawn from corpus");
        let info = catalog.get(&pid);
        let request = GenerationRequest {
            product_name: info
                .map(|i| i.name.clone())
                .filter(|n| !n.is_empty())
                .unwrap_or_else(|| pid.clone()),
            product_category: info.map(|i| i.category.clone()).unwrap_or_default(),
            product_description: info.map(|i| i.description.clone()).unwrap_or_default(),
            reference_reviews: vec![first.text.clone()],
            review_number: cfg.reviews_per_product,
            sentiment: cfg.sentiment,
            max_words: cfg.max_words,
        };
        request.validate()?;
        let t0 = first.timestamp;
        let timestamps = (0..cfg.reviews_per_product)
            .map(|_| rng.random_range(t0..=t0 + INJECTION_WINDOW_SECS))
            .collect();
        products.push(PlannedProduct {
            product_id: pid,
            request,
            user_ids,
            timestamps,
            rating: 5,
            texts: Vec::new(),
        });
    }
    Ok(SynthesisPlan {
        seed: cfg.seed,
        products,
    })
}

/// Genuine records (relabeled normal, otherwise unchanged) followed by one
/// spam record per planned text, with dense ids continuing after the
/// genuine ones.
pub fn inject_spam(records: &[ReviewRecord], plan: &SynthesisPlan) -> Result<Vec<ReviewRecord>> {
    let mut out: Vec<ReviewRecord> = records
        .iter()
        .map(|r| ReviewRecord {
            label: Label::Normal,
            ..r.clone()
        })
        .collect();
    for p in &plan.products {
        let Some(first) = first_review(records, &p.product_id) else {
            return Err(Error::InvalidArgument(format!(
                "target product {} is not in the corpus",
                p.product_id
            )));
        };
        let t0 = first.timestamp;
        for k in 0..injectable(p) {
            let ts = p.timestamps[k];
            if ts < t0 || ts > t0 + INJECTION_WINDOW_SECS {
                return Err(Error::InvalidArgument(format!(
                    "timestamp {ts} for {} is outside its injection window",
                    p.product_id
                )));
            }
            out.push(ReviewRecord {
                review_id: out.len(),
                user_id: p.user_ids[k].clone(),
                product_id: p.product_id.clone(),
                rating: p.rating,
                timestamp: ts,
                text: p.texts[k].clone(),
                label: Label::Spam,
            });
        }
    }
    Ok(out)
}
