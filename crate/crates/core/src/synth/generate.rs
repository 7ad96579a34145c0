//! Review generation backends and parsing of their completions.

use std::sync::LazyLock;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::http::JsonClient;

use super::prompt::{render_generation_prompt, GenerationRequest, Sentiment};

pub const CHAT_KEY_VAR: &str = "CHAT_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// Client for a chat service speaking
/// `{"messages": [...]} -> {"content": "..."}`.
#[derive(Debug, Clone)]
pub struct ChatClient {
    http: JsonClient,
}

impl ChatClient {
    pub fn new(http: JsonClient) -> Self {
        ChatClient { http }
    }

    /// Key taken from `CHAT_API_KEY`.
    pub fn from_env(endpoint: &str) -> Result<Self> {
        Ok(ChatClient::new(JsonClient::from_env(endpoint, CHAT_KEY_VAR)?))
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let resp = self.http.post(&json!({ "messages": messages }))?;
        resp.get("content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Protocol("chat response lacks a string `content` field".into()))
    }
}

const OPENERS: &[&str] = &[
    "I bought the {p} last month and",
    "After two weeks with the {p},",
    "A friend recommended the {p} and",
    "I was unsure about the {p} at first, but",
    "We ordered the {p} for the office and",
    "Picked up the {p} on a whim and",
    "Having tried several similar products, the {p}",
    "My family has used the {p} daily and",
];

const POSITIVE_POINTS: &[&str] = &[
    "it works exactly as described",
    "the build quality surprised me",
    "setup took only a few minutes",
    "it beats every alternative I tried",
    "the value for money is excellent",
    "shipping was fast and the packaging neat",
    "it feels sturdy and well made",
    "the instructions were clear",
    "it solved a problem I had for years",
    "everyone who sees it asks where I got it",
];

const POSITIVE_CLOSERS: &[&str] = &[
    "Highly recommend it.",
    "Five stars from me.",
    "Would buy again without hesitation.",
    "Worth every penny.",
    "Very happy with this purchase.",
    "It has earned a permanent spot in my routine.",
];

const NEGATIVE_POINTS: &[&str] = &[
    "it stopped working within days",
    "the materials feel flimsy",
    "setup was a frustrating mess",
    "it does not match the description",
    "customer support never replied",
    "it arrived scratched",
    "the instructions made no sense",
    "it is far too loud",
];

const NEGATIVE_CLOSERS: &[&str] = &[
    "Save your money.",
    "I am returning it.",
    "Would not buy again.",
    "Very disappointing.",
];

/// Offline generator: deterministic, template-varied reviews.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubGenerator {
    pub seed: u64,
}

impl StubGenerator {
    pub fn new(seed: u64) -> Self {
        StubGenerator { seed }
    }

    fn rng(&self, key: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(key);
        rng
    }

    /// The review bodies `generate` would emit for `(req, key)`.
    pub fn reviews(&self, req: &GenerationRequest, key: u64) -> Vec<String> {
        self.render(req, key).1
    }

    fn render(&self, req: &GenerationRequest, key: u64) -> (String, Vec<String>) {
        let mut rng = self.rng(key);
        let name = req.product_name.split_whitespace().collect::<Vec<_>>().join(" ");
        let (points, closers) = match req.sentiment {
            Sentiment::Positive => (POSITIVE_POINTS, POSITIVE_CLOSERS),
            Sentiment::Negative => (NEGATIVE_POINTS, NEGATIVE_CLOSERS),
        };
        let style = rng.random_range(0..3u8);
        let mut out = String::new();
        if rng.random_bool(0.3) {
            out.push_str(&format!(
                "Sure! Here are {} {} reviews for {name}:\n\n",
                req.review_number,
                req.sentiment.as_str()
            ));
        }
        let mut bodies = Vec::with_capacity(req.review_number);
        for k in 1..=req.review_number {
            let opener = OPENERS.choose(&mut rng).expect("nonempty").replace("{p}", &name);
            let n_points = rng.random_range(1..=4);
            let picked: Vec<&str> = points.choose_multiple(&mut rng, n_points).copied().collect();
            let closer = closers.choose(&mut rng).expect("nonempty");
            let body = format!("{opener} {}. {closer}", picked.join(", and "));
            let marker = match style {
                0 => format!("Review {k}."),
                1 => format!("**Review {k}.**"),
                _ => format!("{k}."),
            };
            if k > 1 {
                out.push_str("\n\n");
            }
            out.push_str(&marker);
            out.push(' ');
            out.push_str(&body);
            bodies.push(body);
        }
        (out, bodies)
    }

    pub fn generate(&self, req: &GenerationRequest, key: u64) -> String {
        self.render(req, key).0
    }
}

pub enum Generator {
    Stub(StubGenerator),
    Chat(ChatClient),
}

/// Raw completion for one request. `key` distinguishes requests so the
/// stub varies across products.
pub fn generate_reviews(req: &GenerationRequest, generator: &Generator, key: u64) -> Result<String> {
    req.validate()?;
    match generator {
        Generator::Stub(s) => Ok(s.generate(req, key)),
        Generator::Chat(c) => c.complete(&[ChatMessage::new("user", render_generation_prompt(req))]),
    }
}

/// Runs every request, at most `concurrency` at a time; results keep the
/// input order. Request `i` uses key `i`.
pub fn generate_all(
    requests: &[GenerationRequest],
    generator: &Generator,
    concurrency: usize,
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(requests.len());
    let wave = concurrency.max(1);
    for (w, chunk) in requests.chunks(wave).enumerate() {
        let results: Vec<Result<String>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .enumerate()
                .map(|(j, req)| {
                    let key = (w * wave + j) as u64;
                    s.spawn(move || generate_reviews(req, generator, key))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("generation thread panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub expected: usize,
    pub parsed: usize,
    pub shortfall: usize,
    /// No markers were found at all.
    pub failed: bool,
}

static REVIEW_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[ \t]*(?:#+[ \t]*)?(?:\*\*)?(?:review[ \t]*\d+[ \t]*[.:]|\d+\.(?:[ \t]|$))(?:\*\*)?")
        .expect("valid regex")
});

/// Splits a completion on line-leading `Review <n>.` or bare `<n>.`
/// markers. Text before the first marker is dropped; empty bodies are
/// skipped. Never fails: shortfalls are reported.
pub fn parse_reviews(completion: &str, expected: usize) -> (Vec<String>, ParseReport) {
    let marks: Vec<(usize, usize)> = REVIEW_MARKER
        .find_iter(completion)
        .map(|m| (m.start(), m.end()))
        .collect();
    let mut reviews = Vec::new();
    for (k, &(_, body_start)) in marks.iter().enumerate() {
        let body_end = marks.get(k + 1).map_or(completion.len(), |m| m.0);
        let body = completion[body_start..body_end]
            .trim()
            .trim_start_matches("**")
            .trim_end_matches("**")
            .trim();
        if !body.is_empty() {
            reviews.push(body.to_string());
        }
    }
    let report = ParseReport {
        expected,
        parsed: reviews.len(),
        shortfall: expected.saturating_sub(reviews.len()),
        failed: marks.is_empty(),
    };
    (reviews, report)
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
