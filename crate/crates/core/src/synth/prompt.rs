//! Generation and judge prompts, and parsing of judge replies.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    #[default]
    Positive,
    Negative,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub product_name: String,
    pub product_category: String,
    pub product_description: String,
    pub reference_reviews: Vec<String>,
    pub review_number: usize,
    pub sentiment: Sentiment,
    pub max_words: usize,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.review_number == 0 {
            return Err(Error::InvalidArgument("review_number must be at least 1".into()));
        }
        if self.max_words < 10 {
            return Err(Error::InvalidArgument(format!(
                "max_words must be at least 10, got {}",
                self.max_words
            )));
        }
        Ok(())
    }
}

/// Fills the generation template. Description and references each sit on
/// their own line; multiple references are separated by a blank line.
pub fn render_generation_prompt(req: &GenerationRequest) -> String {
    format!(
        "I need your help to write reviews for a product {name} on Amazon in the category of {category}. \
The official description of the product given by the store is as follows:\n\
{description}\n\
Besides, I will give you a set of review of this product for reference:\n\
{references}\n\
Now, please output {n} {sentiment} reviews. Each review contains no more than {max} words. \
Please write diversified reviews as if they were written by different customers, for example, with different lengths and styles. \
Start with another paragraph for each review and begin with Review 1. 2. 3., etc.",
        name = req.product_name,
        category = req.product_category,
        description = req.product_description,
        references = req.reference_reviews.join("\n\n"),
        n = req.review_number,
        sentiment = req.sentiment.as_str(),
        max = req.max_words,
    )
}

pub const JUDGE_SYSTEM: &str = "You are a helpful assistant and know a lot about e-commerce on Amazon, especially about how the reviews influence potential customers.";

pub const JUDGE_QUESTIONS: [&str; 5] = [
    "Will the user feel the review is positive?",
    "Will the user feel the review contains useful details?",
    "Will the user feel the review is convincing?",
    "Will the user feel the review is written by a normal user?",
    "Will the user be more willing to buy the product after reading the review?",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub system: String,
    pub user: String,
}

pub fn render_judge_prompt(product_name: &str, category: &str, review: &str) -> JudgePrompt {
    let mut user = format!(
        "Please first read a review about the product titled {product_name} in the category of {category}:\n\
{review}\n\
Now, please evaluate the influence of the given review on a potential customer on Amazon in the following five aspects:\n"
    );
    for q in JUDGE_QUESTIONS {
        user.push_str("- ");
        user.push_str(q);
        user.push('\n');
    }
    user.push_str(
        "For each question, please first answer with a rating ranging from 1 (totally no) to 5 (totally yes) and then give a brief reason for the rating.",
    );
    JudgePrompt {
        system: JUDGE_SYSTEM.to_string(),
        user,
    }
}

static NUMBERED_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[ \t]*(?:#+[ \t]*)?(?:\*\*)?(?:(?:question|q)[ \t]*\d+[ \t]*[:.)]|\d+[ \t]*[.):])")
        .expect("valid regex")
});

static BULLET_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*[-*•][ \t]+").expect("valid regex"));

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"));

/// Scores for the five judge questions.
///
/// The reply is split into blocks at line-leading numbered markers (`1.`,
/// `2)`, `Question 3:` ...), or at bullets when nothing is numbered. Each of the first five blocks yields the
/// first standalone integer in 0..=5 after its marker (decimals and
/// larger numbers are skipped), or `None`.
pub fn parse_judge_scores(reply: &str) -> [Option<u8>; 5] {
    let mut starts: Vec<(usize, usize)> = NUMBERED_MARKER
        .find_iter(reply)
        .map(|m| (m.start(), m.end()))
        .collect();
    if starts.is_empty() {
        starts = BULLET_MARKER
            .find_iter(reply)
            .map(|m| (m.start(), m.end()))
            .collect();
    }
    let mut out = [None; 5];
    for (slot, (k, &(_, body_start))) in out.iter_mut().zip(starts.iter().enumerate()) {
        let body_end = starts.get(k + 1).map_or(reply.len(), |s| s.0);
        let body = &reply[body_start..body_end];
        *slot = NUMBER
            .find_iter(body)
            .map(|m| m.as_str())
            .filter(|s| s.len() == 1)
            .filter_map(|s| s.parse::<u8>().ok())
            .find(|v| *v <= 5);
    }
    out
}
