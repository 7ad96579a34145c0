//! Synthetic LLM-spam datasets: choose low-rated target products, generate
//! promotional reviews, post them from weighted-sampled existing accounts
//! and measure the resulting texts.

pub mod generate;
pub mod plan;
pub mod prompt;
pub mod stats;

pub use generate::{
    generate_all, generate_reviews, parse_reviews, word_count, ChatClient, ChatMessage, Generator,
    ParseReport, StubGenerator, CHAT_KEY_VAR,
};
pub use plan::{
    assign_compromised_users, build_plan, first_review, inject_spam, load_catalog,
    select_target_products, PlanConfig, PlannedProduct, ProductCatalog, ProductInfo,
    SynthesisPlan, INJECTION_WINDOW_SECS,
};
pub use prompt::{
    parse_judge_scores, render_generation_prompt, render_judge_prompt, GenerationRequest,
    JudgePrompt, Sentiment,
};
pub use stats::{bleu4, corpus_stats, pairwise_bleu, CorpusStats};
