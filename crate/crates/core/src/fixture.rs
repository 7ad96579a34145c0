//! Small labeled corpora that are separable by construction, used for
//! smoke tests and the bundled demo dataset.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::records::{Label, ReviewRecord};

const NORMAL_WORDS: &[&str] = &[
    "battery", "lasted", "about", "week", "cable", "feels", "cheap", "returned", "box", "arrived",
    "dented", "works", "okay", "manual", "confusing", "setup", "took", "hour", "color", "faded",
    "after", "washing", "size", "runs", "small", "customer", "service", "slow", "replacement",
    "stopped", "charging", "button", "sticky", "decent", "price", "average", "noisy", "fan",
    "screen", "scratched",
];

const SPAM_WORDS: &[&str] = &[
    "amazing", "best", "ever", "absolutely", "love", "perfect", "highly", "recommend", "incredible",
    "flawless", "outstanding", "must", "buy", "five", "stars", "life", "changing", "superb",
    "fantastic", "wonderful", "exceeded", "expectations", "brilliant", "unbelievable", "awesome",
    "stunning", "premium", "quality", "delighted", "thrilled",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub normal_users: usize,
    pub reviews_per_normal_user: usize,
    pub normal_products: usize,
    pub spam_users: usize,
    pub reviews_per_spam_user: usize,
    pub spam_products: usize,
    pub words_per_review: usize,
}

impl Default for FixtureSpec {
    /// 90 x 2 normal + 24 x 5 spam = 300 reviews, 40% spam.
    fn default() -> Self {
        FixtureSpec {
            normal_users: 90,
            reviews_per_normal_user: 2,
            normal_products: 30,
            spam_users: 24,
            reviews_per_spam_user: 5,
            spam_products: 6,
            words_per_review: 14,
        }
    }
}

impl FixtureSpec {
    pub fn n_reviews(&self) -> usize {
        self.normal_users * self.reviews_per_normal_user + self.spam_users * self.reviews_per_spam_user
    }
}

const START: i64 = 1_546_300_800; // 2019-01-01T00:00:00Z
const DAY: i64 = 86_400;

fn sentence(rng: &mut ChaCha8Rng, vocab: &[&str], len: usize) -> String {
    (0..len)
        .map(|_| *vocab.choose(rng).expect("nonempty vocab"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normal reviews use a complaint-style vocabulary, ratings 1-4 and spread
/// timestamps; spam reviews use a disjoint promotional vocabulary, rating 5
/// and bursts of a few days on a handful of products. Records are shuffled
/// so labels do not correlate with position.
pub fn separable_corpus(spec: &FixtureSpec, seed: u64) -> Vec<ReviewRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.n_reviews());
    for u in 0..spec.normal_users {
        for _ in 0..spec.reviews_per_normal_user {
            out.push(ReviewRecord {
                review_id: 0,
                user_id: format!("n{u}"),
                product_id: format!("p{}", rng.random_range(0..spec.normal_products)),
                rating: rng.random_range(1..=4),
                timestamp: START + rng.random_range(0..730 * DAY),
                text: sentence(&mut rng, NORMAL_WORDS, spec.words_per_review),
                label: Label::Normal,
            });
        }
    }
    let bursts: Vec<i64> = (0..spec.spam_products)
        .map(|_| START + rng.random_range(0..700 * DAY))
        .collect();
    for u in 0..spec.spam_users {
        for r in 0..spec.reviews_per_spam_user {
            let target = (u + r) % spec.spam_products;
            out.push(ReviewRecord {
                review_id: 0,
                user_id: format!("s{u}"),
                product_id: format!("t{target}"),
                rating: 5,
                timestamp: bursts[target] + rng.random_range(0..5 * DAY),
                text: sentence(&mut rng, SPAM_WORDS, spec.words_per_review),
                label: Label::Spam,
            });
        }
    }
    rand::seq::SliceRandom::shuffle(out.as_mut_slice(), &mut rng);
    for (i, r) in out.iter_mut().enumerate() {
        r.review_id = i;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fixture_shape() {
        let recs = separable_corpus(&FixtureSpec::default(), 7);
        assert_eq!(recs.len(), 300);
        assert_eq!(recs.iter().filter(|r| r.label == Label::Spam).count(), 120);
        assert!(recs.iter().enumerate().all(|(i, r)| r.review_id == i));
        assert_eq!(recs, separable_corpus(&FixtureSpec::default(), 7));
    }
}
