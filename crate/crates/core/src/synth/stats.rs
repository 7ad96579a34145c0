//! Length and diversity statistics of generated review texts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

fn ngram_counts<'t>(tokens: &'t [&str], n: usize) -> HashMap<&'t [&'t str], usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// Sentence BLEU-4 of `candidate` against one `reference`, uniform
/// weights, whitespace tokens. Without smoothing any zero n-gram precision
/// gives 0; with `add_one` every precision becomes `(m + 1) / (t + 1)`.
pub fn bleu4(candidate: &str, reference: &str, add_one: bool) -> f64 {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if c.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(&c, n);
        let refs = ngram_counts(&r, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &k)| k.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if add_one {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        } else if matched == 0 {
            return 0.0;
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let bp = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * (log_sum / 4.0).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_texts: usize,
    pub max_words: usize,
    pub mean_words: f64,
    pub std_words: f64,
    /// Mean over groups of each group's mean pairwise BLEU; `None` when no
    /// group holds two or more texts.
    pub mean_pairwise_bleu: Option<f64>,
    pub std_pairwise_bleu: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean BLEU over ordered pairs `(i, j)`, `i != j`, of one group.
pub fn pairwise_bleu<S: AsRef<str>>(group: &[S], add_one: bool) -> Option<f64> {
    let k = group.len();
    if k < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                total += bleu4(group[i].as_ref(), group[j].as_ref(), add_one);
            }
        }
    }
    Some(total / (k * (k - 1)) as f64)
}

/// Word-count statistics over all texts (population std) and pairwise
/// BLEU within each product group.
pub fn corpus_stats<S: AsRef<str>>(groups: &[Vec<S>], add_one: bool) -> CorpusStats {
    let words: Vec<f64> = groups
        .iter()
        .flatten()
        .map(|t| t.as_ref().split_whitespace().count() as f64)
        .collect();
    let (mean_words, std_words) = if words.is_empty() {
        (0.0, 0.0)
    } else {
        mean_std(&words)
    };
    let group_bleu: Vec<f64> = groups.iter().filter_map(|g| pairwise_bleu(g, add_one)).collect();
    let (mb, sb) = if group_bleu.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&group_bleu);
        (Some(m), Some(s))
    };
    CorpusStats {
        n_texts: words.len(),
        max_words: words.iter().fold(0.0f64, |a, &b| a.max(b)) as usize,
        mean_words,
        std_words,
        mean_pairwise_bleu: mb,
        std_pairwise_bleu: sb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_group_scores_one() {
        let g = vec![vec!["a b c d e"; 3]];
        assert_eq!(corpus_stats(&g, false).mean_pairwise_bleu, Some(1.0));
    }

    #[test]
    fn disjoint_scores_zero() {
        assert_eq!(bleu4("a b c d", "e f g h", false), 0.0);
        assert!(bleu4("a b c d", "e f g h", true) > 0.0);
    }

    #[test]
    fn short_candidate_without_smoothing() {
        assert_eq!(bleu4("the cat", "the cat", false), 0.0);
    }
}
