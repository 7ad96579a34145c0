//! Ranking metrics: AUC and precision/recall over the top-scoring fraction.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{floor_fraction, SplitAssignment, SplitTag};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {i} is NaN")));
    }
    Ok(())
}

/// Node indices ordered by descending score, ties by ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Area under the ROC curve via the Mann–Whitney statistic, with average
/// ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum_pos = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum_pos += avg * pos_in_group as f64;
        start = end;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// `round(ratio * n)` with halves rounded up, computed on the decimal value
/// of `ratio`.
pub fn top_k_size(ratio: f64, n: usize) -> usize {
    floor_fraction(ratio, 2 * n).div_ceil(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioMetrics {
    pub precision: f64,
    pub recall: f64,
    pub k: usize,
    pub true_positives: usize,
}

/// Flags the top `round(ratio * n)` nodes as spam.
pub fn precision_recall_at_ratio(scores: &[f64], labels: &[bool], ratio: f64) -> Result<RatioMetrics> {
    check_inputs(scores, labels)?;
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("ratio {ratio} not in (0, 1]")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::InvalidArgument("no positive labels".into()));
    }
    let k = top_k_size(ratio, scores.len());
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} of {} nodes rounds to k = 0",
            scores.len()
        )));
    }
    let tp = rank_order(scores)[..k].iter().filter(|&&i| labels[i]).count();
    Ok(RatioMetrics {
        precision: tp as f64 / k as f64,
        recall: tp as f64 / positives as f64,
        k,
        true_positives: tp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve with one point per distinct score, starting at (0, 0).
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("ROC needs both classes".into()));
    }
    let order = rank_order(scores);
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(out)
}

pub fn write_roc_csv<W: std::io::Write>(w: W, points: &[RocPoint]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["threshold", "fpr", "tpr"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for p in points {
        csv.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    csv.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Nodes scored by `evaluate`: the test split, optionally plus validation.
pub fn evaluation_nodes(split: &SplitAssignment, include_valid: bool) -> Vec<usize> {
    split
        .tags
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == SplitTag::Test || (include_valid && **t == SplitTag::Valid))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub ratio: f64,
    pub k: usize,
}

/// Metrics restricted to `nodes`.
pub fn evaluate_subset(scores: &[f64], labels: &[bool], nodes: &[usize], ratio: f64) -> Result<EvalReport> {
    check_inputs(scores, labels)?;
    if let Some(&bad) = nodes.iter().find(|&&i| i >= scores.len()) {
        return Err(Error::InvalidArgument(format!("node {bad} out of range")));
    }
    let s: Vec<f64> = nodes.iter().map(|&i| scores[i]).collect();
    let l: Vec<bool> = nodes.iter().map(|&i| labels[i]).collect();
    let auc = auc(&s, &l)?;
    let at = precision_recall_at_ratio(&s, &l, ratio)?;
    Ok(EvalReport {
        auc,
        precision: at.precision,
        recall: at.recall,
        ratio,
        k: at.k,
    })
}

/// Per-node scores as CSV with header `node,score`, one row per node in
/// index order.
pub fn write_scores<W: std::io::Write>(w: W, scores: &[f64]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["node", "score"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for (i, s) in scores.iter().enumerate() {
        csv.write_record([i.to_string(), s.to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    csv.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Reads a file written by `write_scores`. Nodes must run 0, 1, 2, ...
pub fn read_scores<R: std::io::Read>(r: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (row, rec) in csv::Reader::from_reader(r).records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("scores row {row}: {e}")))?;
        let bad = |field: &str, reason: String| Error::MalformedRow {
            row,
            field: field.into(),
            reason,
        };
        let node: usize = rec
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| bad("node", format!("{e}")))?;
        if node != row {
            return Err(bad("node", format!("expected node {row}, found {node}")));
        }
        let score: f64 = rec
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| bad("score", format!("{e}")))?;
        out.push(score);
    }
    Ok(out)
}

pub fn save_scores(path: &std::path::Path, scores: &[f64]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scores(std::io::BufWriter::new(f), scores)
}

pub fn load_scores(path: &std::path::Path) -> Result<Vec<f64>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(std::io::BufReader::new(f))
}
