//! Threshold-free and thresholded metrics for binary scores.

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub pr_auc: f64,
    pub macro_f1: f64,
    /// Fraction in [0, 1]; reports multiply by 100.
    pub ks: f64,
    pub threshold: f64,
}

impl EvalMetrics {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self, ModelError> {
        Ok(Self {
            pr_auc: pr_auc(scores, labels)?,
            macro_f1: macro_f1(scores, labels, threshold)?,
            ks: ks_statistic(scores, labels)?,
            threshold,
        })
    }
}

fn check(scores: &[f64], labels: &[u8]) -> Result<usize, ModelError> {
    if scores.len() != labels.len() {
        return Err(ModelError::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ModelError::InvalidInput("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(ModelError::SingleClass);
    }
    Ok(pos)
}

/// Indices sorted by descending score; ties keep index order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Average precision: `sum_k (R_k - R_{k-1}) * P_k` over the distinct
/// score thresholds in descending order. Tied scores enter together.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    let n_pos = check(scores, labels)? as f64;
    let order = descending(scores);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / n_pos;
        if recall > prev_recall {
            ap += (recall - prev_recall) * tp / (tp + fp);
            prev_recall = recall;
        }
    }
    Ok(ap)
}

fn f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    if tp == 0.0 {
        // covers 0/0 precision or recall as well as tp = 0 with errors
        return 0.0;
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    2.0 * precision * recall / (precision + recall)
}

/// Unweighted mean of the per-class F1 scores at `threshold` (score >= t
/// predicts class 1).
pub fn macro_f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64, ModelError> {
    check(scores, labels)?;
    let mut counts = [[0.0f64; 2]; 2]; // [label][pred]
    for (&s, &y) in scores.iter().zip(labels) {
        counts[y as usize][(s >= threshold) as usize] += 1.0;
    }
    let f1_pos = f1(counts[1][1], counts[0][1], counts[1][0]);
    let f1_neg = f1(counts[0][0], counts[1][0], counts[0][1]);
    Ok((f1_pos + f1_neg) / 2.0)
}

/// Kolmogorov-Smirnov distance between the score CDFs of the two classes,
/// evaluated at every distinct score.
pub fn ks_statistic(scores: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    let n_pos = check(scores, labels)? as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut cdf_pos, mut cdf_neg) = (0.0, 0.0);
    let mut best: f64 = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                cdf_pos += 1.0 / n_pos;
            } else {
                cdf_neg += 1.0 / n_neg;
            }
            i += 1;
        }
        best = best.max((cdf_pos - cdf_neg).abs());
    }
    Ok(best.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConfusionCell {
    TP,
    TN,
    FP,
    FN,
}

impl ConfusionCell {
    pub const ALL: [ConfusionCell; 4] = [
        ConfusionCell::TP,
        ConfusionCell::TN,
        ConfusionCell::FP,
        ConfusionCell::FN,
    ];

    pub fn of(label: u8, score: f64, threshold: f64) -> Self {
        match (label == 1, score >= threshold) {
            (true, true) => ConfusionCell::TP,
            (false, false) => ConfusionCell::TN,
            (false, true) => ConfusionCell::FP,
            (true, false) => ConfusionCell::FN,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConfusionCell::TP => "TP",
            ConfusionCell::TN => "TN",
            ConfusionCell::FP => "FP",
            ConfusionCell::FN => "FN",
        }
    }
}

impl std::fmt::Display for ConfusionCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn confusion_cells(scores: &[f64], labels: &[u8], threshold: f64) -> Vec<ConfusionCell> {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| ConfusionCell::of(y, s, threshold))
        .collect()
}
