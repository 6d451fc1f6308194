//! Accuracy, rank-statistic AUC and fixed-grid ROC curves.
//!
//! Scores are oriented "higher = positive", where the positive class is the
//! condition being detected (a wrong prediction, or an out-of-domain input).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// Number of thresholds on the ROC grid, `k / (ROC_POINTS - 1)` for `k = 0..ROC_POINTS`.
pub const ROC_POINTS: usize = 100;

pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return usage("accuracy of an empty prediction set");
    }
    if predictions.len() != truths.len() {
        return usage(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        ));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return usage(format!("{} scores vs {} labels", scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return usage("AUC needs both positive and negative samples");
    }
    Ok((pos, neg))
}

/// Concordant and tied positive/negative pair counts.
pub fn pair_counts(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut concordant, mut tied, mut neg_below) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        concordant += pos_here * neg_below;
        tied += pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    Ok((concordant, tied))
}

/// Mann-Whitney AUC: `(concordant + tied / 2) / (positives * negatives)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let (concordant, tied) = pair_counts(scores, labels)?;
    Ok((concordant as f64 + 0.5 * tied as f64) / (pos as f64 * neg as f64))
}

/// Min-max rescaling to [0,1]; a constant vector maps to all zeros.
pub fn normalize_min_max(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|&s| (s - lo) / (hi - lo)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve, closed with (0,0) and (1,1).
    pub fn trapezoid_area(&self) -> f64 {
        let mut pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        pts.push((0.0, 0.0));
        pts.push((1.0, 1.0));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts.windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,tpr,fpr\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.tpr, p.fpr);
        }
        out
    }
}

/// ROC on the fixed grid `t_k = k/99`; a sample is called positive when its
/// (already normalized) score is `>= t_k`.
pub fn roc_100(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let points = (0..ROC_POINTS)
        .map(|k| {
            let threshold = k as f64 / (ROC_POINTS - 1) as f64;
            let (mut tp, mut fp) = (0u64, 0u64);
            for (&s, &l) in scores.iter().zip(labels) {
                if s >= threshold {
                    if l {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint {
                threshold,
                tpr: tp as f64 / pos as f64,
                fpr: fp as f64 / neg as f64,
            }
        })
        .collect();
    Ok(RocCurve { points })
}
