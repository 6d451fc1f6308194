//! Training losses: categorical cross entropy on the class head, summed
//! logits-form binary cross entropy on the surrogate head, their weighted
//! sum, and the focal loss used by the secondary detector.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::grad::Objective;
use crate::model::HeadOutputs;
use crate::patterns::{Pattern, PatternSet};

/// Floor applied inside every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// A loss value with both components. `total == classification + alpha * reconstruction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub classification: f64,
    pub reconstruction: f64,
    pub alpha: f64,
}

impl LossValue {
    pub fn new(classification: f64, reconstruction: f64, alpha: f64) -> Self {
        Self {
            total: classification + alpha * reconstruction,
            classification,
            reconstruction,
            alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `-ln y[t]` with the gradient w.r.t. the class logits, `y - onehot(t)`.
pub fn cce(probs: &[f64], target: usize) -> Result<LossWithGrad> {
    if target >= probs.len() {
        return usage(format!("target {target} out of range for {} classes", probs.len()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return usage(format!("class probabilities sum to {sum}"));
    }
    let loss = -probs[target].max(PROB_FLOOR).ln();
    let mut grad = probs.to_vec();
    grad[target] -= 1.0;
    Ok(LossWithGrad { loss, grad })
}

/// Summed logits-form BCE between surrogate logits and a binary pattern,
/// `max(z,0) - z p + ln(1 + e^{-|z|})` per pixel; gradient `sigmoid(z) - p`.
pub fn bce_reconstruction(surrogate_logits: &[f64], pattern: &Pattern) -> Result<LossWithGrad> {
    if surrogate_logits.len() != pattern.m() {
        return Err(Error::Shape {
            expected: vec![pattern.m()],
            actual: vec![surrogate_logits.len()],
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(surrogate_logits.len());
    for (&z, &bit) in surrogate_logits.iter().zip(&pattern.bits) {
        let p = f64::from(bit);
        loss += z.max(0.0) - z * p + (-z.abs()).exp().ln_1p();
        grad.push(crate::layers::sigmoid(z) - p);
    }
    Ok(LossWithGrad { loss, grad })
}

/// Combined loss of one sample: CCE on `probs` plus `alpha` times the
/// reconstruction BCE against the ground-truth class pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub value: LossValue,
    pub grad_class_logits: Vec<f64>,
    pub grad_surrogate_logits: Vec<f64>,
}

pub fn combined(
    probs: &[f64],
    surrogate_logits: &[f64],
    target: usize,
    patterns: &PatternSet,
    alpha: f64,
) -> Result<CombinedLoss> {
    let pattern = patterns
        .get(target)
        .ok_or_else(|| Error::Usage(format!("no pattern for class {target}")))?;
    let class = cce(probs, target)?;
    let recon = bce_reconstruction(surrogate_logits, pattern)?;
    Ok(CombinedLoss {
        value: LossValue::new(class.loss, recon.loss, alpha),
        grad_class_logits: class.grad,
        grad_surrogate_logits: recon.grad.into_iter().map(|g| alpha * g).collect(),
    })
}

/// Batch-mean combined loss over model head outputs.
pub struct CuspObjective<'a> {
    pub targets: &'a [usize],
    pub patterns: &'a PatternSet,
    pub alpha: f64,
}

impl CuspObjective<'_> {
    pub fn evaluate(&self, out: &HeadOutputs) -> Result<(LossValue, HeadOutputs)> {
        let batch = out.batch;
        if self.targets.len() != batch {
            return usage(format!("{} targets for a batch of {batch}", self.targets.len()));
        }
        let k = out.class_logits.len() / batch;
        let m = out.surrogate_logits.len() / batch;
        let scale = 1.0 / batch as f64;
        let mut cot = HeadOutputs::zeros(batch, m, k);
        let (mut l1, mut l2) = (0.0, 0.0);
        for (n, &t) in self.targets.iter().enumerate() {
            let probs = softmax(&out.class_logits[n * k..(n + 1) * k]);
            let sample = combined(
                &probs,
                &out.surrogate_logits[n * m..(n + 1) * m],
                t,
                self.patterns,
                self.alpha,
            )?;
            l1 += sample.value.classification;
            l2 += sample.value.reconstruction;
            for (c, g) in cot.class_logits[n * k..(n + 1) * k]
                .iter_mut()
                .zip(&sample.grad_class_logits)
            {
                *c = g * scale;
            }
            for (c, g) in cot.surrogate_logits[n * m..(n + 1) * m]
                .iter_mut()
                .zip(&sample.grad_surrogate_logits)
            {
                *c = g * scale;
            }
        }
        Ok((LossValue::new(l1 * scale, l2 * scale, self.alpha), cot))
    }
}

impl Objective<HeadOutputs> for CuspObjective<'_> {
    fn value_and_cotangent(&self, output: &HeadOutputs) -> Result<(f64, HeadOutputs)> {
        let (value, cot) = self.evaluate(output)?;
        Ok((value.total, cot))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalValue {
    pub loss: f64,
    /// d loss / d prob
    pub grad_prob: f64,
    /// d loss / d logit, for `prob = sigmoid(logit)`
    pub grad_logit: f64,
}

/// `-(1 - p_t)^gamma ln p_t` with `p_t = prob` for label 1, `1 - prob` for label 0.
pub fn focal_bce(prob: f64, label: bool, gamma: f64) -> FocalValue {
    let raw_pt = if label { prob } else { 1.0 - prob };
    let pt = raw_pt.max(PROB_FLOOR);
    let q = 1.0 - pt;
    let loss = -q.powf(gamma) * pt.ln();
    // d/dp_t of the loss; zero below the clamp
    let d_pt = if raw_pt < PROB_FLOOR {
        0.0
    } else {
        let growth = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * pt.ln() };
        growth - q.powf(gamma) / pt
    };
    let grad_prob = if label { d_pt } else { -d_pt };
    FocalValue {
        loss,
        grad_prob,
        grad_logit: grad_prob * prob * (1.0 - prob),
    }
}
