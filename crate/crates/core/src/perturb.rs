//! Input and label perturbations: fast gradient sign attack, Gaussian
//! noise, random erasing, rotation, and class-pair label flips.
//!
//! Images are row-major `side x side` slices with values in `[lo, hi]`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, usage, Result};
use crate::model::SurrogateModel;
use crate::objective::CuspObjective;
use crate::patterns::PatternSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub lo: f64,
    pub hi: f64,
}

impl AttackConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            lo: 0.0,
            hi: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return config(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.lo < self.hi) {
            return config(format!("empty clamp range [{}, {}]", self.lo, self.hi));
        }
        Ok(())
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fast gradient sign attack on a batch of images against the model's own
/// training loss (`alpha` = the alpha it was trained with; 0 gives plain CCE).
///
/// The batch-mean loss gradient is a positive multiple of each sample's own
/// gradient, so batching does not change any sign.
pub fn fgm_attack_batch(
    model: &SurrogateModel,
    patterns: &PatternSet,
    alpha: f64,
    images: &[f64],
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let batch = labels.len();
    if cfg.epsilon == 0.0 {
        return Ok(images.to_vec());
    }
    let (out, cache) = model.forward(images, batch)?;
    let objective = CuspObjective {
        targets: labels,
        patterns,
        alpha,
    };
    let (_, cotangent) = objective.evaluate(&out)?;
    let grads = model.backward(&cache, &cotangent)?;
    Ok(images
        .iter()
        .zip(grads.input.data())
        .map(|(&x, &g)| (x + cfg.epsilon * sign(g)).clamp(cfg.lo, cfg.hi))
        .collect())
}

pub fn fgm_attack(
    model: &SurrogateModel,
    patterns: &PatternSet,
    alpha: f64,
    image: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    if label >= model.k {
        return usage(format!("label {label} outside {} classes", model.k));
    }
    fgm_attack_batch(model, patterns, alpha, image, &[label], cfg)
}

/// `clamp(x + N(0, sigma^2))` per pixel.
pub fn add_noise(image: &[f64], sigma: f64, seed: u64, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return config(format!("sigma must be >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(image.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    Ok(image
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(lo, hi))
        .collect())
}

/// Sets `count` square patches of side `round(patch_fraction * side)` to `lo`.
pub fn random_erase(
    image: &[f64],
    side: usize,
    patch_fraction: f64,
    count: usize,
    seed: u64,
    lo: f64,
) -> Result<Vec<f64>> {
    if !(patch_fraction > 0.0 && patch_fraction < 1.0) {
        return config(format!("patch fraction {patch_fraction} outside (0,1)"));
    }
    let patch = (patch_fraction * side as f64).round() as usize;
    if patch > side {
        return config(format!("patch of side {patch} exceeds the {side}-pixel image"));
    }
    let mut out = image.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let top = rng.gen_range(0..=side - patch);
        let left = rng.gen_range(0..=side - patch);
        for r in top..top + patch {
            out[r * side + left..r * side + left + patch].fill(lo);
        }
    }
    Ok(out)
}

/// Counter-clockwise rotation about ((side-1)/2, (side-1)/2) with bilinear
/// interpolation; samples outside the frame read as `lo`.
pub fn rotate(image: &[f64], side: usize, degrees: f64, lo: f64) -> Result<Vec<f64>> {
    if !(0.0..=360.0).contains(&degrees) {
        return config(format!("rotation {degrees} outside [0, 360]"));
    }
    if degrees == 0.0 {
        return Ok(image.to_vec());
    }
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    let pixel = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
            lo
        } else {
            image[r as usize * side + c as usize]
        }
    };
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let (dx, dy) = (c as f64 - center, r as f64 - center);
            // inverse map: rotate the output coordinate back by -theta
            let sx = cos * dx - sin * dy + center;
            let sy = sin * dx + cos * dy + center;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = pixel(y0, x0) * (1.0 - fx) * (1.0 - fy)
                + pixel(y0, x0 + 1) * fx * (1.0 - fy)
                + pixel(y0 + 1, x0) * (1.0 - fx) * fy
                + pixel(y0 + 1, x0 + 1) * fx * fy;
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipSpec {
    /// `(from, to)` class pairs.
    pub pairs: Vec<(usize, usize)>,
    pub rate: f64,
    pub seed: u64,
}

impl FlipSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return config(format!("flip rate {} outside [0,1]", self.rate));
        }
        for &(from, to) in &self.pairs {
            if from == to {
                return config(format!("flip pair {from}->{to} maps a class to itself"));
            }
            if from >= k || to >= k {
                return config(format!("flip pair {from}->{to} outside {k} classes"));
            }
        }
        Ok(())
    }
}

/// Relabels exactly `round(rate * count(from))` samples per pair, chosen by
/// seed, and returns the new labels with the mask of flipped samples.
pub fn flip_labels(labels: &[usize], k: usize, spec: &FlipSpec) -> Result<(Vec<usize>, Vec<bool>)> {
    spec.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = labels.to_vec();
    let mut mask = vec![false; labels.len()];
    for &(from, to) in &spec.pairs {
        let mut eligible: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == from && !mask[i])
            .collect();
        let n = (spec.rate * eligible.len() as f64).round() as usize;
        eligible.shuffle(&mut rng);
        for &i in &eligible[..n] {
            out[i] = to;
            mask[i] = true;
        }
    }
    Ok((out, mask))
}
