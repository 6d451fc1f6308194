//! Secondary detector: a small CNN over the predicted surrogate image and the
//! predicted class's pattern, with the MSE score joined at the output layer.
//! It predicts whether the primary model's prediction is correct.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cusp_score, Delta, Method, ScoringInput, UncertaintyScorer};
use crate::error::{config, usage, Error, Result};
use crate::grad::{Differentiable, GradBundle};
use crate::layers::{sigmoid, Layer, LayerCache, LayerSpec, Sequential, SequentialCache};
use crate::objective::{focal_bce, PROB_FLOOR};
use crate::tensor::Tensor;
use crate::train::{OptimizerKind, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub filters: [usize; 2],
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Standardize the MSE input with the training records' mean and deviation.
    pub standardize_mse: bool,
    /// Start from a logistic fit on the MSE alone, with zero weight on the
    /// convolutional features.
    pub warm_start: bool,
    /// Decoupled weight decay on every weight tensor.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            filters: [8, 16],
            gamma: 2.0,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            standardize_mse: true,
            warm_start: true,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// One training or scoring example for the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRecord {
    pub surrogate: Vec<f64>,
    pub pattern: Vec<f64>,
    pub mse: f64,
    /// Whether the primary model predicted the true class.
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub side: usize,
    pub trunk: Sequential,
    pub output: Layer,
    pub mse_mean: f64,
    pub mse_scale: f64,
}

pub struct DetectorCache {
    batch: usize,
    trunk: SequentialCache,
    output: LayerCache,
    probs: Vec<f64>,
}

/// Flat detector input: surrogate channel, pattern channel, then the MSE.
pub fn detector_features(surrogate: &[f64], pattern: &[f64], mse: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(surrogate.len() + pattern.len() + 1);
    out.extend_from_slice(surrogate);
    out.extend_from_slice(pattern);
    out.push(mse);
    out
}

impl DetectorModel {
    pub fn new(side: usize, filters: [usize; 2], seed: u64) -> Result<Self> {
        if side < 4 {
            return config(format!("detector needs a pattern side of at least 4, got {side}"));
        }
        if filters.contains(&0) {
            return config("detector filter counts must be positive");
        }
        let specs = [
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: filters[0],
            },
            LayerSpec::Relu,
            LayerSpec::Maxpool2d,
            LayerSpec::Conv2d {
                in_channels: filters[0],
                out_channels: filters[1],
            },
            LayerSpec::Relu,
            LayerSpec::Maxpool2d,
            LayerSpec::Flatten,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = Sequential::init(&[2, side, side], &specs, &mut rng)?;
        let features = trunk.output_len() + 1;
        let output = Layer::init(
            LayerSpec::Dense {
                inputs: features,
                outputs: 1,
            },
            &[features],
            &mut rng,
        )?;
        Ok(Self {
            side,
            trunk,
            output,
            mse_mean: 0.0,
            mse_scale: 1.0,
        })
    }

    pub fn input_len(&self) -> usize {
        2 * self.side * self.side + 1
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.trunk
            .layers
            .iter()
            .chain([&self.output])
            .flat_map(|l| l.params.iter())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.trunk
            .layers
            .iter_mut()
            .chain([&mut self.output])
            .flat_map(|l| l.params.iter_mut())
            .collect()
    }

    /// Batched forward pass; returns the sigmoid outputs ("prediction is correct").
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, DetectorCache)> {
        let n = self.input_len();
        if inputs.len() != batch * n {
            return Err(Error::Shape {
                expected: vec![batch, n],
                actual: vec![inputs.len()],
            });
        }
        let image = 2 * self.side * self.side;
        let mut images = Vec::with_capacity(batch * image);
        let mut scalars = Vec::with_capacity(batch);
        for row in inputs.chunks(n) {
            images.extend_from_slice(&row[..image]);
            scalars.push((row[image] - self.mse_mean) / self.mse_scale);
        }
        let (features, trunk) = self.trunk.forward(&images, batch);
        let f = self.trunk.output_len();
        let mut joined = Vec::with_capacity(batch * (f + 1));
        for (row, s) in features.chunks(f).zip(&scalars) {
            joined.extend_from_slice(row);
            joined.push(*s);
        }
        let (logits, output) = self.output.forward(&joined, batch);
        let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok((
            probs.clone(),
            DetectorCache {
                batch,
                trunk,
                output,
                probs,
            },
        ))
    }

    /// Gradients of `<probs, cotangent>`.
    pub fn backward(&self, cache: &DetectorCache, cotangent: &[f64]) -> Result<GradBundle> {
        let batch = cache.batch;
        if cotangent.len() != batch {
            return usage(format!("{} cotangents for a batch of {batch}", cotangent.len()));
        }
        let d_logits: Vec<f64> = cotangent
            .iter()
            .zip(&cache.probs)
            .map(|(&c, &p)| c * p * (1.0 - p))
            .collect();
        self.backward_logits(cache, &d_logits)
    }

    fn backward_logits(&self, cache: &DetectorCache, d_logits: &[f64]) -> Result<GradBundle> {
        let batch = cache.batch;
        let (out_grads, d_joined) = self.output.backward(&cache.output, d_logits, batch);
        let f = self.trunk.output_len();
        let mut d_features = Vec::with_capacity(batch * f);
        let mut d_scalars = Vec::with_capacity(batch);
        for row in d_joined.chunks(f + 1) {
            d_features.extend_from_slice(&row[..f]);
            d_scalars.push(row[f] / self.mse_scale);
        }
        let (mut layers, d_images) = self.trunk.backward(&cache.trunk, &d_features)?;
        layers.push(out_grads);
        let image = 2 * self.side * self.side;
        let mut d_input = Vec::with_capacity(batch * self.input_len());
        for (row, s) in d_images.chunks(image).zip(d_scalars) {
            d_input.extend_from_slice(row);
            d_input.push(s);
        }
        Ok(GradBundle {
            layers,
            input: Tensor::from_parts(vec![batch, self.input_len()], d_input),
        })
    }

    /// Probability that the primary prediction is correct, per record.
    pub fn predict(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(batch);
        for part in inputs.chunks(256 * self.input_len()) {
            out.extend(self.forward(part, part.len() / self.input_len())?.0);
        }
        Ok(out)
    }
}

impl Differentiable for DetectorModel {
    type Output = Vec<f64>;

    fn param_tensors(&self) -> Vec<&Tensor> {
        self.params()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_mut()
    }

    fn evaluate(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(input.data(), input.len() / self.input_len())?.0)
    }

    fn gradient(&self, input: &Tensor, cotangent: &Vec<f64>) -> Result<GradBundle> {
        let (_, cache) = self.forward(input.data(), input.len() / self.input_len())?;
        let mut grads = self.backward(&cache, cotangent)?;
        grads.input = grads.input.reshape(input.shape().to_vec())?;
        Ok(grads)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub config: DetectorConfig,
    pub records: usize,
    pub correct_records: usize,
    /// Mean focal loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn validate_records(records: &[DetectorRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::Usage("no detector training records".into()))?;
    let m = first.surrogate.len();
    let side = (m as f64).sqrt().round() as usize;
    if side * side != m {
        return usage(format!("surrogate of {m} pixels is not square"));
    }
    for r in records {
        if r.surrogate.len() != m || r.pattern.len() != m || !r.mse.is_finite() {
            return usage("detector records disagree in shape or carry a non-finite score");
        }
    }
    Ok(side)
}

const WARM_START_STEPS: usize = 500;

/// Zeroes the feature weights of the output layer and fits its MSE weight and
/// bias by full-batch gradient descent on the focal loss.
fn warm_start(model: &mut DetectorModel, records: &[DetectorRecord], cfg: &DetectorConfig) {
    let f = model.trunk.output_len();
    let scaled: Vec<f64> = records
        .iter()
        .map(|r| (r.mse - model.mse_mean) / model.mse_scale)
        .collect();
    let (mut w, mut b) = (0.0, 0.0);
    let step = 0.5;
    for _ in 0..WARM_START_STEPS {
        let (mut gw, mut gb) = (0.0, 0.0);
        for (x, r) in scaled.iter().zip(records) {
            let g = focal_bce(sigmoid(w * x + b), r.correct, cfg.gamma).grad_logit;
            gw += g * x;
            gb += g;
        }
        let n = records.len() as f64;
        w -= step * gw / n;
        b -= step * gb / n;
    }
    let weights = model.output.params[0].data_mut();
    weights[..f].fill(0.0);
    weights[f] = w;
    model.output.params[1].data_mut()[0] = b;
}

/// Trains a detector with focal loss on records labeled by correctness.
pub fn train_detector(records: &[DetectorRecord], cfg: &DetectorConfig) -> Result<(DetectorModel, DetectorReport)> {
    let side = validate_records(records)?;
    let correct = records.iter().filter(|r| r.correct).count();
    if correct == 0 || correct == records.len() {
        return config("degenerate labels: detector records must contain both correct and incorrect predictions");
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(cfg.gamma >= 0.0) {
        return config("detector batch size, learning rate and gamma must be positive");
    }
    let mut model = DetectorModel::new(side, cfg.filters, cfg.seed)?;
    if cfg.standardize_mse {
        let n = records.len() as f64;
        let mean = records.iter().map(|r| r.mse).sum::<f64>() / n;
        let var = records.iter().map(|r| (r.mse - mean).powi(2)).sum::<f64>() / n;
        model.mse_mean = mean;
        model.mse_scale = var.sqrt().max(1e-6);
    }
    let inputs: Vec<Vec<f64>> = records
        .iter()
        .map(|r| detector_features(&r.surrogate, &r.pattern, r.mse))
        .collect();
    if cfg.warm_start {
        warm_start(&mut model, records, cfg);
    }
    let shapes: Vec<usize> = model.params().iter().map(|t| t.len()).collect();
    let mut optimizer = OptimizerState::new(OptimizerKind::Adam, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = chunk.len();
            let flat: Vec<f64> = chunk.iter().flat_map(|&i| inputs[i].iter().copied()).collect();
            let (probs, cache) = model.forward(&flat, batch)?;
            let mut d_logits = Vec::with_capacity(batch);
            for (&p, &i) in probs.iter().zip(chunk) {
                let f = focal_bce(p, records[i].correct, cfg.gamma);
                total += f.loss;
                d_logits.push(f.grad_logit / batch as f64);
            }
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: total,
                });
            }
            let grads = model.backward_logits(&cache, &d_logits)?;
            optimizer.apply(model.params_mut(), &grads, cfg.learning_rate);
            if cfg.weight_decay > 0.0 {
                let shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
                for layer in model.trunk.layers.iter_mut().chain([&mut model.output]) {
                    if let Some(w) = layer.params.first_mut() {
                        w.data_mut().iter_mut().for_each(|v| *v *= shrink);
                    }
                }
            }
        }
        epoch_losses.push(total / records.len() as f64);
    }
    Ok((
        model,
        DetectorReport {
            config: cfg.clone(),
            records: records.len(),
            correct_records: correct,
            epoch_losses,
        },
    ))
}

/// Uncertainty as the complement of the detector's "correct" probability.
pub fn detector_score(detector: &DetectorModel, surrogate: &[f64], pattern: &[f64], mse: f64) -> Result<f64> {
    let m = detector.side * detector.side;
    if surrogate.len() != m || pattern.len() != m {
        return usage(format!(
            "detector expects {m}-pixel inputs, got {} and {}",
            surrogate.len(),
            pattern.len()
        ));
    }
    let p = detector.forward(&detector_features(surrogate, pattern, mse), 1)?.0[0];
    Ok(1.0 - p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
}

pub struct DetectorScorer(pub DetectorModel);

impl DetectorScorer {
    fn features(&self, input: &ScoringInput<'_>) -> Result<Vec<f64>> {
        let pattern = input.predicted_pattern()?;
        let mse = cusp_score(&input.prediction.surrogate, pattern, Delta::Mse)?;
        if pattern.m() != self.0.side * self.0.side {
            return usage(format!(
                "detector expects {}-pixel patterns, got {}",
                self.0.side * self.0.side,
                pattern.m()
            ));
        }
        Ok(detector_features(&input.prediction.surrogate, &pattern.targets(), mse))
    }
}

impl UncertaintyScorer for DetectorScorer {
    fn method(&self) -> Method {
        Method::Detector
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        Ok(self.score_batch(std::slice::from_ref(input))?[0])
    }

    fn score_batch(&self, inputs: &[ScoringInput<'_>]) -> Result<Vec<f64>> {
        let mut flat = Vec::with_capacity(inputs.len() * self.0.input_len());
        for i in inputs {
            flat.extend(self.features(i)?);
        }
        Ok(self
            .0
            .predict(&flat, inputs.len())?
            .into_iter()
            .map(|p| 1.0 - p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_diff_check;
    use rand::Rng;

    fn record(rng: &mut ChaCha8Rng, m: usize, correct: bool) -> DetectorRecord {
        let pattern: Vec<f64> = (0..m).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let noise = if correct { 0.0 } else { 0.7 };
        let surrogate: Vec<f64> = pattern
            .iter()
            .map(|&p| (p + noise * rng.gen_range(-1.0..1.0)).clamp(0.01, 0.99))
            .collect();
        let mse = surrogate.iter().zip(&pattern).map(|(s, p)| (s - p).powi(2)).sum::<f64>() / m as f64;
        DetectorRecord {
            surrogate,
            pattern,
            mse,
            correct,
        }
    }

    #[test]
    fn degenerate_labels_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let recs: Vec<_> = (0..4).map(|_| record(&mut rng, 16, true)).collect();
        let err = train_detector(&recs, &DetectorConfig::default()).unwrap_err();
        assert!(err.to_string().contains("degenerate labels"));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = DetectorModel::new(4, [2, 3], 1).unwrap();
        model.mse_mean = 0.1;
        model.mse_scale = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..2 * model.input_len()).map(|_| rng.gen_range(0.05..0.95)).collect();
        let input = Tensor::new(vec![2, model.input_len()], x).unwrap();
        let loss = crate::grad::weighted_quadratic(vec![0.7, -1.3]);
        let err = finite_diff_check(&mut model, &input, &loss, 1e-6).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn complement_and_range() {
        let model = DetectorModel::new(4, [8, 16], 2).unwrap();
        let u = detector_score(&model, &[0.5; 16], &[1.0; 16], 0.25).unwrap();
        assert!(u > 0.0 && u < 1.0);
        assert!(detector_score(&model, &[0.5; 9], &[1.0; 9], 0.25).is_err());
    }

    #[test]
    fn separable_records_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs: Vec<_> = (0..80).map(|i| record(&mut rng, 16, i % 2 == 0)).collect();
        let cfg = DetectorConfig {
            epochs: 30,
            seed: 3,
            ..DetectorConfig::default()
        };
        let (model, report) = train_detector(&recs, &cfg).unwrap();
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        let clean = record(&mut rng, 16, true);
        let noisy = record(&mut rng, 16, false);
        let u_clean = detector_score(&model, &clean.surrogate, &clean.pattern, clean.mse).unwrap();
        let u_noisy = detector_score(&model, &noisy.surrogate, &noisy.pattern, noisy.mse).unwrap();
        assert!(u_clean < u_noisy);
    }
}
