//! Mini-batch training of a [`SurrogateModel`] on the combined loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config, Error, Result};
use crate::grad::GradBundle;
use crate::model::{argmax, SurrogateModel};
use crate::objective::{CuspObjective, LossValue};
use crate::patterns::PatternSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return config(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return config("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return config(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        Ok(())
    }
}

/// Per-epoch averages over all samples seen in the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossValue,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    /// The reconstruction term is summed over pixels, then averaged over samples.
    pub reconstruction_reduction: String,
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_stats(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

pub(crate) enum OptimizerState {
    Sgd { velocity: Vec<Vec<f64>> },
    Adam { m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, step: i32 },
}

const MOMENTUM: f64 = 0.9;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub(crate) fn new(kind: OptimizerKind, shapes: &[usize]) -> Self {
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        match kind {
            OptimizerKind::SgdMomentum => Self::Sgd { velocity: zeros() },
            OptimizerKind::Adam => Self::Adam {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        }
    }

    pub(crate) fn apply(&mut self, params: Vec<&mut Tensor>, grads: &GradBundle, lr: f64) {
        let grads: Vec<&Tensor> = grads.layers.iter().flatten().collect();
        match self {
            Self::Sgd { velocity } => {
                for ((p, g), vel) in params.into_iter().zip(grads).zip(velocity) {
                    for ((w, &d), u) in p.data_mut().iter_mut().zip(g.data()).zip(vel.iter_mut()) {
                        *u = MOMENTUM * *u - lr * d;
                        *w += *u;
                    }
                }
            }
            Self::Adam { m, v, step } => {
                *step += 1;
                let c1 = 1.0 - BETA1.powi(*step);
                let c2 = 1.0 - BETA2.powi(*step);
                for (((p, g), mt), vt) in params.into_iter().zip(grads).zip(m).zip(v) {
                    for (((w, &d), a), b) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(mt.iter_mut())
                        .zip(vt.iter_mut())
                    {
                        *a = BETA1 * *a + (1.0 - BETA1) * d;
                        *b = BETA2 * *b + (1.0 - BETA2) * d * d;
                        *w -= lr * (*a / c1) / ((*b / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

fn check_compatible(model: &SurrogateModel, data: &Dataset, patterns: &PatternSet) -> Result<()> {
    if patterns.k() != model.k {
        return config(format!("{} patterns for a {}-class model", patterns.k(), model.k));
    }
    if patterns.m() != model.m {
        return config(format!("patterns have {} pixels, surrogate head has {}", patterns.m(), model.m));
    }
    if data.pixels() != model.input_len() {
        return config(format!(
            "dataset images have {} pixels, model expects {}",
            data.pixels(),
            model.input_len()
        ));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= model.k) {
        return config(format!("label {bad} is outside the model's {} classes", model.k));
    }
    Ok(())
}

pub fn train(
    model: &mut SurrogateModel,
    data: &Dataset,
    patterns: &PatternSet,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, data, patterns, cfg, |_, _| Ok(()))
}

/// Like [`train`], calling `on_epoch(epoch, model)` after every epoch.
pub fn train_with<F>(
    model: &mut SurrogateModel,
    data: &Dataset,
    patterns: &PatternSet,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &SurrogateModel) -> Result<()>,
{
    cfg.validate()?;
    check_compatible(model, data, patterns)?;
    if data.is_empty() {
        return config("cannot train on an empty dataset");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shapes: Vec<usize> = model.params().iter().map(|t| t.len()).collect();
    let mut optimizer = OptimizerState::new(cfg.optimizer, &shapes);
    let pixels = data.pixels();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_l1, mut sum_l2, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = chunk.len();
            let mut inputs = Vec::with_capacity(batch * pixels);
            let mut targets = Vec::with_capacity(batch);
            for &i in chunk {
                inputs.extend_from_slice(data.image(i));
                targets.push(data.labels[i]);
            }
            let (out, cache) = model.forward(&inputs, batch)?;
            let objective = CuspObjective {
                targets: &targets,
                patterns,
                alpha: cfg.alpha,
            };
            let (loss, cotangent) = objective.evaluate(&out)?;
            let outputs_finite = out
                .class_logits
                .iter()
                .chain(&out.surrogate_logits)
                .all(|v| v.is_finite());
            if !loss.total.is_finite() || !outputs_finite {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: if outputs_finite { loss.total } else { f64::NAN },
                });
            }
            for (n, &t) in targets.iter().enumerate() {
                if argmax(&out.class_logits[n * model.k..(n + 1) * model.k]) == t {
                    correct += 1;
                }
            }
            sum_total += loss.total * batch as f64;
            sum_l1 += loss.classification * batch as f64;
            sum_l2 += loss.reconstruction * batch as f64;
            let grads = model.backward(&cache, &cotangent)?;
            optimizer.apply(model.params_mut(), &grads, cfg.learning_rate);
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: LossValue {
                total: sum_total / n,
                classification: sum_l1 / n,
                reconstruction: sum_l2 / n,
                alpha: cfg.alpha,
            },
            accuracy: correct as f64 / n,
        };
        epochs.push(stats);
        on_epoch(epoch, model)?;
    }
    Ok(TrainReport {
        config: cfg.clone(),
        reconstruction_reduction: "sum over pixels, mean over samples".into(),
        epochs,
    })
}
