//! Per-sample uncertainty scores, all oriented "higher = more uncertain".
//!
//! Methods are trait objects held in a [`ScorerRegistry`], looked up by tag.
//! The surrogate-pattern scores and softmax baselines are pure functions of
//! one [`ScoringInput`]; ODIN re-runs the model on a perturbed input and the
//! detector needs a trained [`DetectorModel`].

mod detector;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::model::{argmax, HeadOutputs, Prediction, SurrogateModel};
use crate::objective::{softmax, PROB_FLOOR};
use crate::patterns::{Pattern, PatternSet};
use crate::perturb::sign;

pub use detector::{
    detector_features, detector_score, train_detector, DetectorConfig, DetectorModel,
    DetectorRecord, DetectorReport, DetectorScorer,
};

/// Closed set of scoring method tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CuspMse,
    CuspBce,
    Entropy,
    Largest,
    Functional,
    Geometrical,
    Odin,
    Random,
    Oracle,
    Detector,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::CuspMse,
        Method::CuspBce,
        Method::Entropy,
        Method::Largest,
        Method::Functional,
        Method::Geometrical,
        Method::Odin,
        Method::Random,
        Method::Oracle,
        Method::Detector,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CuspMse => "cusp-mse",
            Method::CuspBce => "cusp-bce",
            Method::Entropy => "entropy",
            Method::Largest => "largest",
            Method::Functional => "functional",
            Method::Geometrical => "geometrical",
            Method::Odin => "odin",
            Method::Random => "random",
            Method::Oracle => "oracle",
            Method::Detector => "detector",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown scoring method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    In,
    Out,
}

/// One scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub method: Method,
    pub score: f64,
    pub predicted_class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

impl ScoreRecord {
    pub fn new(
        method: Method,
        score: f64,
        predicted_class: usize,
        true_class: Option<usize>,
        domain: Option<Domain>,
    ) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::Numeric(format!("{method} score is {score}")));
        }
        Ok(Self {
            method,
            score,
            predicted_class,
            true_class,
            domain,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delta {
    Mse,
    Bce,
}

/// Mean pixelwise distance between the surrogate activations and a pattern.
pub fn cusp_score(s: &[f64], pattern: &Pattern, delta: Delta) -> Result<f64> {
    if s.len() != pattern.m() {
        return usage(format!(
            "{} surrogate activations for a {}-pixel pattern",
            s.len(),
            pattern.m()
        ));
    }
    let m = s.len() as f64;
    let total: f64 = match delta {
        Delta::Mse => s
            .iter()
            .zip(&pattern.bits)
            .map(|(&v, &b)| (v - b as f64).powi(2))
            .sum(),
        Delta::Bce => s
            .iter()
            .zip(&pattern.bits)
            .map(|(&v, &b)| {
                let v = v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                if b == 1 {
                    -v.ln()
                } else {
                    -(1.0 - v).ln()
                }
            })
            .sum(),
    };
    Ok(total / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxMethod {
    Entropy,
    Largest,
    Functional,
}

fn top_two(probs: &[f64]) -> (f64, f64) {
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in probs {
        if p > best {
            second = best;
            best = p;
        } else if p > second {
            second = p;
        }
    }
    (best, second)
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return usage("not a probability vector");
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return usage(format!("class probabilities sum to {sum}"));
    }
    Ok(())
}

pub fn softmax_baseline(probs: &[f64], method: SoftmaxMethod) -> Result<f64> {
    check_probs(probs)?;
    Ok(match method {
        SoftmaxMethod::Entropy => -probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>(),
        SoftmaxMethod::Largest => 1.0 - top_two(probs).0,
        SoftmaxMethod::Functional => {
            let (a, b) = top_two(probs);
            let b = if b.is_finite() { b } else { 0.0 };
            1.0 - (a - b)
        }
    })
}

/// Uniform draw in [0,1) determined by `(seed, index)` alone.
pub fn random_score(seed: u64, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.gen::<f64>()
}

/// Which ground truth the oracle consults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// Domain membership when known, else prediction correctness.
    #[default]
    Auto,
    Correctness,
    Domain,
}

pub fn oracle_score(
    predicted: usize,
    truth: Option<usize>,
    domain: Option<Domain>,
    mode: OracleMode,
) -> Result<f64> {
    let from_domain = |d: Domain| if d == Domain::Out { 1.0 } else { 0.0 };
    let from_truth = |t: usize| if t == predicted { 0.0 } else { 1.0 };
    match (mode, truth, domain) {
        (OracleMode::Domain, _, Some(d)) | (OracleMode::Auto, _, Some(d)) => Ok(from_domain(d)),
        (OracleMode::Correctness, Some(t), _) | (OracleMode::Auto, Some(t), None) => Ok(from_truth(t)),
        _ => usage("oracle score needs ground truth"),
    }
}

/// `1 / (1 + margin)` with `margin = (z_i - z_j) / |w_i - w_j|` for the top
/// two classes `i`, `j`; `weights` holds `K` rows of length `m`.
pub fn geometrical_margin(logits: &[f64], weights: &[f64], k: usize) -> Result<f64> {
    if k < 2 || logits.len() != k {
        return usage(format!("geometrical margin needs K >= 2 logits, got {}", logits.len()));
    }
    if weights.is_empty() || weights.len() % k != 0 {
        return usage(format!("{} weights do not form {k} rows", weights.len()));
    }
    let m = weights.len() / k;
    let i = argmax(logits);
    let j = (0..k)
        .filter(|&c| c != i)
        .max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a)))
        .expect("K >= 2");
    let norm = weights[i * m..(i + 1) * m]
        .iter()
        .zip(&weights[j * m..(j + 1) * m])
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm < 1e-12 {
        return Ok(1.0);
    }
    let margin = (logits[i] - logits[j]) / norm;
    Ok(1.0 / (1.0 + margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdinConfig {
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for OdinConfig {
    fn default() -> Self {
        Self {
            temperature: 1000.0,
            epsilon: 0.0014,
        }
    }
}

/// ODIN scores for a batch: step against the gradient of the tempered
/// max-softmax log-likelihood, then `1 - max softmax(z / T)` on the result.
pub fn odin_scores(model: &SurrogateModel, images: &[f64], batch: usize, cfg: &OdinConfig) -> Result<Vec<f64>> {
    if !(cfg.temperature > 0.0) {
        return usage(format!("temperature must be > 0, got {}", cfg.temperature));
    }
    if !(cfg.epsilon >= 0.0) {
        return usage(format!("ODIN epsilon must be >= 0, got {}", cfg.epsilon));
    }
    let k = model.k;
    let t = cfg.temperature;
    let perturbed = if cfg.epsilon == 0.0 {
        images.to_vec()
    } else {
        let (out, cache) = model.forward(images, batch)?;
        let mut cot = HeadOutputs::zeros(batch, model.m, k);
        for n in 0..batch {
            let scaled: Vec<f64> = out.class_logits[n * k..(n + 1) * k].iter().map(|z| z / t).collect();
            let probs = softmax(&scaled);
            let top = argmax(&probs);
            for c in 0..k {
                let onehot = if c == top { 1.0 } else { 0.0 };
                cot.class_logits[n * k + c] = (probs[c] - onehot) / t;
            }
        }
        let grads = model.backward(&cache, &cot)?;
        images
            .iter()
            .zip(grads.input.data())
            .map(|(&x, &g)| x - cfg.epsilon * sign(g))
            .collect()
    };
    let (out, _) = model.forward(&perturbed, batch)?;
    Ok((0..batch)
        .map(|n| {
            let scaled: Vec<f64> = out.class_logits[n * k..(n + 1) * k].iter().map(|z| z / t).collect();
            1.0 - softmax(&scaled).into_iter().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

pub fn odin_score(model: &SurrogateModel, image: &[f64], cfg: &OdinConfig) -> Result<f64> {
    Ok(odin_scores(model, image, 1, cfg)?[0])
}

/// Everything a scorer may look at for one sample.
#[derive(Debug, Clone, Copy)]
pub struct ScoringInput<'a> {
    pub index: usize,
    pub prediction: &'a Prediction,
    pub patterns: &'a PatternSet,
    pub model: &'a SurrogateModel,
    pub image: &'a [f64],
    pub truth: Option<usize>,
    pub domain: Option<Domain>,
}

impl ScoringInput<'_> {
    pub fn predicted_class(&self) -> usize {
        self.prediction.predicted_class()
    }

    fn predicted_pattern(&self) -> Result<&Pattern> {
        let class = self.predicted_class();
        self.patterns
            .get(class)
            .ok_or_else(|| Error::Usage(format!("no pattern for predicted class {class}")))
    }
}

pub trait UncertaintyScorer: Send + Sync {
    fn method(&self) -> Method;

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64>;

    fn score_batch(&self, inputs: &[ScoringInput<'_>]) -> Result<Vec<f64>> {
        inputs.iter().map(|i| self.score(i)).collect()
    }

    /// Whether scores already live in [0,1] and can be thresholded on the fixed grid as is.
    fn unit_range(&self) -> bool {
        true
    }
}

pub struct CuspScorer(pub Delta);

impl UncertaintyScorer for CuspScorer {
    fn method(&self) -> Method {
        match self.0 {
            Delta::Mse => Method::CuspMse,
            Delta::Bce => Method::CuspBce,
        }
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        cusp_score(&input.prediction.surrogate, input.predicted_pattern()?, self.0)
    }

    fn unit_range(&self) -> bool {
        self.0 == Delta::Mse
    }
}

pub struct SoftmaxScorer(pub SoftmaxMethod);

impl UncertaintyScorer for SoftmaxScorer {
    fn method(&self) -> Method {
        match self.0 {
            SoftmaxMethod::Entropy => Method::Entropy,
            SoftmaxMethod::Largest => Method::Largest,
            SoftmaxMethod::Functional => Method::Functional,
        }
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        softmax_baseline(&input.prediction.probs, self.0)
    }

    fn unit_range(&self) -> bool {
        self.0 != SoftmaxMethod::Entropy
    }
}

pub struct GeometricalScorer;

impl UncertaintyScorer for GeometricalScorer {
    fn method(&self) -> Method {
        Method::Geometrical
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        geometrical_margin(&input.prediction.logits, input.model.classifier_weights(), input.model.k)
    }
}

pub struct OdinScorer(pub OdinConfig);

impl UncertaintyScorer for OdinScorer {
    fn method(&self) -> Method {
        Method::Odin
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        odin_score(input.model, input.image, &self.0)
    }

    fn score_batch(&self, inputs: &[ScoringInput<'_>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for group in inputs.chunks(64) {
            let model = group[0].model;
            if group.iter().all(|i| std::ptr::eq(i.model, model)) {
                let images: Vec<f64> = group.iter().flat_map(|i| i.image.iter().copied()).collect();
                out.extend(odin_scores(model, &images, group.len(), &self.0)?);
            } else {
                for i in group {
                    out.push(self.score(i)?);
                }
            }
        }
        Ok(out)
    }
}

pub struct RandomScorer {
    pub seed: u64,
}

impl UncertaintyScorer for RandomScorer {
    fn method(&self) -> Method {
        Method::Random
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        Ok(random_score(self.seed, input.index))
    }
}

pub struct OracleScorer(pub OracleMode);

impl UncertaintyScorer for OracleScorer {
    fn method(&self) -> Method {
        Method::Oracle
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        oracle_score(input.predicted_class(), input.truth, input.domain, self.0)
    }
}

/// Scorers keyed by method tag.
#[derive(Default)]
pub struct ScorerRegistry {
    scorers: BTreeMap<Method, Box<dyn UncertaintyScorer>>,
}

impl ScorerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every method except the detector, which must be trained first.
    pub fn with_builtins(seed: u64, odin: OdinConfig, oracle: OracleMode) -> Self {
        let mut reg = Self::new();
        reg.register(Box::new(CuspScorer(Delta::Mse)));
        reg.register(Box::new(CuspScorer(Delta::Bce)));
        reg.register(Box::new(SoftmaxScorer(SoftmaxMethod::Entropy)));
        reg.register(Box::new(SoftmaxScorer(SoftmaxMethod::Largest)));
        reg.register(Box::new(SoftmaxScorer(SoftmaxMethod::Functional)));
        reg.register(Box::new(GeometricalScorer));
        reg.register(Box::new(OdinScorer(odin)));
        reg.register(Box::new(RandomScorer { seed }));
        reg.register(Box::new(OracleScorer(oracle)));
        reg
    }

    /// Adds or replaces the scorer for its method tag.
    pub fn register(&mut self, scorer: Box<dyn UncertaintyScorer>) {
        self.scorers.insert(scorer.method(), scorer);
    }

    pub fn get(&self, method: Method) -> Result<&dyn UncertaintyScorer> {
        self.scorers
            .get(&method)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::Usage(format!("no scorer registered for '{method}'")))
    }

    pub fn methods(&self) -> Vec<Method> {
        self.scorers.keys().copied().collect()
    }

    /// Scores every input with `method`, rejecting non-finite results.
    pub fn score_all(&self, method: Method, inputs: &[ScoringInput<'_>]) -> Result<Vec<ScoreRecord>> {
        let scorer = self.get(method)?;
        let scores = scorer.score_batch(inputs)?;
        inputs
            .iter()
            .zip(scores)
            .map(|(i, s)| ScoreRecord::new(method, s, i.predicted_class(), i.truth, i.domain))
            .collect()
    }
}
