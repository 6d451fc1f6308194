//! Steps shared by the commands: obtaining a model, scoring, summarizing.

use cusp_core::checkpoint::{encode_checkpoint, load_checkpoint, CheckpointMeta};
use cusp_core::data::Dataset;
use cusp_core::metrics::{accuracy, auc, normalize_min_max, roc_100};
use cusp_core::model::{build_model, Prediction};
use cusp_core::patterns::{encode_pgm, PatternSet};
use cusp_core::scoring::{Domain, Method, ScorerRegistry, ScoringInput};
use cusp_core::train::{train_with, TrainReport};
use cusp_core::SurrogateModel;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{config, Result};
use crate::output::OutputDir;
use crate::seed::derive_seed;

/// Per-epoch dumps average over at most this many training samples.
pub const DUMP_SAMPLES: usize = 512;
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSummary {
    pub provenance: String,
    pub samples: usize,
    pub classes: usize,
    pub side: usize,
}

impl DataSummary {
    pub fn of(data: &Dataset) -> Self {
        Self {
            provenance: data.provenance.clone(),
            samples: data.len(),
            classes: data.k(),
            side: data.side,
        }
    }
}

/// A model ready for evaluation, trained here or loaded from a checkpoint.
pub struct ModelBundle {
    pub model: SurrogateModel,
    pub patterns: PatternSet,
    pub pattern_id: String,
    pub meta: CheckpointMeta,
    pub train: Option<TrainReport>,
    /// Output name of the checkpoint written by this run.
    pub checkpoint: Option<String>,
    pub dumps: Vec<String>,
}

impl ModelBundle {
    pub fn alpha(&self) -> f64 {
        self.meta.alpha
    }
}

/// Trains a model on `data` with mixing weight `alpha`, writing
/// `<role>.ckpt` and, when enabled, per-epoch reconstruction dumps under
/// `dumps/<role>/`.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &Dataset,
    alpha: f64,
    role: &str,
    out: &mut OutputDir,
) -> Result<ModelBundle> {
    train_model_seeded(cfg, data, alpha, role, role, out)
}

/// Like [`train_model`]; initial weights and batch order depend only on the
/// master seed and `seed_role`.
pub fn train_model_seeded(
    cfg: &ExperimentConfig,
    data: &Dataset,
    alpha: f64,
    role: &str,
    seed_role: &str,
    out: &mut OutputDir,
) -> Result<ModelBundle> {
    let patterns = cfg.model.build_patterns(data.k(), cfg.seed)?;
    let pattern_id = pattern_id(cfg);
    let init_seed = derive_seed(cfg.seed, &format!("init/{seed_role}"));
    let mut model = build_model(cfg.model.arch, &[1, data.side, data.side], patterns.m(), data.k(), init_seed)?;
    let mut train_cfg = cfg.train.to_train_config(cfg.seed, seed_role);
    train_cfg.alpha = alpha;
    let every = cfg.train.dump_every;
    let probe = data.take(DUMP_SAMPLES.min(data.len()));
    let mut dumps = Vec::new();
    if every > 0 {
        dumps.extend(write_targets(out, &format!("dumps/{role}"), &patterns)?);
    }
    let mut dump_error = None;
    let report = train_with(&mut model, data, &patterns, &train_cfg, |epoch, m| {
        if every > 0 && (epoch + 1) % every == 0 {
            let dir = format!("dumps/{role}/epoch_{:03}", epoch + 1);
            match write_reconstructions(out, &dir, m, &patterns, &probe) {
                Ok(files) => dumps.extend(files.into_iter().map(|d| d.file)),
                Err(e) => {
                    dump_error = Some(e);
                    return Err(cusp_core::Error::Usage("reconstruction dump failed".into()));
                }
            }
        }
        Ok(())
    });
    if let Some(e) = dump_error {
        return Err(e);
    }
    let report = report?;
    let meta = CheckpointMeta {
        epochs_run: report.epochs.len(),
        final_loss: report.final_stats().map(|s| s.loss),
        seed: init_seed,
        alpha,
    };
    let name = format!("{role}.ckpt");
    out.write(&name, &encode_checkpoint(&model, &patterns, &pattern_id, &meta)?)?;
    Ok(ModelBundle {
        model,
        patterns,
        pattern_id,
        meta,
        train: Some(report),
        checkpoint: Some(name),
        dumps,
    })
}

/// The configured checkpoint when there is one, otherwise a model trained on `data`.
pub fn obtain_model(cfg: &ExperimentConfig, data: &Dataset, role: &str, out: &mut OutputDir) -> Result<ModelBundle> {
    match &cfg.checkpoint {
        Some(path) => load_model(path),
        None => train_model(cfg, data, cfg.train.alpha, role, out),
    }
}

pub fn load_model(path: &std::path::Path) -> Result<ModelBundle> {
    let ckpt = load_checkpoint(path)?;
    Ok(ModelBundle {
        model: ckpt.model,
        patterns: ckpt.patterns,
        pattern_id: ckpt.pattern_id,
        meta: ckpt.meta,
        train: None,
        checkpoint: None,
        dumps: Vec::new(),
    })
}

fn pattern_id(cfg: &ExperimentConfig) -> String {
    let p = &cfg.model.patterns;
    format!("{:?}-{}", p.kind, p.side).to_lowercase()
}

/// Fails unless `data` fits the model's input and class count.
pub fn check_fits(bundle: &ModelBundle, data: &Dataset, what: &str) -> Result<()> {
    if data.pixels() != bundle.model.input_len() {
        return config(format!(
            "{what} images have {} pixels, the model expects {}",
            data.pixels(),
            bundle.model.input_len()
        ));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= bundle.model.k) {
        return config(format!("{what} has label {bad}, the model has {} classes", bundle.model.k));
    }
    Ok(())
}

pub fn predict(model: &SurrogateModel, images: &[f64]) -> Result<Vec<Prediction>> {
    Ok(model.predict_many(images, PREDICT_CHUNK)?)
}

pub fn predicted_classes(preds: &[Prediction]) -> Vec<usize> {
    preds.iter().map(Prediction::predicted_class).collect()
}

pub fn accuracy_of(preds: &[Prediction], truths: &[usize]) -> Result<f64> {
    Ok(accuracy(&predicted_classes(preds), truths)?)
}

pub fn registry(cfg: &ExperimentConfig) -> ScorerRegistry {
    ScorerRegistry::with_builtins(derive_seed(cfg.seed, "random"), cfg.odin, cfg.oracle)
}

/// Samples to score, with optional ground truth and domain flags.
pub struct ScoringSet<'a> {
    pub images: &'a [f64],
    pub pixels: usize,
    pub preds: &'a [Prediction],
    pub truths: Vec<Option<usize>>,
    pub domains: Vec<Option<Domain>>,
}

impl ScoringSet<'_> {
    pub fn score(&self, registry: &ScorerRegistry, bundle: &ModelBundle, method: Method) -> Result<Vec<f64>> {
        let inputs: Vec<ScoringInput<'_>> = self
            .preds
            .iter()
            .enumerate()
            .map(|(i, p)| ScoringInput {
                index: i,
                prediction: p,
                patterns: &bundle.patterns,
                model: &bundle.model,
                image: &self.images[i * self.pixels..(i + 1) * self.pixels],
                truth: self.truths[i],
                domain: self.domains[i],
            })
            .collect();
        Ok(registry.score_all(method, &inputs)?.into_iter().map(|r| r.score).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub auc: f64,
    /// Trapezoidal area under the 100-threshold ROC, for comparison.
    pub roc_area: f64,
    pub roc_file: String,
    pub mean_positive: f64,
    pub mean_negative: f64,
}

/// AUC and ROC (scores min-max normalized first) with `positive` as the
/// condition being detected; the curve goes to `roc_<name>.csv`.
pub fn summarize(
    method: Method,
    name: &str,
    scores: &[f64],
    positive: &[bool],
    out: &mut OutputDir,
) -> Result<MethodSummary> {
    let value = auc(scores, positive)?;
    let roc = roc_100(&normalize_min_max(scores), positive)?;
    let roc_file = out.write(&format!("roc_{name}.csv"), roc.to_csv().as_bytes())?;
    let mean_where = |flag: bool| {
        let picked: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p == flag).map(|(&s, _)| s).collect();
        picked.iter().sum::<f64>() / picked.len() as f64
    };
    Ok(MethodSummary {
        method,
        auc: value,
        roc_area: roc.trapezoid_area(),
        roc_file,
        mean_positive: mean_where(true),
        mean_negative: mean_where(false),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionDump {
    pub class: usize,
    pub file: String,
    pub samples: usize,
    /// Pearson correlation between the mean reconstruction and the target.
    pub pearson: Option<f64>,
}

pub fn write_targets(out: &mut OutputDir, dir: &str, patterns: &PatternSet) -> Result<Vec<String>> {
    let side = patterns.side();
    patterns
        .patterns()
        .iter()
        .enumerate()
        .map(|(k, p)| out.write(&output_name(dir, &format!("class_{k}_target.pgm")), &encode_pgm(side, side, &p.targets())))
        .collect()
}

/// Mean surrogate activation per true class of `data`, as PGM images.
/// Classes without samples get no file.
pub fn write_reconstructions(
    out: &mut OutputDir,
    dir: &str,
    model: &SurrogateModel,
    patterns: &PatternSet,
    data: &Dataset,
) -> Result<Vec<ReconstructionDump>> {
    let preds = predict(model, &data.images)?;
    let m = patterns.m();
    let side = patterns.side();
    let mut sums = vec![vec![0.0; m]; model.k];
    let mut counts = vec![0usize; model.k];
    for (p, &l) in preds.iter().zip(&data.labels) {
        counts[l] += 1;
        for (acc, &s) in sums[l].iter_mut().zip(&p.surrogate) {
            *acc += s;
        }
    }
    let mut dumps = Vec::new();
    for (k, (sum, &n)) in sums.iter().zip(&counts).enumerate() {
        if n == 0 {
            continue;
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
        let file = out.write(&output_name(dir, &format!("class_{k}_recon.pgm")), &encode_pgm(side, side, &mean))?;
        dumps.push(ReconstructionDump {
            class: k,
            file,
            samples: n,
            pearson: pearson(&mean, &patterns.patterns()[k].targets()),
        });
    }
    Ok(dumps)
}

fn output_name(dir: &str, file: &str) -> String {
    if dir.is_empty() {
        file.to_string()
    } else {
        format!("{dir}/{file}")
    }
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Standard error of the mean (sample deviation over sqrt n).
    pub std_err: Option<f64>,
}

impl GroupStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: None,
                median: None,
                std_err: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let std_err = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Self {
            n,
            mean: Some(mean),
            median: Some(median),
            std_err,
        }
    }
}

/// Difference of means `a - b` with its standard error and z value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contrast {
    pub difference: Option<f64>,
    pub std_err: Option<f64>,
    pub z: Option<f64>,
}

impl Contrast {
    pub fn between(a: &GroupStats, b: &GroupStats) -> Self {
        let difference = a.mean.zip(b.mean).map(|(x, y)| x - y);
        let std_err = a.std_err.zip(b.std_err).map(|(x, y)| (x * x + y * y).sqrt());
        let z = difference.zip(std_err).and_then(|(d, s)| (s > 0.0).then(|| d / s));
        Self { difference, std_err, z }
    }
}

pub fn select(values: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    values.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, &v)| v).collect()
}
