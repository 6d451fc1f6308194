use cusp_core::perturb::{flip_labels, FlipSpec};
use cusp_core::scoring::Method;
use serde::Serialize;

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::Result;
use crate::output::{csv, OutputDir, Timings};
use crate::pipeline::{
    accuracy_of, predict, predicted_classes, registry, select, train_model, Contrast, DataSummary, GroupStats,
    ScoringSet,
};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Serialize)]
pub struct PairBreakdown {
    pub from: usize,
    pub to: usize,
    /// Samples of class `from` relabeled as `to`.
    pub flipped: GroupStats,
    pub clean_from: GroupStats,
    pub clean_to: GroupStats,
    pub flipped_vs_clean_from: Contrast,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlipMethodReport {
    pub method: Method,
    pub flipped: GroupStats,
    pub clean: GroupStats,
    /// Clean samples whose class is the source of some pair.
    pub clean_source_classes: GroupStats,
    pub flipped_vs_clean: Contrast,
    pub flipped_vs_clean_source_classes: Contrast,
    pub pairs: Vec<PairBreakdown>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlipReport {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub pattern_id: String,
    pub checkpoint: String,
    /// Whether the masked group is a placebo (rate 0, labels untouched).
    pub placebo: bool,
    pub masked: usize,
    /// Accuracy against the labels the model was trained on.
    pub accuracy_trained_labels: f64,
    /// Accuracy against the original labels.
    pub accuracy_original_labels: f64,
    pub methods: Vec<FlipMethodReport>,
    pub scores_file: String,
    pub dumps: Vec<String>,
}

/// Trains on flipped labels, then compares the uncertainty of the flipped
/// training samples with that of the clean ones.
pub fn cmd_eval_flip(cfg: &ExperimentConfig, out: &mut OutputDir, timings: &mut Timings) -> Result<FlipReport> {
    cfg.validate(CommandKind::EvalFlip)?;
    let section = cfg.flip.as_ref().expect("validated");
    let data = timings.time("load", || cfg.data.load(cfg.seed, "train"))?;
    let placebo = section.rate == 0.0 && section.placebo_rate > 0.0;
    let spec = FlipSpec {
        pairs: section.pairs.clone(),
        rate: if placebo { section.placebo_rate } else { section.rate },
        seed: derive_seed(cfg.seed, "flip"),
    };
    let (flipped_labels, mask) = flip_labels(&data.labels, data.k(), &spec)?;
    let trained_labels = if placebo { data.labels.clone() } else { flipped_labels };
    let train_set = data.with_labels(trained_labels.clone())?;
    let bundle = timings.time("train", || train_model(cfg, &train_set, cfg.train.alpha, "model", out))?;

    let preds = timings.time("predict", || predict(&bundle.model, &data.images))?;
    let scoring = ScoringSet {
        images: &data.images,
        pixels: data.pixels(),
        preds: &preds,
        truths: data.labels.iter().copied().map(Some).collect(),
        domains: vec![None; data.len()],
    };
    let registry = registry(cfg);
    let original = &data.labels;
    let sources: Vec<usize> = section.pairs.iter().map(|p| p.0).collect();
    let mut methods = Vec::with_capacity(cfg.methods.len());
    let mut columns = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let scores = timings.time(&format!("score/{method}"), || scoring.score(&registry, &bundle, method))?;
        let flipped = GroupStats::of(&select(&scores, |i| mask[i]));
        let clean = GroupStats::of(&select(&scores, |i| !mask[i]));
        let clean_sources = GroupStats::of(&select(&scores, |i| !mask[i] && sources.contains(&original[i])));
        let pairs = section
            .pairs
            .iter()
            .map(|&(from, to)| {
                let flipped = GroupStats::of(&select(&scores, |i| mask[i] && original[i] == from));
                let clean_from = GroupStats::of(&select(&scores, |i| !mask[i] && original[i] == from));
                PairBreakdown {
                    from,
                    to,
                    flipped,
                    clean_from,
                    clean_to: GroupStats::of(&select(&scores, |i| !mask[i] && original[i] == to)),
                    flipped_vs_clean_from: Contrast::between(&flipped, &clean_from),
                }
            })
            .collect();
        methods.push(FlipMethodReport {
            method,
            flipped,
            clean,
            clean_source_classes: clean_sources,
            flipped_vs_clean: Contrast::between(&flipped, &clean),
            flipped_vs_clean_source_classes: Contrast::between(&flipped, &clean_sources),
            pairs,
        });
        columns.push(scores);
    }

    let predicted = predicted_classes(&preds);
    let mut header = vec!["index", "original_label", "trained_label", "masked", "predicted_class"];
    header.extend(cfg.methods.iter().map(|m| m.as_str()));
    let rows: Vec<Vec<String>> = (0..data.len())
        .map(|i| {
            let mut row = vec![
                i.to_string(),
                original[i].to_string(),
                trained_labels[i].to_string(),
                u8::from(mask[i]).to_string(),
                predicted[i].to_string(),
            ];
            row.extend(columns.iter().map(|c| c[i].to_string()));
            row
        })
        .collect();
    let scores_file = out.write("scores.csv", csv(&header, &rows).as_bytes())?;

    let report = FlipReport {
        command: CommandKind::EvalFlip.as_str(),
        config: cfg.clone(),
        data: DataSummary::of(&data),
        pattern_id: bundle.pattern_id.clone(),
        checkpoint: bundle.checkpoint.clone().expect("trained here"),
        placebo,
        masked: mask.iter().filter(|&&m| m).count(),
        accuracy_trained_labels: accuracy_of(&preds, &trained_labels)?,
        accuracy_original_labels: accuracy_of(&preds, original)?,
        methods,
        scores_file,
        dumps: bundle.dumps.clone(),
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}
