use cusp_core::data::{split, SplitKind};
use cusp_core::model::Prediction;
use cusp_core::patterns::PatternSet;
use cusp_core::scoring::{
    cusp_score, train_detector, Delta, DetectorRecord, DetectorReport, DetectorScorer, Method, ScoringInput,
    UncertaintyScorer,
};
use serde::Serialize;

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::{config, Result};
use crate::output::{OutputDir, Timings};
use crate::pipeline::{accuracy_of, check_fits, obtain_model, predict, summarize, DataSummary, MethodSummary};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitCounts {
    pub primary_train: usize,
    pub records: usize,
    pub records_correct: usize,
    pub records_incorrect: usize,
    pub evaluation: usize,
    pub evaluation_incorrect: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectorCommandReport {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub pattern_id: String,
    pub checkpoint: Option<String>,
    pub counts: SplitCounts,
    pub record_accuracy: f64,
    pub evaluation_accuracy: f64,
    pub detector: DetectorReport,
    /// Positive class: incorrect prediction. Methods: cusp-bce, cusp-mse, detector.
    pub methods: Vec<MethodSummary>,
    pub dumps: Vec<String>,
}

fn records(preds: &[Prediction], labels: &[usize], patterns: &PatternSet) -> Result<Vec<DetectorRecord>> {
    preds
        .iter()
        .zip(labels)
        .map(|(p, &truth)| {
            let predicted = p.predicted_class();
            let pattern = &patterns.patterns()[predicted];
            Ok(DetectorRecord {
                surrogate: p.surrogate.clone(),
                pattern: pattern.targets(),
                mse: cusp_score(&p.surrogate, pattern, Delta::Mse)?,
                correct: predicted == truth,
            })
        })
        .collect()
}

/// Split 10:1:1; train the primary model on the first part, the detector on
/// records from the second, and score the third with both reconstruction
/// distances and the detector.
pub fn cmd_eval_detector(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    timings: &mut Timings,
) -> Result<DetectorCommandReport> {
    cfg.validate(CommandKind::EvalDetector)?;
    let data = timings.time("load", || cfg.data.load(cfg.seed, "pool"))?;
    let (_, parts) = split(&data, SplitKind::Ratio10To1To1, derive_seed(cfg.seed, "detector-split"))?;
    let [primary, middle, last]: [_; 3] = parts.try_into().expect("three parts");
    if middle.is_empty() || last.is_empty() {
        return config(format!("{} samples are too few for a 10:1:1 split", data.len()));
    }
    let bundle = timings.time("train/primary", || obtain_model(cfg, &primary, "primary", out))?;
    check_fits(&bundle, &middle, "data")?;

    let middle_preds = predict(&bundle.model, &middle.images)?;
    let train_records = records(&middle_preds, &middle.labels, &bundle.patterns)?;
    let det_cfg = cfg.detector_config();
    let (detector, detector_report) = timings.time("train/detector", || train_detector(&train_records, &det_cfg))?;

    let last_preds = predict(&bundle.model, &last.images)?;
    let eval_records = records(&last_preds, &last.labels, &bundle.patterns)?;
    let positive: Vec<bool> = eval_records.iter().map(|r| !r.correct).collect();
    let incorrect = positive.iter().filter(|&&p| p).count();
    if incorrect == 0 || incorrect == positive.len() {
        return config(format!(
            "degenerate evaluation labels: {incorrect} of {} predictions are incorrect",
            positive.len()
        ));
    }
    let scorer = DetectorScorer(detector);
    let inputs: Vec<ScoringInput<'_>> = last_preds
        .iter()
        .enumerate()
        .map(|(i, p)| ScoringInput {
            index: i,
            prediction: p,
            patterns: &bundle.patterns,
            model: &bundle.model,
            image: last.image(i),
            truth: Some(last.labels[i]),
            domain: None,
        })
        .collect();
    let detector_scores = timings.time("score/detector", || scorer.score_batch(&inputs))?;
    let mse: Vec<f64> = eval_records.iter().map(|r| r.mse).collect();
    let bce = last_preds
        .iter()
        .map(|p| cusp_score(&p.surrogate, &bundle.patterns.patterns()[p.predicted_class()], Delta::Bce))
        .collect::<cusp_core::Result<Vec<f64>>>()?;
    let methods = vec![
        summarize(Method::CuspBce, "cusp-bce", &bce, &positive, out)?,
        summarize(Method::CuspMse, "cusp-mse", &mse, &positive, out)?,
        summarize(Method::Detector, "detector", &detector_scores, &positive, out)?,
    ];

    let counts = SplitCounts {
        primary_train: primary.len(),
        records: train_records.len(),
        records_correct: detector_report.correct_records,
        records_incorrect: detector_report.records - detector_report.correct_records,
        evaluation: last.len(),
        evaluation_incorrect: incorrect,
    };
    let report = DetectorCommandReport {
        command: CommandKind::EvalDetector.as_str(),
        config: cfg.clone(),
        data: DataSummary::of(&data),
        pattern_id: bundle.pattern_id.clone(),
        checkpoint: bundle.checkpoint.clone(),
        counts,
        record_accuracy: accuracy_of(&middle_preds, &middle.labels)?,
        evaluation_accuracy: accuracy_of(&last_preds, &last.labels)?,
        detector: detector_report,
        methods,
        dumps: bundle.dumps.clone(),
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}
