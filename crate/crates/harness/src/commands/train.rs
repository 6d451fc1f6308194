use cusp_core::train::TrainReport;
use serde::Serialize;

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::Result;
use crate::output::{OutputDir, Timings};
use crate::pipeline::{accuracy_of, predict, train_model, DataSummary};

#[derive(Debug, Clone, Serialize)]
pub struct TrainCommandReport {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub pattern_id: String,
    /// Set when alpha is 0: the surrogate layer is then unconstrained.
    pub alpha_zero: bool,
    pub warnings: Vec<String>,
    pub train: TrainReport,
    pub train_accuracy: f64,
    pub checkpoint: String,
    pub dumps: Vec<String>,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &mut OutputDir, timings: &mut Timings) -> Result<TrainCommandReport> {
    cfg.validate(CommandKind::Train)?;
    let data = timings.time("load", || cfg.data.load(cfg.seed, "train"))?;
    let bundle = timings.time("train", || train_model(cfg, &data, cfg.train.alpha, "model", out))?;
    let train_accuracy = accuracy_of(&predict(&bundle.model, &data.images)?, &data.labels)?;
    let alpha_zero = cfg.train.alpha == 0.0;
    let mut warnings = Vec::new();
    if alpha_zero {
        warnings.push("alpha is 0: no pattern constraint, reconstructions are unstructured".to_string());
    }
    let report = TrainCommandReport {
        command: CommandKind::Train.as_str(),
        config: cfg.clone(),
        data: DataSummary::of(&data),
        pattern_id: bundle.pattern_id,
        alpha_zero,
        warnings,
        train: bundle.train.expect("trained here"),
        train_accuracy,
        checkpoint: bundle.checkpoint.expect("written here"),
        dumps: bundle.dumps,
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}
