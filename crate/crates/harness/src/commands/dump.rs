use serde::Serialize;

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::Result;
use crate::output::{OutputDir, Timings};
use crate::pipeline::{check_fits, load_model, write_reconstructions, write_targets, DataSummary, ReconstructionDump};

#[derive(Debug, Clone, Serialize)]
pub struct DumpReport {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub pattern_id: String,
    pub targets: Vec<String>,
    pub reconstructions: Vec<ReconstructionDump>,
    /// Classes with no samples in the dataset, hence no reconstruction file.
    pub classes_without_samples: Vec<usize>,
}

/// Writes `class_<k>_target.pgm` and `class_<k>_recon.pgm` for every class.
pub fn cmd_dump_patterns(cfg: &ExperimentConfig, out: &mut OutputDir, timings: &mut Timings) -> Result<DumpReport> {
    cfg.validate(CommandKind::DumpPatterns)?;
    let bundle = load_model(cfg.checkpoint.as_deref().expect("validated"))?;
    let data = timings.time("load", || cfg.data.load(cfg.seed, "dump"))?;
    check_fits(&bundle, &data, "data")?;
    let targets = write_targets(out, "", &bundle.patterns)?;
    let reconstructions = timings.time("reconstruct", || {
        write_reconstructions(out, "", &bundle.model, &bundle.patterns, &data)
    })?;
    let classes_without_samples = (0..bundle.model.k)
        .filter(|k| !reconstructions.iter().any(|r| r.class == *k))
        .collect();
    let report = DumpReport {
        command: CommandKind::DumpPatterns.as_str(),
        config: cfg.clone(),
        data: DataSummary::of(&data),
        pattern_id: bundle.pattern_id,
        targets,
        reconstructions,
        classes_without_samples,
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}
