//! Experiment harness for surrogate-pattern uncertainty: JSON configs,
//! seeded runs, JSON/CSV reports, ROC curves and PGM pattern dumps.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod seed;

use std::path::{Path, PathBuf};

pub use config::{CommandKind, ExperimentConfig};
pub use error::{HarnessError, Result};
use output::{OutputDir, Timings};

/// Files published by a successful run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Runs `command` and publishes its outputs under `out` only if it succeeds.
pub fn run(command: CommandKind, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate(command)?;
    let mut dir = OutputDir::create(out)?;
    let mut timings = Timings::default();
    match command {
        CommandKind::Train => commands::cmd_train(cfg, &mut dir, &mut timings).map(drop),
        CommandKind::EvalOod => commands::cmd_eval_ood(cfg, &mut dir, &mut timings).map(drop),
        CommandKind::EvalFlip => commands::cmd_eval_flip(cfg, &mut dir, &mut timings).map(drop),
        CommandKind::EvalAdv => commands::cmd_eval_adv(cfg, &mut dir, &mut timings).map(drop),
        CommandKind::EvalDetector => commands::cmd_eval_detector(cfg, &mut dir, &mut timings).map(drop),
        CommandKind::EvalCorrupt => commands::cmd_eval_corrupt(cfg, &mut dir, &mut timings).map(drop),
        CommandKind::DumpPatterns => commands::cmd_dump_patterns(cfg, &mut dir, &mut timings).map(drop),
    }?;
    dir.write_json("timings.json", &timings)?;
    let report = dir.final_path("report.json");
    let files = dir.commit()?;
    Ok(RunOutcome { report, files })
}
