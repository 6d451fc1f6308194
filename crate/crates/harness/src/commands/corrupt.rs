use cusp_core::perturb::{add_noise, random_erase, rotate};
use cusp_core::scoring::Method;
use serde::Serialize;

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::Result;
use crate::output::{csv, OutputDir, Timings};
use crate::pipeline::{accuracy_of, check_fits, obtain_model, predict, registry, DataSummary, GroupStats, ScoringSet};
use crate::seed::{derive_seed, splitmix64};

#[derive(Debug, Clone, Serialize)]
pub struct MethodMean {
    pub method: Method,
    pub stats: GroupStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorruptionRow {
    pub corruption: &'static str,
    pub level: f64,
    pub accuracy: f64,
    pub methods: Vec<MethodMean>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorruptionReport {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub test_data: DataSummary,
    pub pattern_id: String,
    pub checkpoint: Option<String>,
    pub rows: Vec<CorruptionRow>,
    pub table_file: String,
}

/// Mean uncertainty and accuracy of the test set under rotation, Gaussian
/// noise and random erasing at each configured level.
pub fn cmd_eval_corrupt(cfg: &ExperimentConfig, out: &mut OutputDir, timings: &mut Timings) -> Result<CorruptionReport> {
    cfg.validate(CommandKind::EvalCorrupt)?;
    let section = cfg.corruption.as_ref().expect("validated");
    let test = timings.time("load", || section.test.load(cfg.seed, "test"))?;
    let bundle = match &cfg.checkpoint {
        Some(_) => obtain_model(cfg, &test, "model", out)?,
        None => {
            let data = cfg.data.load(cfg.seed, "train")?;
            timings.time("train", || obtain_model(cfg, &data, "model", out))?
        }
    };
    check_fits(&bundle, &test, "corruption.test")?;
    let side = test.side;
    let pixels = test.pixels();
    let registry = registry(cfg);
    let noise_seed = derive_seed(cfg.seed, "corruption/noise");
    let erase_seed = derive_seed(cfg.seed, "corruption/erase");

    let mut settings: Vec<(&'static str, f64)> = Vec::new();
    settings.extend(section.rotations.iter().map(|&d| ("rotation", d)));
    settings.extend(section.noise_sigmas.iter().map(|&s| ("noise", s)));
    settings.extend(section.erase_fractions.iter().map(|&f| ("erase", f)));

    let mut rows = Vec::with_capacity(settings.len());
    for (corruption, level) in settings {
        let mut images = Vec::with_capacity(test.images.len());
        for i in 0..test.len() {
            let image = test.image(i);
            let sample_seed = splitmix64(i as u64);
            images.extend(match corruption {
                "rotation" => rotate(image, side, level, 0.0)?,
                "noise" => add_noise(image, level, noise_seed ^ sample_seed, 0.0, 1.0)?,
                _ => random_erase(image, side, level, section.erase_count, erase_seed ^ sample_seed, 0.0)?,
            });
        }
        let preds = predict(&bundle.model, &images)?;
        let scoring = ScoringSet {
            images: &images,
            pixels,
            preds: &preds,
            truths: test.labels.iter().copied().map(Some).collect(),
            domains: vec![None; test.len()],
        };
        let mut methods = Vec::with_capacity(cfg.methods.len());
        for &method in &cfg.methods {
            let scores = timings.time(&format!("{corruption}/{level}/{method}"), || {
                scoring.score(&registry, &bundle, method)
            })?;
            methods.push(MethodMean {
                method,
                stats: GroupStats::of(&scores),
            });
        }
        rows.push(CorruptionRow {
            corruption,
            level,
            accuracy: accuracy_of(&preds, &test.labels)?,
            methods,
        });
    }

    let mut header = vec!["corruption", "level", "accuracy"];
    header.extend(cfg.methods.iter().map(|m| m.as_str()));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.corruption.to_string(), r.level.to_string(), r.accuracy.to_string()];
            row.extend(r.methods.iter().map(|m| m.stats.mean.map_or(String::new(), |v| v.to_string())));
            row
        })
        .collect();
    let table_file = out.write("corruption.csv", csv(&header, &table).as_bytes())?;
    let report = CorruptionReport {
        command: CommandKind::EvalCorrupt.as_str(),
        config: cfg.clone(),
        test_data: DataSummary::of(&test),
        pattern_id: bundle.pattern_id.clone(),
        checkpoint: bundle.checkpoint.clone(),
        rows,
        table_file,
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}
