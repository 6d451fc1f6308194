use cusp_core::data::Dataset;
use cusp_core::perturb::{fgm_attack_batch, AttackConfig};
use serde::Serialize;

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::{config, Result};
use crate::output::{csv, OutputDir, Timings};
use crate::pipeline::{accuracy_of, check_fits, load_model, obtain_model, predict, train_model_seeded, DataSummary, ModelBundle};

const ATTACK_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvRow {
    pub epsilon: f64,
    pub cusp_accuracy: f64,
    pub plain_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub alpha: f64,
    pub pattern_id: String,
    pub checkpoint: Option<String>,
    pub clean_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdvReport {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub train_data: DataSummary,
    pub test_data: DataSummary,
    pub cusp: ModelInfo,
    pub plain: ModelInfo,
    pub rows: Vec<AdvRow>,
    pub table_file: String,
    /// Accuracy increases with epsilon, which a one-step attack should not cause.
    pub warnings: Vec<String>,
}

/// FGM accuracy, each model attacked through its own training loss.
fn attacked_accuracy(bundle: &ModelBundle, test: &Dataset, epsilon: f64) -> Result<f64> {
    let attack = AttackConfig::new(epsilon);
    let pixels = test.pixels();
    let mut adversarial = Vec::with_capacity(test.images.len());
    for (images, labels) in test.images.chunks(ATTACK_CHUNK * pixels).zip(test.labels.chunks(ATTACK_CHUNK)) {
        adversarial.extend(fgm_attack_batch(
            &bundle.model,
            &bundle.patterns,
            bundle.alpha(),
            images,
            labels,
            &attack,
        )?);
    }
    accuracy_of(&predict(&bundle.model, &adversarial)?, &test.labels)
}

fn info(bundle: &ModelBundle, clean_accuracy: f64) -> ModelInfo {
    ModelInfo {
        alpha: bundle.alpha(),
        pattern_id: bundle.pattern_id.clone(),
        checkpoint: bundle.checkpoint.clone(),
        clean_accuracy,
    }
}

/// Accuracy against epsilon for a surrogate-trained and a plain model. A
/// plain model trained here shares the architecture, initial weights and
/// batch order of the surrogate model; only alpha differs.
pub fn cmd_eval_adv(cfg: &ExperimentConfig, out: &mut OutputDir, timings: &mut Timings) -> Result<AdvReport> {
    cfg.validate(CommandKind::EvalAdv)?;
    let section = cfg.adversarial.as_ref().expect("validated");
    let data = timings.time("load", || cfg.data.load(cfg.seed, "train"))?;
    let test = section.test.load(cfg.seed, "test")?;
    let mut warnings = Vec::new();
    let cusp = timings.time("train/cusp", || obtain_model(cfg, &data, "model", out))?;
    let plain = timings.time("train/plain", || match &section.plain_checkpoint {
        Some(path) => load_model(path),
        None => train_model_seeded(cfg, &data, 0.0, "plain", "model", out),
    })?;
    if cusp.alpha() == 0.0 {
        warnings.push("the surrogate model was trained with alpha 0".to_string());
    }
    if plain.alpha() != 0.0 {
        warnings.push(format!("the plain checkpoint was trained with alpha {}", plain.alpha()));
    }
    check_fits(&cusp, &test, "adversarial.test")?;
    check_fits(&plain, &test, "adversarial.test")?;
    if cusp.model.arch != plain.model.arch {
        return config("surrogate and plain checkpoints have different architectures");
    }

    let clean_cusp = accuracy_of(&predict(&cusp.model, &test.images)?, &test.labels)?;
    let clean_plain = accuracy_of(&predict(&plain.model, &test.images)?, &test.labels)?;
    let mut rows = Vec::with_capacity(section.epsilons.len());
    for &epsilon in &section.epsilons {
        let (cusp_accuracy, plain_accuracy) = timings.time(&format!("attack/{epsilon}"), || {
            Ok::<_, crate::error::HarnessError>((
                attacked_accuracy(&cusp, &test, epsilon)?,
                attacked_accuracy(&plain, &test, epsilon)?,
            ))
        })?;
        rows.push(AdvRow {
            epsilon,
            cusp_accuracy,
            plain_accuracy,
        });
    }
    let mut by_eps = rows.clone();
    by_eps.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    for w in by_eps.windows(2) {
        for (name, a, b) in [
            ("surrogate", w[0].cusp_accuracy, w[1].cusp_accuracy),
            ("plain", w[0].plain_accuracy, w[1].plain_accuracy),
        ] {
            if b > a {
                warnings.push(format!(
                    "{name} accuracy rises from {a} at epsilon {} to {b} at epsilon {}",
                    w[0].epsilon, w[1].epsilon
                ));
            }
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.epsilon.to_string(), r.cusp_accuracy.to_string(), r.plain_accuracy.to_string()])
        .collect();
    let table_file = out.write("adversarial.csv", csv(&["epsilon", "cusp_accuracy", "plain_accuracy"], &table).as_bytes())?;

    let report = AdvReport {
        command: CommandKind::EvalAdv.as_str(),
        config: cfg.clone(),
        train_data: DataSummary::of(&data),
        test_data: DataSummary::of(&test),
        cusp: info(&cusp, clean_cusp),
        plain: info(&plain, clean_plain),
        rows,
        table_file,
        warnings,
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}
