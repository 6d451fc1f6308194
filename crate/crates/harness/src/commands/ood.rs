use cusp_core::data::{split, Dataset, SplitKind};
use cusp_core::scoring::Domain;
use serde::Serialize;

use crate::config::{CommandKind, ExperimentConfig, OodMode};
use crate::error::{config, Result};
use crate::output::{csv, OutputDir, Timings};
use crate::pipeline::{
    accuracy_of, check_fits, obtain_model, predict, predicted_classes, registry, summarize, DataSummary,
    MethodSummary, ScoringSet,
};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Serialize)]
pub struct OodReport {
    pub command: &'static str,
    pub config: ExperimentConfig,
    pub mode: OodMode,
    pub train_data: DataSummary,
    pub in_data: DataSummary,
    pub out_data: DataSummary,
    /// Original class ids kept in-domain by a class split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_classes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_classes: Option<Vec<usize>>,
    pub pattern_id: String,
    pub checkpoint: Option<String>,
    pub in_accuracy: f64,
    /// Positive class: out-of-domain.
    pub methods: Vec<MethodSummary>,
    pub scores_file: String,
    pub dumps: Vec<String>,
}

struct Sets {
    train: Dataset,
    inside: Dataset,
    outside: Dataset,
    in_classes: Option<Vec<usize>>,
    out_classes: Option<Vec<usize>>,
    /// Whether out-of-domain labels are meaningful to the model.
    out_labels_valid: bool,
}

fn build_sets(cfg: &ExperimentConfig) -> Result<Sets> {
    let ood = cfg.ood.as_ref().expect("validated");
    let data = cfg.data.load(cfg.seed, "train")?;
    let test = ood.in_test.load(cfg.seed, "in-test")?;
    match ood.mode {
        OodMode::Datasets => {
            let outside = ood.out_test.as_ref().expect("validated").load(cfg.seed, "out-test")?;
            if outside.side != test.side {
                return config(format!(
                    "out-set images are {0}x{0}, in-set images are {1}x{1}",
                    outside.side, test.side
                ));
            }
            Ok(Sets {
                train: data,
                inside: test,
                outside,
                in_classes: None,
                out_classes: None,
                out_labels_valid: false,
            })
        }
        OodMode::ClassSplit => {
            let seed = derive_seed(cfg.seed, "class-split");
            let (plan, mut parts) = split(&data, SplitKind::ClassHalves, seed)?;
            let (test_plan, mut test_parts) = split(&test, SplitKind::ClassHalves, seed)?;
            if test_plan.in_classes != plan.in_classes {
                return config("training and test sets have different class counts");
            }
            let outside = test_parts.pop().expect("two parts");
            let inside = test_parts.pop().expect("two parts");
            parts.truncate(1);
            Ok(Sets {
                train: parts.pop().expect("in part"),
                inside,
                outside,
                in_classes: Some(plan.in_classes),
                out_classes: Some(plan.out_classes),
                out_labels_valid: false,
            })
        }
        OodMode::NullHalves => {
            let seed = derive_seed(cfg.seed, "null-halves");
            let (_, mut parts) = split(&test, SplitKind::TrainTest { test_fraction: 0.5 }, seed)?;
            let outside = parts.pop().expect("two parts");
            let inside = parts.pop().expect("two parts");
            Ok(Sets {
                train: data,
                inside,
                outside,
                in_classes: None,
                out_classes: None,
                out_labels_valid: true,
            })
        }
    }
}

pub fn cmd_eval_ood(cfg: &ExperimentConfig, out: &mut OutputDir, timings: &mut Timings) -> Result<OodReport> {
    cfg.validate(CommandKind::EvalOod)?;
    let ood = cfg.ood.as_ref().expect("validated");
    let sets = timings.time("load", || build_sets(cfg))?;
    let bundle = timings.time("train", || obtain_model(cfg, &sets.train, "model", out))?;
    check_fits(&bundle, &sets.inside, "in-set")?;
    if sets.outside.pixels() != bundle.model.input_len() {
        return config(format!(
            "out-set images have {} pixels, the model expects {}",
            sets.outside.pixels(),
            bundle.model.input_len()
        ));
    }
    if sets.out_labels_valid {
        check_fits(&bundle, &sets.outside, "out-set")?;
    }

    let n_in = sets.inside.len();
    let n_out = sets.outside.len();
    let mut images = sets.inside.images.clone();
    images.extend_from_slice(&sets.outside.images);
    let preds = timings.time("predict", || predict(&bundle.model, &images))?;
    let in_accuracy = accuracy_of(&preds[..n_in], &sets.inside.labels)?;
    let mut truths: Vec<Option<usize>> = sets.inside.labels.iter().copied().map(Some).collect();
    truths.extend(sets.outside.labels.iter().map(|&l| sets.out_labels_valid.then_some(l)));
    let mut domains = vec![Some(Domain::In); n_in];
    domains.extend(vec![Some(Domain::Out); n_out]);
    let positive: Vec<bool> = (0..n_in + n_out).map(|i| i >= n_in).collect();
    let scoring = ScoringSet {
        images: &images,
        pixels: sets.inside.pixels(),
        preds: &preds,
        truths,
        domains,
    };

    let registry = registry(cfg);
    let mut methods = Vec::with_capacity(cfg.methods.len());
    let mut columns = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let scores = timings.time(&format!("score/{method}"), || scoring.score(&registry, &bundle, method))?;
        methods.push(summarize(method, method.as_str(), &scores, &positive, out)?);
        columns.push(scores);
    }

    let predicted = predicted_classes(&preds);
    let mut header = vec!["index", "domain", "true_class", "predicted_class"];
    header.extend(cfg.methods.iter().map(|m| m.as_str()));
    let rows: Vec<Vec<String>> = (0..n_in + n_out)
        .map(|i| {
            let mut row = vec![
                i.to_string(),
                if positive[i] { "out" } else { "in" }.to_string(),
                scoring.truths[i].map_or(String::new(), |t| t.to_string()),
                predicted[i].to_string(),
            ];
            row.extend(columns.iter().map(|c| c[i].to_string()));
            row
        })
        .collect();
    let scores_file = out.write("scores.csv", csv(&header, &rows).as_bytes())?;

    let report = OodReport {
        command: CommandKind::EvalOod.as_str(),
        config: cfg.clone(),
        mode: ood.mode,
        train_data: DataSummary::of(&sets.train),
        in_data: DataSummary::of(&sets.inside),
        out_data: DataSummary::of(&sets.outside),
        in_classes: sets.in_classes,
        out_classes: sets.out_classes,
        pattern_id: bundle.pattern_id.clone(),
        checkpoint: bundle.checkpoint.clone(),
        in_accuracy,
        methods,
        scores_file,
        dumps: bundle.dumps.clone(),
    };
    out.write_json("report.json", &report)?;
    Ok(report)
}
