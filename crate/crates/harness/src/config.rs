//! Experiment configuration: one JSON document per run, echoed into every report.

use std::path::{Path, PathBuf};

use cusp_core::data::{load_idx, make_synthetic_with_outliers, Dataset};
use cusp_core::model::Arch;
use cusp_core::patterns::{generate, PatternKind, PatternSet};
use cusp_core::scoring::{DetectorConfig, Method, OdinConfig, OracleMode};
use cusp_core::train::{OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{config, HarnessError, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Train,
    EvalOod,
    EvalFlip,
    EvalAdv,
    EvalDetector,
    EvalCorrupt,
    DumpPatterns,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::EvalOod => "eval-ood",
            Self::EvalFlip => "eval-flip",
            Self::EvalAdv => "eval-adv",
            Self::EvalDetector => "eval-detector",
            Self::EvalCorrupt => "eval-corrupt",
            Self::DumpPatterns => "dump-patterns",
        }
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Bank symbols plus noise. Without an explicit seed, one is derived
    /// from the master seed and `role`.
    Synthetic {
        k: usize,
        side: usize,
        n_per_class: usize,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default)]
        outlier_fraction: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// IDX image and label files; `skip` then `limit` select a contiguous slice.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        skip: usize,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DataSource {
    pub fn load(&self, master: u64, role: &str) -> Result<Dataset> {
        match self {
            Self::Synthetic {
                k,
                side,
                n_per_class,
                noise_sigma,
                outlier_fraction,
                seed,
            } => {
                let seed = seed.unwrap_or_else(|| derive_seed(master, &format!("data/{role}")));
                Ok(make_synthetic_with_outliers(
                    *k,
                    *side,
                    *n_per_class,
                    *noise_sigma,
                    *outlier_fraction,
                    seed,
                )?)
            }
            Self::Idx {
                images,
                labels,
                skip,
                limit,
            } => {
                let all = load_idx(images, labels)?;
                if *skip >= all.len() {
                    return config(format!("skip {skip} leaves no samples of {}", all.len()));
                }
                let end = limit.map_or(all.len(), |l| (skip + l).min(all.len()));
                let indices: Vec<usize> = (*skip..end).collect();
                let mut slice = all.subset(&indices);
                slice.provenance = format!("{}[{skip}..{end}]", all.provenance);
                Ok(slice)
            }
        }
    }

    fn check_files(&self, field: &str) -> Result<()> {
        if let Self::Idx { images, labels, .. } = self {
            require_file(images, &format!("{field}.images"))?;
            require_file(labels, &format!("{field}.labels"))?;
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        if let Self::Idx { images, labels, .. } = self {
            *images = resolve_path(base, images);
            *labels = resolve_path(base, labels);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternSection {
    pub kind: PatternKind,
    pub side: usize,
    /// Per-class P1 bitmaps, required for `custom`.
    pub files: Vec<PathBuf>,
}

impl Default for PatternSection {
    fn default() -> Self {
        Self {
            kind: PatternKind::Glyph,
            side: 16,
            files: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Arch,
    pub patterns: PatternSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: Arch::SmallConv,
            patterns: PatternSection::default(),
        }
    }
}

impl ModelSection {
    pub fn build_patterns(&self, k: usize, master: u64) -> Result<PatternSet> {
        let p = &self.patterns;
        let set = match p.kind {
            PatternKind::Custom => PatternSet::from_files(&p.files)?,
            kind => generate(kind, k, p.side, derive_seed(master, "patterns"))?,
        };
        if set.k() != k {
            return config(format!("{} patterns for {k} classes", set.k()));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Reconstruction dumps every this many epochs (0 disables them).
    pub dump_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epochs: 15,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            dump_every: 1,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, master: u64, role: &str) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: derive_seed(master, &format!("train/{role}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodMode {
    /// `in_test` against a different dataset `out_test`.
    Datasets,
    /// Half the classes of the training data are held out as out-of-domain.
    ClassSplit,
    /// `in_test` split randomly in two halves labeled in and out.
    NullHalves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSection {
    pub mode: OodMode,
    pub in_test: DataSource,
    #[serde(default)]
    pub out_test: Option<DataSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipSection {
    pub pairs: Vec<(usize, usize)>,
    pub rate: f64,
    /// With `rate` 0: mask this fraction of eligible samples without flipping
    /// them, as a placebo group for the null comparison.
    #[serde(default)]
    pub placebo_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvSection {
    pub epsilons: Vec<f64>,
    pub test: DataSource,
    /// Plain (alpha 0) checkpoint; trained from `data` when absent.
    #[serde(default)]
    pub plain_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSection {
    pub test: DataSource,
    #[serde(default)]
    pub rotations: Vec<f64>,
    #[serde(default)]
    pub noise_sigmas: Vec<f64>,
    /// Erasing patch side as a fraction of the image side.
    #[serde(default)]
    pub erase_fractions: Vec<f64>,
    #[serde(default = "default_erase_count")]
    pub erase_count: usize,
}

fn default_erase_count() -> usize {
    1
}

pub fn default_methods() -> Vec<Method> {
    Method::ALL.iter().copied().filter(|&m| m != Method::Detector).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When set, must name the command being run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<CommandKind>,
    #[serde(default)]
    pub seed: u64,
    /// Not echoed: the output location does not change any result.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    /// Reuse this checkpoint instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub odin: OdinConfig,
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip: Option<FlipSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<AdvSection>,
    /// Its `seed` is replaced by one derived from the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionSection>,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(path: &Path, field: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(HarnessError::MissingFile {
            path: path.to_path_buf(),
            field: field.to_string(),
        })
    }
}

impl ExperimentConfig {
    /// Parses a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| HarnessError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| HarnessError::ConfigParse {
            path: PathBuf::from("<inline>"),
            source,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve(base);
        if let Some(c) = &mut self.checkpoint {
            *c = resolve_path(base, c);
        }
        if let Some(dir) = &mut self.output_dir {
            *dir = resolve_path(base, dir);
        }
        for f in &mut self.model.patterns.files {
            *f = resolve_path(base, f);
        }
        if let Some(ood) = &mut self.ood {
            ood.in_test.resolve(base);
            if let Some(out) = &mut ood.out_test {
                out.resolve(base);
            }
        }
        if let Some(adv) = &mut self.adversarial {
            adv.test.resolve(base);
            if let Some(p) = &mut adv.plain_checkpoint {
                *p = resolve_path(base, p);
            }
        }
        if let Some(c) = &mut self.corruption {
            c.test.resolve(base);
        }
    }

    /// Checks the parts `command` needs, including that referenced files exist.
    pub fn validate(&self, command: CommandKind) -> Result<()> {
        if let Some(kind) = self.experiment {
            if kind != command {
                return Err(HarnessError::Usage(format!(
                    "config is for `{}` but `{}` was run",
                    kind.as_str(),
                    command.as_str()
                )));
            }
        }
        self.data.check_files("data")?;
        if let Some(c) = &self.checkpoint {
            require_file(c, "checkpoint")?;
        }
        let t = &self.train;
        if !(t.alpha >= 0.0 && t.alpha.is_finite()) {
            return config(format!("train.alpha must be a finite value >= 0, got {}", t.alpha));
        }
        if t.epochs == 0 || t.batch_size == 0 || !(t.learning_rate > 0.0) {
            return config("train.epochs, train.batch_size and train.learning_rate must be positive");
        }
        if self.model.patterns.kind == PatternKind::Custom {
            if self.model.patterns.files.is_empty() {
                return config("custom patterns need model.patterns.files");
            }
            for (i, f) in self.model.patterns.files.iter().enumerate() {
                require_file(f, &format!("model.patterns.files[{i}]"))?;
            }
        }
        if self.methods.is_empty() {
            return config("methods must list at least one scoring method");
        }
        match command {
            CommandKind::EvalOod => {
                let ood = self.ood.as_ref().ok_or_else(|| HarnessError::Config("eval-ood needs an `ood` section".into()))?;
                ood.in_test.check_files("ood.in_test")?;
                match (ood.mode, &ood.out_test) {
                    (OodMode::Datasets, None) => return config("ood mode `datasets` needs `ood.out_test`"),
                    (OodMode::Datasets, Some(out)) => out.check_files("ood.out_test")?,
                    (_, Some(_)) => return config("`ood.out_test` is only used by mode `datasets`"),
                    (_, None) => {}
                }
                if self.methods.contains(&Method::Detector) {
                    return config("detector scores come from eval-detector");
                }
            }
            CommandKind::EvalFlip => {
                let flip = self.flip.as_ref().ok_or_else(|| HarnessError::Config("eval-flip needs a `flip` section".into()))?;
                if !(0.0..=1.0).contains(&flip.placebo_rate) {
                    return config("flip.placebo_rate must lie in [0,1]");
                }
                if flip.rate > 0.0 && flip.placebo_rate > 0.0 {
                    return config("flip.placebo_rate applies only when flip.rate is 0");
                }
                if self.checkpoint.is_some() {
                    return config("eval-flip trains on flipped labels and cannot reuse a checkpoint");
                }
                if self.methods.contains(&Method::Detector) {
                    return config("detector scores come from eval-detector");
                }
            }
            CommandKind::EvalAdv => {
                let adv = self
                    .adversarial
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("eval-adv needs an `adversarial` section".into()))?;
                adv.test.check_files("adversarial.test")?;
                if let Some(p) = &adv.plain_checkpoint {
                    require_file(p, "adversarial.plain_checkpoint")?;
                }
                if adv.epsilons.is_empty() || adv.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                    return config("adversarial.epsilons must be a nonempty list of finite values >= 0");
                }
            }
            CommandKind::EvalCorrupt => {
                let c = self
                    .corruption
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("eval-corrupt needs a `corruption` section".into()))?;
                c.test.check_files("corruption.test")?;
            }
            CommandKind::DumpPatterns => {
                if self.checkpoint.is_none() {
                    return config("dump-patterns needs `checkpoint`");
                }
            }
            CommandKind::Train | CommandKind::EvalDetector => {}
        }
        Ok(())
    }

    pub fn detector_config(&self) -> DetectorConfig {
        let mut cfg = self.detector.clone().unwrap_or_default();
        cfg.seed = derive_seed(self.seed, "detector");
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"data": {"source": "synthetic", "k": 4, "side": 16, "n_per_class": 5}}"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.model.arch, Arch::SmallConv);
        assert_eq!(cfg.train.alpha, 0.5);
        assert_eq!(cfg.methods.len(), 9);
        assert!(!cfg.methods.contains(&Method::Detector));
        cfg.validate(CommandKind::Train).unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"data": {"source": "synthetic", "k": 4, "side": 16, "n_per_class": 5}, "sede": 3}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(HarnessError::ConfigParse { .. })));
    }

    #[test]
    fn missing_idx_file_is_reported_with_its_field() {
        let text = r#"{"data": {"source": "idx", "images": "/nonexistent/a", "labels": "/nonexistent/b"}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        match cfg.validate(CommandKind::Train) {
            Err(HarnessError::MissingFile { field, .. }) => assert_eq!(field, "data.images"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn command_sections_are_required() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        for kind in [CommandKind::EvalOod, CommandKind::EvalFlip, CommandKind::EvalAdv, CommandKind::DumpPatterns] {
            assert!(matches!(cfg.validate(kind), Err(HarnessError::Config(_))), "{kind:?}");
        }
        let mut tagged = cfg.clone();
        tagged.experiment = Some(CommandKind::EvalOod);
        assert!(matches!(tagged.validate(CommandKind::Train), Err(HarnessError::Usage(_))));
    }

    #[test]
    fn echo_omits_output_dir_and_round_trips() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.output_dir = Some(PathBuf::from("/tmp/somewhere"));
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(!text.contains("somewhere"));
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.output_dir, None);
        assert_eq!(back.train, cfg.train);
    }

    #[test]
    fn synthetic_seed_derives_from_master_and_role() {
        let text = r#"{"data": {"source": "synthetic", "k": 4, "side": 8, "n_per_class": 3, "noise_sigma": 0.2}}"#;
        let src = ExperimentConfig::from_json(text).unwrap().data;
        let a = src.load(1, "train").unwrap();
        assert_eq!(a, src.load(1, "train").unwrap());
        assert_ne!(a.images, src.load(2, "train").unwrap().images);
        assert_ne!(a.images, src.load(1, "test").unwrap().images);
    }
}
