//! Grayscale datasets: IDX ingestion, the synthetic symbol dataset, and
//! seeded experiment splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{config, Result};
use crate::patterns::{bank_size, render_symbol, symbol_name};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad IDX magic in {file}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("truncated IDX {file}: need {expected} bytes, have {found}")]
    Truncated {
        file: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("unsupported IDX dimensions: {0}")]
    Dimensions(String),
}

/// N square grayscale images in [0,1] with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub side: usize,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        side: usize,
        images: Vec<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let pixels = side * side;
        if pixels == 0 || images.len() != labels.len() * pixels {
            return config(format!(
                "{} pixels do not make {} images of side {side}",
                images.len(),
                labels.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return config(format!("label {bad} outside {} classes", class_names.len()));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return config("pixel values must lie in [0,1]");
        }
        Ok(Self {
            side,
            images,
            labels,
            class_names,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.pixels()..(i + 1) * self.pixels()]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.pixels());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            side: self.side,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// The first `n` samples (or all, when fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            self.side,
            self.images.clone(),
            labels,
            self.class_names.clone(),
            self.provenance.clone(),
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_u32(bytes: &[u8], offset: usize, file: &'static str) -> std::result::Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            file,
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses IDX image and label byte buffers; pixels become `byte / 255`.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8], provenance: &str) -> Result<Dataset> {
    let magic = read_u32(image_bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            file: "images",
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        }
        .into());
    }
    let magic = read_u32(label_bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            file: "labels",
            expected: IDX_LABELS_MAGIC,
            found: magic,
        }
        .into());
    }
    let n = read_u32(image_bytes, 4, "images")? as usize;
    let rows = read_u32(image_bytes, 8, "images")? as usize;
    let cols = read_u32(image_bytes, 12, "images")? as usize;
    if rows != cols || rows == 0 {
        return Err(IdxError::Dimensions(format!("images are {rows}x{cols}, need square")).into());
    }
    let n_labels = read_u32(label_bytes, 4, "labels")? as usize;
    if n_labels != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: n_labels,
        }
        .into());
    }
    let need = 16 + n * rows * cols;
    if image_bytes.len() < need {
        return Err(IdxError::Truncated {
            file: "images",
            expected: need,
            found: image_bytes.len(),
        }
        .into());
    }
    if label_bytes.len() < 8 + n {
        return Err(IdxError::Truncated {
            file: "labels",
            expected: 8 + n,
            found: label_bytes.len(),
        }
        .into());
    }
    let images = image_bytes[16..need].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = label_bytes[8..8 + n].iter().map(|&b| usize::from(b)).collect();
    let k = labels.iter().max().map_or(1, |&m| m + 1).max(2);
    let class_names = (0..k).map(|c| c.to_string()).collect();
    Dataset::new(rows, images, labels, class_names, provenance)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels, &images_path.display().to_string())
}

/// IDX encodings (images, labels) of a dataset, quantizing pixels to bytes.
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if dataset.k() > 256 {
        return config("IDX labels are single bytes");
    }
    let n = dataset.len() as u32;
    let side = dataset.side as u32;
    let mut images = Vec::with_capacity(16 + dataset.images.len());
    for v in [IDX_IMAGES_MAGIC, n, side, side] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(dataset.images.iter().map(|&v| (v * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS_MAGIC, n] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    labels.extend(dataset.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

pub fn save_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = encode_idx(dataset)?;
    std::fs::write(images_path, images)?;
    std::fs::write(labels_path, labels)?;
    Ok(())
}

/// Class `k` images are bank symbol `k` plus clamped Gaussian noise.
/// Sample `i` belongs to class `i % K`.
pub fn make_synthetic(
    k: usize,
    side: usize,
    n_per_class: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    make_synthetic_with_outliers(k, side, n_per_class, noise_sigma, 0.0, seed)
}

/// Like [`make_synthetic`], but each sample is, with probability
/// `outlier_fraction`, replaced by uniform noise that keeps its label. Such
/// samples carry no class information, so a classifier is right on them only
/// by chance.
pub fn make_synthetic_with_outliers(
    k: usize,
    side: usize,
    n_per_class: usize,
    noise_sigma: f64,
    outlier_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&outlier_fraction) {
        return config(format!("outlier fraction {outlier_fraction} outside [0,1]"));
    }
    if k < 2 || k > bank_size() {
        return config(format!("synthetic sets support 2..={} classes, got {k}", bank_size()));
    }
    if noise_sigma < 0.0 {
        return config("noise sigma must be non-negative");
    }
    let templates: Vec<Vec<u8>> = (0..k).map(|c| render_symbol(c, side)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let n = k * n_per_class;
    let mut images = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        labels.push(class);
        for &bit in &templates[class] {
            let noise = if noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            images.push((f64::from(bit) + noise).clamp(0.0, 1.0));
        }
    }
    let mut provenance =
        format!("synthetic(k={k},side={side},n={n_per_class},sigma={noise_sigma},seed={seed})");
    if outlier_fraction > 0.0 {
        let mut outliers = ChaCha8Rng::seed_from_u64(seed);
        outliers.set_stream(1);
        for image in images.chunks_mut(side * side) {
            if outliers.gen_bool(outlier_fraction) {
                image.iter_mut().for_each(|v| *v = outliers.gen_range(0.0..1.0));
            }
        }
        provenance = format!("{provenance}+outliers({outlier_fraction})");
    }
    let names = (0..k).map(|c| symbol_name(c).to_string()).collect();
    Dataset::new(side, images, labels, names, provenance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    /// 10/12, 1/12, 1/12 of a shuffle; remainders go to the first part.
    #[serde(rename = "ratio-10-1-1")]
    Ratio10To1To1,
    /// Half the classes in-domain (relabeled), half held out.
    #[serde(rename = "class-5v5")]
    ClassHalves,
    /// Shuffled two-way split with the given test fraction.
    TrainTest { test_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    pub parts: Vec<Vec<usize>>,
    /// For class splits: original class ids of the in-domain part, whose
    /// position is the new label.
    pub in_classes: Vec<usize>,
    pub out_classes: Vec<usize>,
}

/// Splits a dataset. Ratio and train-test splits return their parts in
/// order; the class split returns `[in-domain (relabeled), out-of-domain]`.
pub fn split(dataset: &Dataset, kind: SplitKind, seed: u64) -> Result<(SplitPlan, Vec<Dataset>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dataset.len();
    match kind {
        SplitKind::Ratio10To1To1 => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let small = n / 12;
            let first = n - 2 * small;
            let parts = vec![
                idx[..first].to_vec(),
                idx[first..first + small].to_vec(),
                idx[first + small..].to_vec(),
            ];
            let subsets = parts.iter().map(|p| dataset.subset(p)).collect();
            Ok((
                SplitPlan {
                    kind,
                    seed,
                    parts,
                    in_classes: Vec::new(),
                    out_classes: Vec::new(),
                },
                subsets,
            ))
        }
        SplitKind::TrainTest { test_fraction } => {
            if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
                return config(format!("test fraction {test_fraction} outside (0,1)"));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let test = ((n as f64) * test_fraction).round() as usize;
            let parts = vec![idx[..n - test].to_vec(), idx[n - test..].to_vec()];
            let subsets = parts.iter().map(|p| dataset.subset(p)).collect();
            Ok((
                SplitPlan {
                    kind,
                    seed,
                    parts,
                    in_classes: Vec::new(),
                    out_classes: Vec::new(),
                },
                subsets,
            ))
        }
        SplitKind::ClassHalves => {
            let k = dataset.k();
            if k < 2 || k % 2 != 0 {
                return config(format!("class halves need an even class count, got {k}"));
            }
            let mut classes: Vec<usize> = (0..k).collect();
            classes.shuffle(&mut rng);
            let mut in_classes = classes[..k / 2].to_vec();
            let mut out_classes = classes[k / 2..].to_vec();
            in_classes.sort_unstable();
            out_classes.sort_unstable();
            let mut relabel = vec![None; k];
            for (new, &old) in in_classes.iter().enumerate() {
                relabel[old] = Some(new);
            }
            let (inside, outside): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| relabel[dataset.labels[i]].is_some());
            let mut in_set = dataset.subset(&inside);
            in_set.labels = in_set
                .labels
                .iter()
                .map(|&l| relabel[l].expect("in-domain label"))
                .collect();
            in_set.class_names = in_classes
                .iter()
                .map(|&c| dataset.class_names[c].clone())
                .collect();
            let out_set = dataset.subset(&outside);
            Ok((
                SplitPlan {
                    kind,
                    seed,
                    parts: vec![inside, outside],
                    in_classes,
                    out_classes,
                },
                vec![in_set, out_set],
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn tiny_idx(n: usize, labels_n: usize) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n as u32, 2, 2] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        for i in 0..n {
            img.extend_from_slice(&[0, 255, (i * 10) as u8, 128]);
        }
        let mut lab = Vec::new();
        for v in [IDX_LABELS_MAGIC, labels_n as u32] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        lab.extend((0..labels_n).map(|i| (i % 3) as u8));
        (img, lab)
    }

    #[test]
    fn magic_bytes_are_fixed() {
        assert_eq!(IDX_IMAGES_MAGIC.to_be_bytes(), [0, 0, 8, 3]);
        assert_eq!(IDX_LABELS_MAGIC.to_be_bytes(), [0, 0, 8, 1]);
    }

    #[test]
    fn parses_and_scales() {
        let (img, lab) = tiny_idx(3, 3);
        let d = parse_idx(&img, &lab, "t").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.image(0)[0], 0.0);
        assert_eq!(d.image(0)[1], 1.0);
        assert_eq!(d.labels, vec![0, 1, 2]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let (img, lab) = tiny_idx(3, 2);
        assert!(matches!(
            parse_idx(&img, &lab, "t"),
            Err(Error::Idx(IdxError::CountMismatch { images: 3, labels: 2 }))
        ));
        let (mut img, lab) = tiny_idx(3, 3);
        img[3] = 4;
        assert!(matches!(parse_idx(&img, &lab, "t"), Err(Error::Idx(IdxError::BadMagic { .. }))));
        let (img, lab) = tiny_idx(3, 3);
        assert!(matches!(
            parse_idx(&img[..20], &lab, "t"),
            Err(Error::Idx(IdxError::Truncated { .. }))
        ));
        assert!(matches!(parse_idx(&img, &lab[..9], "t"), Err(Error::Idx(IdxError::Truncated { .. }))));
    }

    #[test]
    fn idx_roundtrip_is_value_identical() {
        let (img, lab) = tiny_idx(4, 4);
        let d = parse_idx(&img, &lab, "t").unwrap();
        let (img2, lab2) = encode_idx(&d).unwrap();
        assert_eq!(parse_idx(&img2, &lab2, "t").unwrap(), d);
    }

    #[test]
    fn synthetic_shapes_and_noise() {
        let d = make_synthetic(4, 8, 50, 0.0, 1).unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(d.class_counts(), vec![50; 4]);
        assert_eq!(d.image(0), d.image(4));
        let noisy = make_synthetic(4, 8, 5, 0.2, 1).unwrap();
        assert_ne!(noisy.image(0), noisy.image(4));
        assert_eq!(noisy, make_synthetic(4, 8, 5, 0.2, 1).unwrap());
        assert!(noisy.images.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ratio_split_sizes() {
        let d = make_synthetic(4, 4, 300, 0.0, 0).unwrap();
        let (plan, parts) = split(&d, SplitKind::Ratio10To1To1, 9).unwrap();
        assert_eq!(parts.iter().map(Dataset::len).collect::<Vec<_>>(), vec![1000, 100, 100]);
        let mut all: Vec<usize> = plan.parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1200).collect::<Vec<_>>());
        let (again, _) = split(&d, SplitKind::Ratio10To1To1, 9).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn class_split_partitions_and_relabels() {
        let d = make_synthetic(10, 4, 3, 0.0, 0).unwrap();
        let (plan, parts) = split(&d, SplitKind::ClassHalves, 4).unwrap();
        assert_eq!(plan.in_classes.len(), 5);
        assert_eq!(plan.out_classes.len(), 5);
        assert!(plan.in_classes.iter().all(|c| !plan.out_classes.contains(c)));
        assert!(parts[0].labels.iter().all(|&l| l < 5));
        for (pos, &orig) in plan.parts[0].iter().enumerate() {
            assert_eq!(plan.in_classes[parts[0].labels[pos]], d.labels[orig]);
        }
        assert_eq!(parts[0].len() + parts[1].len(), d.len());
        let odd = make_synthetic(3, 4, 2, 0.0, 0).unwrap();
        assert!(split(&odd, SplitKind::ClassHalves, 0).is_err());
    }
}
