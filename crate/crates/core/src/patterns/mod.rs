//! Class-specific binary surrogate patterns.

mod glyphs;
mod pnm;
mod symbols;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

pub use glyphs::{render_digit, GLYPH_SIDE};
pub use pnm::{encode_pgm, format_p1, parse_p1, write_pgm, PnmError};
pub use symbols::{bank_size, render_symbol, symbol_name};

/// Retries per random fill pattern before symbol generation gives up.
pub const SYMBOL_RETRIES: usize = 1000;

/// A `side x side` bitmap of 0/1 values assigned to one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub side: usize,
    pub bits: Vec<u8>,
    pub class_id: usize,
}

impl Pattern {
    pub fn new(side: usize, bits: Vec<u8>, class_id: usize) -> Result<Self> {
        if bits.len() != side * side {
            return config(format!(
                "pattern of side {side} needs {} bits, got {}",
                side * side,
                bits.len()
            ));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return config(format!("pattern bit {b} is not 0 or 1"));
        }
        Ok(Self { side, bits, class_id })
    }

    pub fn m(&self) -> usize {
        self.bits.len()
    }

    pub fn bright_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn dot(&self, other: &Pattern) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a == 1 && **b == 1).count()
    }

    pub fn hamming(&self, other: &Pattern) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Bits as `f64` targets.
    pub fn targets(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }

    /// Reads a square P1 bitmap.
    pub fn load(path: &Path, class_id: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, class_id)
    }

    pub fn parse(text: &str, class_id: usize) -> Result<Self> {
        let (width, height, bits) = parse_p1(text)?;
        if width != height {
            return Err(PnmError::NonSquare { width, height }.into());
        }
        Ok(Self {
            side: width,
            bits,
            class_id,
        })
    }

    pub fn to_p1(&self) -> String {
        format_p1(self.side, &self.bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_p1())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Orthogonal,
    Glyph,
    Symbol,
    Custom,
}

impl std::str::FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal" => Ok(Self::Orthogonal),
            "glyph" => Ok(Self::Glyph),
            "symbol" => Ok(Self::Symbol),
            "custom" => Ok(Self::Custom),
            other => config(format!("unknown pattern kind '{other}'")),
        }
    }
}

/// One pattern per class `0..K`, all of the same size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSet {
    pub kind: PatternKind,
    patterns: Vec<Pattern>,
}

/// Dot products between every pair of patterns and per-pattern density.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseStats {
    pub dot: Vec<Vec<usize>>,
    pub density: Vec<f64>,
}

impl PatternSet {
    /// Validates the set: classes `0..K` in order, uniform side, binary
    /// bits, and zero overlap when `kind` is orthogonal.
    pub fn new(kind: PatternKind, patterns: Vec<Pattern>) -> Result<Self> {
        if patterns.is_empty() {
            return config("pattern set is empty");
        }
        let side = patterns[0].side;
        for (k, p) in patterns.iter().enumerate() {
            if p.class_id != k {
                return config(format!("pattern {k} carries class id {}", p.class_id));
            }
            if p.side != side || p.bits.len() != side * side {
                return config(format!("pattern {k} has side {} instead of {side}", p.side));
            }
            if p.bits.iter().any(|&b| b > 1) {
                return config(format!("pattern {k} has a non-binary bit"));
            }
        }
        let set = Self { kind, patterns };
        if kind == PatternKind::Orthogonal && !set.is_orthogonal() {
            return config("orthogonal pattern set has overlapping supports");
        }
        Ok(set)
    }

    pub fn k(&self) -> usize {
        self.patterns.len()
    }

    pub fn side(&self) -> usize {
        self.patterns[0].side
    }

    pub fn m(&self) -> usize {
        self.patterns[0].m()
    }

    pub fn get(&self, class: usize) -> Option<&Pattern> {
        self.patterns.get(class)
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn is_orthogonal(&self) -> bool {
        self.patterns.iter().enumerate().all(|(i, a)| {
            self.patterns[i + 1..].iter().all(|b| a.dot(b) == 0)
        })
    }

    pub fn pairwise_stats(&self) -> PairwiseStats {
        let dot = self
            .patterns
            .iter()
            .map(|a| self.patterns.iter().map(|b| a.dot(b)).collect())
            .collect();
        let density = self
            .patterns
            .iter()
            .map(|p| p.bright_count() as f64 / p.m() as f64)
            .collect();
        PairwiseStats { dot, density }
    }

    pub fn min_hamming(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, a) in self.patterns.iter().enumerate() {
            for b in &self.patterns[i + 1..] {
                let h = a.hamming(b);
                best = Some(best.map_or(h, |v| v.min(h)));
            }
        }
        best
    }

    /// Packs all K*m bits, MSB first, zero-padded to whole bytes.
    pub fn pack_bits(&self) -> Vec<u8> {
        let bits: Vec<u8> = self.patterns.iter().flat_map(|p| p.bits.iter().copied()).collect();
        bits.chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)))
            })
            .collect()
    }

    pub fn unpack_bits(kind: PatternKind, k: usize, side: usize, packed: &[u8]) -> Result<Self> {
        let total = k * side * side;
        if packed.len() != total.div_ceil(8) {
            return config(format!(
                "packed pattern blob has {} bytes, expected {}",
                packed.len(),
                total.div_ceil(8)
            ));
        }
        let bits: Vec<u8> = (0..total).map(|i| (packed[i / 8] >> (7 - i % 8)) & 1).collect();
        let patterns = bits
            .chunks(side * side)
            .enumerate()
            .map(|(c, b)| Pattern {
                side,
                bits: b.to_vec(),
                class_id: c,
            })
            .collect();
        Self::new(kind, patterns)
    }

    /// Loads one P1 file per class, in class order.
    pub fn from_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let patterns = paths
            .iter()
            .enumerate()
            .map(|(k, p)| Pattern::load(p.as_ref(), k))
            .collect::<Result<Vec<_>>>()?;
        Self::new(PatternKind::Custom, patterns)
    }
}

fn square_side(side: usize) -> Result<usize> {
    if side == 0 {
        return config("pattern side must be positive");
    }
    Ok(side * side)
}

/// Disjoint index blocks: class `k` lights `[k*m/K, (k+1)*m/K)`.
pub fn gen_orthogonal(k: usize, side: usize) -> Result<PatternSet> {
    let m = square_side(side)?;
    if k == 0 || k > m {
        return config(format!("cannot place {k} orthogonal patterns in {m} pixels"));
    }
    if m % k != 0 {
        return config(format!("m={m} is not divisible by K={k}"));
    }
    let block = m / k;
    let patterns = (0..k)
        .map(|c| {
            let bits = (0..m).map(|i| u8::from(i / block == c)).collect();
            Pattern {
                side,
                bits,
                class_id: c,
            }
        })
        .collect();
    PatternSet::new(PatternKind::Orthogonal, patterns)
}

/// Decimal digit glyphs `0..K` resampled to `side x side`.
pub fn gen_glyph_digits(k: usize, side: usize) -> Result<PatternSet> {
    if k > 10 {
        return config(format!("only 10 digit glyphs exist, asked for {k}"));
    }
    if side < 8 {
        return config(format!("digit glyphs need side >= 8, got {side}"));
    }
    let patterns = (0..k)
        .map(|c| Pattern {
            side,
            bits: render_digit(c, side),
            class_id: c,
        })
        .collect();
    PatternSet::new(PatternKind::Glyph, patterns)
}

/// Bank symbols, topped up with seeded random 50%-density patterns, with
/// every pairwise Hamming distance at least `m/8`.
pub fn gen_symbols(k: usize, side: usize, seed: u64) -> Result<PatternSet> {
    let m = square_side(side)?;
    gen_symbols_with_separation(k, side, seed, m.div_ceil(8))
}

pub fn gen_symbols_with_separation(
    k: usize,
    side: usize,
    seed: u64,
    min_separation: usize,
) -> Result<PatternSet> {
    let m = square_side(side)?;
    if k < 2 {
        return config(format!("symbol sets need K >= 2, got {k}"));
    }
    let far_enough =
        |cand: &[u8], chosen: &[Pattern]| chosen.iter().all(|p| {
            p.bits.iter().zip(cand).filter(|(a, b)| a != b).count() >= min_separation
        });
    let mut chosen: Vec<Pattern> = Vec::with_capacity(k);
    for c in 0..k.min(bank_size()) {
        let bits = render_symbol(c, side);
        if !far_enough(&bits, &chosen) {
            return Err(Error::Generation(format!(
                "bank symbol '{}' is within {min_separation} pixels of another symbol at side {side}",
                symbol_name(c)
            )));
        }
        chosen.push(Pattern {
            side,
            bits,
            class_id: c,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in bank_size()..k {
        let mut attempt = 0;
        let bits = loop {
            if attempt == SYMBOL_RETRIES {
                return Err(Error::Generation(format!(
                    "no pattern {min_separation} pixels away from the others after {SYMBOL_RETRIES} retries (class {c})"
                )));
            }
            attempt += 1;
            let cand: Vec<u8> = (0..m).map(|_| u8::from(rng.gen_bool(0.5))).collect();
            if far_enough(&cand, &chosen) {
                break cand;
            }
        };
        chosen.push(Pattern {
            side,
            bits,
            class_id: c,
        });
    }
    PatternSet::new(PatternKind::Symbol, chosen)
}

/// Dispatches to the generator for `kind`; custom sets come from files.
pub fn generate(kind: PatternKind, k: usize, side: usize, seed: u64) -> Result<PatternSet> {
    match kind {
        PatternKind::Orthogonal => gen_orthogonal(k, side),
        PatternKind::Glyph => gen_glyph_digits(k, side),
        PatternKind::Symbol => gen_symbols(k, side, seed),
        PatternKind::Custom => config("custom pattern sets are loaded from files"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_k4_side4() {
        let set = gen_orthogonal(4, 4).unwrap();
        for p in set.patterns() {
            assert_eq!(p.bright_count(), 4);
        }
        let stats = set.pairwise_stats();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(stats.dot[i][j], if i == j { 4 } else { 0 });
            }
        }
        assert_eq!(&set.get(1).unwrap().bits[4..8], &[1, 1, 1, 1]);
    }

    #[test]
    fn orthogonal_divisibility_gate() {
        assert!(matches!(gen_orthogonal(10, 16), Err(Error::Config(_))));
        assert!(gen_orthogonal(10, 20).is_ok());
    }

    #[test]
    fn orthogonal_many_classes_are_sparse() {
        let set = gen_orthogonal(100, 20).unwrap();
        assert!(set.patterns().iter().all(|p| p.bright_count() == 4));
        assert!((set.pairwise_stats().density[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn glyphs_distinct_and_deterministic() {
        for side in [8, 12, 16, 20, 28] {
            let set = gen_glyph_digits(10, side).unwrap();
            assert!(set.min_hamming().unwrap() > 0, "side {side}");
            assert_eq!(set, gen_glyph_digits(10, side).unwrap());
        }
    }

    #[test]
    fn glyph_eight_and_three_overlap() {
        let set = gen_glyph_digits(10, 16).unwrap();
        let (three, eight) = (set.get(3).unwrap(), set.get(8).unwrap());
        assert!(three.hamming(eight) > 0);
        assert!(three.dot(eight) > 0);
        let stats = set.pairwise_stats();
        assert!((0..10).any(|i| (0..10).any(|j| i != j && stats.dot[i][j] > 0)));
    }

    #[test]
    fn glyph_gates() {
        assert!(gen_glyph_digits(11, 16).is_err());
        assert!(gen_glyph_digits(10, 7).is_err());
    }

    #[test]
    fn symbols_respect_separation() {
        let set = gen_symbols(4, 16, 0).unwrap();
        assert!(set.min_hamming().unwrap() >= 32);
        let (cross, square) = (set.get(0).unwrap(), set.get(1).unwrap());
        assert!(cross.hamming(square) > 0 && cross.dot(square) > 0);
        for side in [8, 12, 16, 20, 28] {
            let m = side * side;
            let bank = gen_symbols(bank_size(), side, 0).unwrap();
            assert!(8 * bank.min_hamming().unwrap() >= m, "side {side}");
        }
    }

    #[test]
    fn symbols_fill_is_seeded() {
        let a = gen_symbols(40, 16, 7).unwrap();
        assert_eq!(a, gen_symbols(40, 16, 7).unwrap());
        assert_ne!(a, gen_symbols(40, 16, 8).unwrap());
        assert!(a.min_hamming().unwrap() >= 32);
    }

    #[test]
    fn symbols_error_when_separation_unreachable() {
        assert!(matches!(
            gen_symbols_with_separation(20, 16, 1, 256),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn duplicated_pattern_dot_is_bright_count() {
        let p = gen_glyph_digits(10, 16).unwrap().get(4).unwrap().clone();
        assert_eq!(p.dot(&p), p.bright_count());
    }

    #[test]
    fn non_square_file_rejected() {
        let err = Pattern::parse("P1\n3 2\n0 0 0\n1 1 1\n", 0).unwrap_err();
        assert!(matches!(err, Error::Pnm(PnmError::NonSquare { width: 3, height: 2 })));
    }

    #[test]
    fn set_validation() {
        let p = |c| Pattern {
            side: 2,
            bits: vec![1, 0, 0, 0],
            class_id: c,
        };
        assert!(PatternSet::new(PatternKind::Orthogonal, vec![p(0), p(1)]).is_err());
        assert!(PatternSet::new(PatternKind::Custom, vec![p(0), p(1)]).is_ok());
        assert!(PatternSet::new(PatternKind::Custom, vec![p(1)]).is_err());
        assert!(Pattern::new(2, vec![0, 1, 2, 0], 0).is_err());
    }

    #[test]
    fn pack_roundtrip() {
        let set = gen_symbols(5, 7, 3).unwrap_or_else(|_| gen_glyph_digits(5, 9).unwrap());
        let packed = set.pack_bits();
        let back = PatternSet::unpack_bits(set.kind, set.k(), set.side(), &packed).unwrap();
        assert_eq!(back, set);
    }
}
