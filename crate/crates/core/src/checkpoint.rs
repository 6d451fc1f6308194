//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "CUSPCKPT"
//! version   u32 LE
//! hdr_len   u32 LE
//! header    hdr_len bytes of UTF-8 JSON (architecture, m, K, patterns, metadata)
//! params    param_count x f64 LE, canonical parameter order
//! crc32     u32 LE over every preceding byte
//! ```

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use crate::model::{Arch, SurrogateModel};
use crate::objective::LossValue;
use crate::patterns::{PatternKind, PatternSet};

pub const MAGIC: &[u8; 8] = b"CUSPCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    NotCheckpoint,
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: need {expected} bytes, file has {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),
}

/// Training provenance stored with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub epochs_run: usize,
    pub final_loss: Option<LossValue>,
    pub seed: u64,
    /// Loss mixing weight the model was trained with; attacks reuse it.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PatternBlock {
    id: String,
    kind: PatternKind,
    side: usize,
    k: usize,
    bits: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: Arch,
    input_shape: Vec<usize>,
    trunk: Vec<LayerSpec>,
    m: usize,
    k: usize,
    param_count: usize,
    patterns: PatternBlock,
    metadata: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SurrogateModel,
    pub patterns: PatternSet,
    pub pattern_id: String,
    pub meta: CheckpointMeta,
}

pub fn encode_checkpoint(
    model: &SurrogateModel,
    patterns: &PatternSet,
    pattern_id: &str,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>> {
    if patterns.k() != model.k || patterns.m() != model.m {
        return Err(Error::Config(format!(
            "pattern set ({} x {}) does not fit the model ({} x {})",
            patterns.k(),
            patterns.m(),
            model.k,
            model.m
        )));
    }
    let header = Header {
        arch: model.arch,
        input_shape: model.input_shape.clone(),
        trunk: model.layer_specs(),
        m: model.m,
        k: model.k,
        param_count: model.param_count(),
        patterns: PatternBlock {
            id: pattern_id.to_string(),
            kind: patterns.kind,
            side: patterns.side(),
            k: patterns.k(),
            bits: BASE64.encode(patterns.pack_bits()),
        },
        metadata: meta.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + header.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in model.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn checksum_error(bytes: &[u8]) -> Option<CheckpointError> {
    let n = bytes.len();
    let stored = le_u32(bytes, n - 4);
    let computed = crc32fast::hash(&bytes[..n - 4]);
    (stored != computed).then_some(CheckpointError::ChecksumMismatch { stored, computed })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let found = bytes.len();
    if found < MAGIC.len() {
        return Err(CheckpointError::Truncated { expected: 16, found }.into());
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::NotCheckpoint.into());
    }
    if found < 16 {
        return Err(CheckpointError::Truncated { expected: 16, found }.into());
    }
    let version = le_u32(bytes, 8);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let header_len = le_u32(bytes, 12) as usize;
    let header_end = 16 + header_len;
    if found < header_end + 4 {
        return Err(CheckpointError::Truncated {
            expected: header_end + 4,
            found,
        }
        .into());
    }
    let header: Header = match serde_json::from_slice(&bytes[16..header_end]) {
        Ok(h) => h,
        Err(e) => {
            return Err(checksum_error(bytes)
                .unwrap_or(CheckpointError::MalformedHeader(e.to_string()))
                .into())
        }
    };
    let expected = header_end + 8 * header.param_count + 4;
    if found < expected {
        return Err(CheckpointError::Truncated { expected, found }.into());
    }
    if found > expected {
        return Err(checksum_error(bytes)
            .unwrap_or(CheckpointError::MalformedHeader(format!(
                "{} trailing bytes after the checksum",
                found - expected
            )))
            .into());
    }
    if let Some(err) = checksum_error(bytes) {
        return Err(err.into());
    }

    let malformed = |msg: String| Error::Checkpoint(CheckpointError::MalformedHeader(msg));
    let packed = BASE64
        .decode(&header.patterns.bits)
        .map_err(|e| malformed(format!("pattern bits: {e}")))?;
    if header.patterns.k != header.k || header.patterns.side * header.patterns.side != header.m {
        return Err(malformed(format!(
            "patterns are {} x {}^2, model is {} x {}",
            header.patterns.k, header.patterns.side, header.k, header.m
        )));
    }
    let patterns = PatternSet::unpack_bits(
        header.patterns.kind,
        header.patterns.k,
        header.patterns.side,
        &packed,
    )
    .map_err(|e| malformed(e.to_string()))?;

    let mut model = SurrogateModel::with_trunk(
        header.arch,
        &header.input_shape,
        &header.trunk,
        header.m,
        header.k,
        0,
    )
    .map_err(|e| malformed(e.to_string()))?;
    if model.param_count() != header.param_count {
        return Err(malformed(format!(
            "architecture has {} parameters, header declares {}",
            model.param_count(),
            header.param_count
        )));
    }
    let mut cursor = header_end;
    for t in model.params_mut() {
        for v in t.data_mut() {
            *v = f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().expect("8 bytes"));
            cursor += 8;
        }
    }
    Ok(Checkpoint {
        model,
        patterns,
        pattern_id: header.patterns.id,
        meta: header.metadata,
    })
}

/// Writes the checkpoint to a temporary sibling and renames it into place.
pub fn save_checkpoint(
    model: &SurrogateModel,
    patterns: &PatternSet,
    pattern_id: &str,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(model, patterns, pattern_id, meta)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::patterns::gen_glyph_digits;

    fn sample() -> (SurrogateModel, PatternSet, CheckpointMeta) {
        let model = build_model(Arch::SmallConv, &[1, 8, 8], 64, 4, 5).unwrap();
        let patterns = gen_glyph_digits(4, 8).unwrap();
        let meta = CheckpointMeta {
            epochs_run: 3,
            final_loss: Some(LossValue::new(0.5, 1.25, 0.5)),
            seed: 5,
            alpha: 0.5,
        };
        (model, patterns, meta)
    }

    fn ckpt_err(bytes: &[u8]) -> CheckpointError {
        match decode_checkpoint(bytes) {
            Err(Error::Checkpoint(e)) => e,
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (model, patterns, meta) = sample();
        let bytes = encode_checkpoint(&model, &patterns, "glyph-8", &meta).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.patterns, patterns);
        assert_eq!(back.meta, meta);
        assert_eq!(back.pattern_id, "glyph-8");
        assert_eq!(encode_checkpoint(&back.model, &back.patterns, "glyph-8", &back.meta).unwrap(), bytes);
    }

    #[test]
    fn format_gates() {
        let (model, patterns, meta) = sample();
        let bytes = encode_checkpoint(&model, &patterns, "g", &meta).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert_eq!(ckpt_err(&bad_magic), CheckpointError::NotCheckpoint);

        let mut bumped = bytes.clone();
        bumped[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert_eq!(ckpt_err(&bumped), CheckpointError::UnsupportedVersion(2));

        assert!(matches!(ckpt_err(&bytes[..bytes.len() - 9]), CheckpointError::Truncated { .. }));
        assert!(matches!(ckpt_err(&bytes[..30]), CheckpointError::Truncated { .. }));

        let mut flipped = bytes.clone();
        let mid = bytes.len() - 100;
        flipped[mid] ^= 0x10;
        assert!(matches!(ckpt_err(&flipped), CheckpointError::ChecksumMismatch { .. }));
    }
}
