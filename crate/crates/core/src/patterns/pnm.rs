//! Netpbm I/O: plain-text bitmaps (P1) for patterns, binary graymaps (P5)
//! for reconstruction dumps.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("malformed bitmap header: {0}")]
    MalformedHeader(String),
    #[error("non-square pattern: {width}x{height}")]
    NonSquare { width: usize, height: usize },
    #[error("non-binary pixel value '{0}'")]
    NonBinary(char),
    #[error("expected {expected} pixels, found {found}")]
    PixelCount { expected: usize, found: usize },
}

/// Strips `#` comments, keeping line structure.
fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a P1 bitmap into (width, height, row-major bits).
pub fn parse_p1(text: &str) -> Result<(usize, usize, Vec<u8>), PnmError> {
    let clean = strip_comments(text);
    let mut rest = clean.trim_start();
    let mut header = Vec::with_capacity(3);
    while header.len() < 3 {
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        if end == 0 {
            return Err(PnmError::MalformedHeader("unexpected end of header".into()));
        }
        header.push(&rest[..end]);
        rest = rest[end..].trim_start();
    }
    if header[0] != "P1" {
        return Err(PnmError::MalformedHeader(format!(
            "magic '{}' is not P1",
            header[0]
        )));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| PnmError::MalformedHeader(format!("bad dimension '{s}'")))
    };
    let (width, height) = (dim(header[1])?, dim(header[2])?);
    let mut bits = Vec::with_capacity(width * height);
    for ch in rest.chars().filter(|c| !c.is_whitespace()) {
        match ch {
            '0' => bits.push(0),
            '1' => bits.push(1),
            other => return Err(PnmError::NonBinary(other)),
        }
    }
    if bits.len() != width * height {
        return Err(PnmError::PixelCount {
            expected: width * height,
            found: bits.len(),
        });
    }
    Ok((width, height, bits))
}

pub fn format_p1(side: usize, bits: &[u8]) -> String {
    let mut out = format!("P1\n{side} {side}\n");
    for row in bits.chunks(side) {
        let line: Vec<&str> = row.iter().map(|&b| if b != 0 { "1" } else { "0" }).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Binary 8-bit graymap bytes for `values` in [0,1]: each pixel is
/// `round(255 * v)`.
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> std::io::Result<()> {
    std::fs::write(path, encode_pgm(width, height, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_two_by_two() {
        let (w, h, bits) = parse_p1("P1\n2 2\n1 0\n0 1\n").unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(bits, vec![1, 0, 0, 1]);
    }

    #[test]
    fn accepts_comments_and_packed_rows() {
        let (_, _, bits) = parse_p1("P1 # plain\n# size\n3 1\n011\n").unwrap();
        assert_eq!(bits, vec![0, 1, 1]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_p1("P2\n2 2\n0 0 0 0"), Err(PnmError::MalformedHeader(_))));
        assert!(matches!(parse_p1("P1\n2"), Err(PnmError::MalformedHeader(_))));
        assert!(matches!(parse_p1("P1\nx 2\n0 0"), Err(PnmError::MalformedHeader(_))));
        assert_eq!(parse_p1("P1\n2 2\n0 2 0 0"), Err(PnmError::NonBinary('2')));
        assert_eq!(
            parse_p1("P1\n2 2\n0 1 0"),
            Err(PnmError::PixelCount { expected: 4, found: 3 })
        );
    }

    #[test]
    fn pgm_header_and_rounding() {
        let bytes = encode_pgm(2, 1, &[0.0, 0.5]);
        assert_eq!(&bytes[..11], b"P5\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 128]);
    }
}
