//! The `AVF1` visual feature file.
//!
//! Layout (little endian): magic `AVF1`, u32 version (1), u32 frames,
//! u32 dim, u8 per-video flag, u32 frame rate in millihertz, then
//! `frames * dim` f32 values row by row.

use std::path::Path;

use avns_core::visual::VisualFeatureSequence;

use crate::error::{AppError, Result};

const MAGIC: &[u8; 4] = b"AVF1";
const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 4 + 4 + 1 + 4;

pub fn encode_features(seq: &VisualFeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * seq.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.push(seq.per_video as u8);
    out.extend_from_slice(&((seq.frame_rate * 1000.0).round() as u32).to_le_bytes());
    for v in seq.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a whole file; any inconsistency is an error with no partial
/// result.
pub fn decode_features(bytes: &[u8]) -> std::result::Result<VisualFeatureSequence, String> {
    if bytes.len() < HEADER {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic, expected AVF1".into());
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let frames = u32_at(bytes, 8) as usize;
    let dim = u32_at(bytes, 12) as usize;
    let per_video = match bytes[16] {
        0 => false,
        1 => true,
        f => return Err(format!("invalid per-video flag {f}")),
    };
    let rate = u32_at(bytes, 17) as f64 / 1000.0;
    let expected = frames.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or("feature size overflows")?;
    let body = &bytes[HEADER..];
    if body.len() != expected {
        return Err(format!("expected {expected} data bytes, found {}", body.len()));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    VisualFeatureSequence::new(frames, dim, data, rate, per_video).map_err(|e| e.to_string())
}

pub fn write_feature_file(path: impl AsRef<Path>, seq: &VisualFeatureSequence) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(seq)).map_err(|e| AppError::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<VisualFeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode_features(&bytes).map_err(|m| AppError::format(path, m))
}
