//! Binary feature files.
//!
//! Layout (little-endian): magic `CTALFEAT`, `u32` version, `u32` D, `u32` T,
//! `f64` snippet step in seconds, then `D × T` `f32` values, row-major with
//! one row per feature dimension.

use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::model::FeatureSequence;

pub const FEATURE_MAGIC: &[u8; 8] = b"CTALFEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 4 + 4 + 8;

/// Values are narrowed to `f32`.
pub fn encode_features(f: &FeatureSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER + 4 * f.values().len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(f.length() as u32).to_le_bytes());
    buf.extend_from_slice(&f.step().to_le_bytes());
    for &v in f.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureSequence> {
    let bad = |why: String| Error::format("feature", why);
    if buf.len() < HEADER {
        return Err(bad(format!(
            "{} bytes is shorter than the header",
            buf.len()
        )));
    }
    if &buf[..8] != FEATURE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (dim, length) = (u32_at(12) as usize, u32_at(16) as usize);
    let step = f64::from_le_bytes(buf[20..28].try_into().unwrap());
    let expect = dim
        .checked_mul(length)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    if buf.len() != expect {
        return Err(bad(format!(
            "expected {expect} bytes for {dim} × {length}, found {}",
            buf.len()
        )));
    }
    let values = buf[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureSequence::new(dim, length, step, values).map_err(|e| bad(e.to_string()))
}

pub fn save_features(path: impl AsRef<Path>, f: &FeatureSequence) -> Result<()> {
    write_atomic(path.as_ref(), &encode_features(f))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let buf = fs::read(path)?;
    decode_features(&buf).map_err(|e| match e {
        Error::Format { kind, reason } => Error::Format {
            kind,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}
