//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `CTALCKPT`, `u32` version, `u32` SoI bins,
//! `u32` layer count, `(u32 out, u32 in)` per layer, then per layer the
//! row-major `f64` weights followed by the `f64` bias. An optional optimizer
//! section follows: `u8` flag, `u64` epoch, `u64` Adam step, first moments,
//! second moments.

use std::path::Path;

use super::{AdamState, Arch, ScorerParams};
use crate::data::write_atomic;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTALCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus the optimizer state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ScorerParams,
    /// `(epochs completed, Adam state)`.
    pub optimizer: Option<(usize, AdamState)>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let p = &ck.params;
    let mut buf = Vec::with_capacity(64 + 8 * p.len() * 3);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(p.arch().soi_bins as u32).to_le_bytes());
    let dims = p.arch().layer_dims();
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for (out, inp) in &dims {
        buf.extend_from_slice(&(*out as u32).to_le_bytes());
        buf.extend_from_slice(&(*inp as u32).to_le_bytes());
    }
    for v in p.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    match &ck.optimizer {
        None => buf.push(0),
        Some((epoch, adam)) => {
            buf.push(1);
            buf.extend_from_slice(&(*epoch as u64).to_le_bytes());
            buf.extend_from_slice(&adam.step.to_le_bytes());
            for v in adam.m.iter().chain(&adam.v) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("checkpoint", "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format("checkpoint", "size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let bins = r.u32()? as usize;
    let count = r.u32()? as usize;
    if count > 1024 {
        return Err(Error::format(
            "checkpoint",
            format!("implausible layer count {count}"),
        ));
    }
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        dims.push((r.u32()? as usize, r.u32()? as usize));
    }
    let arch = Arch::from_layer_dims(&dims, bins)?;
    let n: usize = dims.iter().map(|(o, i)| o * (i + 1)).sum();
    let params = ScorerParams::from_vec(arch, r.f64s(n)?)?;
    let optimizer = match r.take(1)?[0] {
        0 => None,
        1 => {
            let epoch = r.u64()? as usize;
            let step = r.u64()?;
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            Some((epoch, AdamState { m, v, step }))
        }
        other => {
            return Err(Error::format(
                "checkpoint",
                format!("bad optimizer flag {other}"),
            ))
        }
    };
    if r.pos != buf.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    Ok(Checkpoint { params, optimizer })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
