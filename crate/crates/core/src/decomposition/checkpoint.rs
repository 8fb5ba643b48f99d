//! Binary parameter checkpoints.
//!
//! Layout, little-endian: magic `LPPD`, `u32` version, `u32` feature dim,
//! `u32` component dim, `u32` iterations, then `f64` values in the order
//! decomposer weights and bias, remapper weights and bias, predictor weights
//! and bias. Version 1 has one shared predictor; version 2 stores one
//! predictor per iteration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DecompParams, PredictorSharing};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LPPD";
const VERSION_SHARED: u32 = 1;
const VERSION_PER_ITERATION: u32 = 2;

pub fn write_checkpoint_to(params: &DecompParams, mut w: impl Write) -> Result<()> {
    let version = match params.sharing() {
        PredictorSharing::Shared => VERSION_SHARED,
        PredictorSharing::PerIteration => VERSION_PER_ITERATION,
    };
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [version, params.feature_dim as u32, params.component_dim as u32, params.iterations as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in params.to_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(params: &DecompParams, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint_to(params, BufWriter::new(File::create(path)?))
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn exact<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format(self.offset, format!("truncated while reading {what}")))?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.exact::<4>(what).map(u32::from_le_bytes)
    }
}

pub fn read_checkpoint_from(r: impl Read) -> Result<DecompParams> {
    let mut c = Cursor { inner: r, offset: 0 };
    if &c.exact::<4>("magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected LPPD"));
    }
    let sharing = match c.u32("version")? {
        VERSION_SHARED => PredictorSharing::Shared,
        VERSION_PER_ITERATION => PredictorSharing::PerIteration,
        v => return Err(Error::format(4, format!("unsupported checkpoint version {v}"))),
    };
    let f = c.u32("feature dim")? as usize;
    let cd = c.u32("component dim")? as usize;
    let n = c.u32("iterations")? as usize;
    if f == 0 || cd == 0 || n == 0 {
        return Err(Error::format(8, "dimensions must be positive"));
    }
    let mut params = DecompParams::zeros(f, cd, n, sharing);
    let mut flat = Vec::with_capacity(params.num_params());
    for _ in 0..params.num_params() {
        let at = c.offset;
        let v = f64::from_le_bytes(c.exact::<8>("parameters")?);
        if !v.is_finite() {
            return Err(Error::format(at, "non-finite parameter"));
        }
        flat.push(v);
    }
    let mut probe = [0u8; 1];
    if c.inner.read(&mut probe)? != 0 {
        return Err(Error::format(c.offset, "trailing bytes after parameters"));
    }
    params.assign_flat(&flat);
    Ok(params)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<DecompParams> {
    read_checkpoint_from(BufReader::new(File::open(path)?))
}
