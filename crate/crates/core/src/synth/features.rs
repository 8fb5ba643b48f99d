//! `FEA1` feature image files.
//!
//! Layout, little-endian: magic `FEA1`, `u32` height, width and feature
//! dimension, then `height * width * dim` `f64` values, pixel-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::decomposition::FeatureImage;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FEA1";

pub fn write_features_to(img: &FeatureImage, mut w: impl Write) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    for v in [img.height, img.width, img.dim] {
        let v = u32::try_from(v).map_err(|_| Error::invalid("feature image dimension exceeds u32"))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &img.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_features(img: &FeatureImage, path: impl AsRef<Path>) -> Result<()> {
    write_features_to(img, BufWriter::new(File::create(path)?))
}

pub fn read_features_from(mut r: impl Read) -> Result<FeatureImage> {
    let mut offset = 0u64;
    let mut take = |r: &mut dyn Read, buf: &mut [u8], what: &str| -> Result<u64> {
        let at = offset;
        r.read_exact(buf)
            .map_err(|_| Error::format(at, format!("truncated while reading {what}")))?;
        offset += buf.len() as u64;
        Ok(at)
    };
    let mut magic = [0u8; 4];
    take(&mut r, &mut magic, "magic")?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format(0, "bad magic, expected FEA1"));
    }
    let mut dims = [0usize; 3];
    for (d, name) in dims.iter_mut().zip(["height", "width", "dim"]) {
        let mut word = [0u8; 4];
        take(&mut r, &mut word, name)?;
        *d = u32::from_le_bytes(word) as usize;
    }
    let [height, width, dim] = dims;
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(dim))
        .ok_or_else(|| Error::format(4, "feature image dimensions overflow"))?;
    let mut data = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let mut buf = [0u8; 8];
        let at = take(&mut r, &mut buf, "value")?;
        let v = f64::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(Error::format(at, "non-finite feature value"));
        }
        data.push(v);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format(offset, "trailing bytes after last value"));
    }
    FeatureImage::new(height, width, dim, data)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureImage> {
    read_features_from(BufReader::new(File::open(path)?))
}
