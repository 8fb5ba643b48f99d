//! `MLD1` multi-layer depth files.
//!
//! Layout, little-endian: magic `MLD1`, `u32` height, `u32` width, one flag
//! byte (0 raw, 1 normalized), then per pixel in row-major order a `u8`
//! layer count followed by that many `f32` depths in strictly increasing order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::depth_map::{DepthUnits, MultiLayerDepthMap};
use crate::error::{Error, Result};

pub const MLD_MAGIC: &[u8; 4] = b"MLD1";

pub fn write_mld_to(map: &MultiLayerDepthMap, mut w: impl Write) -> Result<()> {
    w.write_all(MLD_MAGIC)?;
    w.write_all(&(map.height() as u32).to_le_bytes())?;
    w.write_all(&(map.width() as u32).to_le_bytes())?;
    w.write_all(&[match map.units() {
        DepthUnits::Raw => 0,
        DepthUnits::Normalized => 1,
    }])?;
    for (p, depths) in map.pixels().enumerate() {
        let m = u8::try_from(depths.len()).map_err(|_| Error::invalid(format!("pixel {p} has more than 255 layers")))?;
        let single: Vec<f32> = depths.iter().map(|&d| d as f32).collect();
        if single.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("pixel {p} depths collapse in single precision")));
        }
        w.write_all(&[m])?;
        for d in single {
            w.write_all(&d.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_mld(map: &MultiLayerDepthMap, path: impl AsRef<Path>) -> Result<()> {
    write_mld_to(map, BufWriter::new(File::create(path)?))
}

pub fn read_mld_from(r: impl Read) -> Result<MultiLayerDepthMap> {
    let mut r = r;
    let mut offset = 0u64;
    let mut take = |buf: &mut [u8], what: &str| -> Result<u64> {
        let at = offset;
        r.read_exact(buf)
            .map_err(|_| Error::format(at, format!("truncated while reading {what}")))?;
        offset += buf.len() as u64;
        Ok(at)
    };
    let mut magic = [0u8; 4];
    take(&mut magic, "magic")?;
    if &magic != MLD_MAGIC {
        return Err(Error::format(0, "bad magic, expected MLD1"));
    }
    let mut word = [0u8; 4];
    take(&mut word, "height")?;
    let height = u32::from_le_bytes(word) as usize;
    take(&mut word, "width")?;
    let width = u32::from_le_bytes(word) as usize;
    let mut flag = [0u8; 1];
    let at = take(&mut flag, "units flag")?;
    let units = match flag[0] {
        0 => DepthUnits::Raw,
        1 => DepthUnits::Normalized,
        f => return Err(Error::format(at, format!("unknown units flag {f}"))),
    };
    let mut pixels = Vec::with_capacity(height.saturating_mul(width).min(1 << 24));
    for _ in 0..height * width {
        let mut m = [0u8; 1];
        take(&mut m, "layer count")?;
        let mut depths = Vec::with_capacity(m[0] as usize);
        let mut prev = f32::NEG_INFINITY;
        for _ in 0..m[0] {
            let at = take(&mut word, "depth")?;
            let d = f32::from_le_bytes(word);
            if !d.is_finite() {
                return Err(Error::format(at, "non-finite depth"));
            }
            if d <= prev {
                return Err(Error::format(at, "depths not strictly increasing"));
            }
            if units == DepthUnits::Raw && d <= 0.0 {
                return Err(Error::format(at, "raw depth must be positive"));
            }
            prev = d;
            depths.push(d as f64);
        }
        pixels.push(depths);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format(offset, "trailing bytes after last pixel"));
    }
    MultiLayerDepthMap::from_pixels(height, width, units, pixels)
}

pub fn read_mld(path: impl AsRef<Path>) -> Result<MultiLayerDepthMap> {
    read_mld_from(BufReader::new(File::open(path)?))
}
