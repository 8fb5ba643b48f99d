//! Per-pixel ragged depth lists.

use crate::error::{Error, Result};

/// Units of the stored depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthUnits {
    #[default]
    Raw,
    Normalized,
}

/// A `height x width` image where each pixel holds a strictly increasing list
/// of layer depths (nearest first). The list may be empty.
///
/// Storage is compressed-row: `offsets[p]..offsets[p + 1]` indexes `depths`
/// for pixel `p = y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLayerDepthMap {
    height: usize,
    width: usize,
    units: DepthUnits,
    offsets: Vec<usize>,
    depths: Vec<f64>,
}

impl MultiLayerDepthMap {
    /// Builds a map from per-pixel lists in row-major order.
    pub fn from_pixels(height: usize, width: usize, units: DepthUnits, pixels: Vec<Vec<f64>>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "expected {} pixels for a {height}x{width} map, got {}",
                height * width,
                pixels.len()
            )));
        }
        let mut offsets = Vec::with_capacity(pixels.len() + 1);
        let mut depths = Vec::new();
        offsets.push(0);
        for (p, list) in pixels.into_iter().enumerate() {
            validate_list(&list, units).map_err(|msg| Error::invalid(format!("pixel {p}: {msg}")))?;
            depths.extend(list);
            offsets.push(depths.len());
        }
        Ok(Self {
            height,
            width,
            units,
            offsets,
            depths,
        })
    }

    /// A map where every pixel has the same depth list.
    pub fn uniform(height: usize, width: usize, units: DepthUnits, list: &[f64]) -> Result<Self> {
        Self::from_pixels(height, width, units, vec![list.to_vec(); height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn units(&self) -> DepthUnits {
        self.units
    }

    /// Depths at linear pixel index `p`.
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.depths[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }

    pub fn layer_count(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    pub fn max_layers(&self) -> usize {
        (0..self.len()).map(|p| self.layer_count(p)).max().unwrap_or(0)
    }

    /// Depth of the `layer`-th (0-based) nearest surface at pixel `p`.
    pub fn layer_depth(&self, p: usize, layer: usize) -> Option<f64> {
        self.pixel(p).get(layer).copied()
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |p| self.pixel(p))
    }

    /// All depths of all pixels, pixel-major.
    pub fn all_depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn total_depths(&self) -> usize {
        self.depths.len()
    }

    /// Applies `f` to every depth and relabels the units. `f` must be strictly increasing.
    pub fn map_depths(&self, units: DepthUnits, f: impl Fn(f64) -> f64) -> Result<Self> {
        let pixels = self.pixels().map(|l| l.iter().map(|&d| f(d)).collect()).collect();
        Self::from_pixels(self.height, self.width, units, pixels)
    }

    /// Layer `layer` (0-based) as a dense image; `None` where the pixel has fewer layers.
    pub fn layer_image(&self, layer: usize) -> Vec<Option<f64>> {
        (0..self.len()).map(|p| self.layer_depth(p, layer)).collect()
    }
}

fn validate_list(list: &[f64], units: DepthUnits) -> std::result::Result<(), String> {
    for (i, &d) in list.iter().enumerate() {
        if !d.is_finite() {
            return Err(format!("depth {i} is not finite ({d})"));
        }
        if units == DepthUnits::Raw && d <= 0.0 {
            return Err(format!("raw depth {i} must be positive, got {d}"));
        }
        if i > 0 && d <= list[i - 1] {
            return Err(format!("depths must be strictly increasing, got {} then {d}", list[i - 1]));
        }
    }
    Ok(())
}
