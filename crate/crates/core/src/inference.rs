//! From per-pixel intensity mixtures to ordered multi-layer depth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth_map::{DepthUnits, MultiLayerDepthMap};
use crate::error::{Error, Result};
use crate::intensity::{IntensityMixture, MixtureRule, Peak};
use crate::losses::MixtureImage;

/// Depth axis on which the suppression radius is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionSpace {
    #[default]
    Normalized,
    Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub suppression_radius: f64,
    pub min_peak_intensity: f64,
    pub suppression_space: SuppressionSpace,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            suppression_radius: 0.02,
            min_peak_intensity: 0.05,
            suppression_space: SuppressionSpace::Normalized,
        }
    }
}

/// Local maxima of a uniformly weighted Laplace sum. Between neighboring
/// centers the sum is convex, so only centers can be maxima; a center is one
/// when the left derivative is non-negative and the right one non-positive.
fn weighted_peaks(m: &IntensityMixture) -> Result<Vec<Peak>> {
    let comps = m.components();
    let mut centers: Vec<f64> = comps.iter().map(|c| c.center()).collect();
    centers.sort_by(f64::total_cmp);
    centers.dedup();
    let mut peaks = Vec::new();
    for x in centers {
        let (mut left, mut right) = (0.0, 0.0);
        for c in comps {
            let slope = c.density(x) / c.scale();
            left += if c.center() >= x { slope } else { -slope };
            right += if c.center() > x { slope } else { -slope };
        }
        if left >= 0.0 && right <= 0.0 {
            peaks.push(Peak {
                depth: x,
                intensity: m.eval(x)?,
            });
        }
    }
    Ok(peaks)
}

/// Peaks used for layer extraction. Ordered mixtures are read through their
/// max envelope.
pub fn mixture_peaks(m: &IntensityMixture) -> Result<Vec<Peak>> {
    match m.rule() {
        MixtureRule::MaxMixture => m.peaks(),
        MixtureRule::Ordered => m.clone().with_rule(MixtureRule::MaxMixture).peaks(),
        MixtureRule::WeightedUniform => weighted_peaks(m),
    }
}

/// Greedy suppression: strongest peak first (ties: smaller depth), dropping any
/// peak closer than `radius` to one already kept. Output is sorted by depth.
pub fn suppress_peaks(peaks: &[Peak], radius: f64) -> Vec<Peak> {
    let mut order = peaks.to_vec();
    order.sort_by(|a, b| b.intensity.total_cmp(&a.intensity).then(a.depth.total_cmp(&b.depth)));
    let mut kept: Vec<Peak> = Vec::with_capacity(order.len());
    for p in order {
        if kept.iter().all(|k| (k.depth - p.depth).abs() >= radius) {
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    kept
}

/// Peaks at or above `min_peak_intensity`, suppressed within
/// `suppression_radius`, as ascending depths.
pub fn extract_layers(m: &IntensityMixture, suppression_radius: f64, min_peak_intensity: f64) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::invalid("cannot extract layers from an empty mixture"));
    }
    if !(suppression_radius >= 0.0) {
        return Err(Error::invalid("suppression radius must be non-negative"));
    }
    let strong: Vec<Peak> = mixture_peaks(m)?.into_iter().filter(|p| p.intensity >= min_peak_intensity).collect();
    Ok(suppress_peaks(&strong, suppression_radius).into_iter().map(|p| p.depth).collect())
}

/// Inverse of the scale-invariant normalization: `d = d_norm * s + t`.
pub fn denormalize(layers: &[f64], shift: f64, scale: f64) -> Result<Vec<f64>> {
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("denormalization scale must be positive, got {scale}")));
    }
    Ok(layers.iter().map(|d| d * scale + shift).collect())
}

/// Layer extraction over a whole image.
///
/// With `norm = Some((t, s))` depths are mapped back to raw units; any that end
/// up non-positive cannot be raw depths and are dropped. Without it the map
/// stays in normalized units.
pub fn predict_image(img: &MixtureImage, norm: Option<(f64, f64)>, cfg: &InferenceConfig) -> Result<MultiLayerDepthMap> {
    let radius = match (cfg.suppression_space, norm) {
        (SuppressionSpace::Metric, Some((_, s))) if s > 0.0 => cfg.suppression_radius / s,
        (SuppressionSpace::Metric, Some((_, s))) => return Err(Error::invalid(format!("denormalization scale must be positive, got {s}"))),
        _ => cfg.suppression_radius,
    };
    let pixels: Vec<Vec<f64>> = (0..img.len())
        .into_par_iter()
        .map(|p| {
            let layers = extract_layers(&img.pixel_mixture(p)?, radius, cfg.min_peak_intensity)?;
            match norm {
                Some((t, s)) => Ok(denormalize(&layers, t, s)?.into_iter().filter(|d| *d > 0.0).collect()),
                None => Ok(layers),
            }
        })
        .collect::<Result<_>>()?;
    let units = if norm.is_some() { DepthUnits::Raw } else { DepthUnits::Normalized };
    MultiLayerDepthMap::from_pixels(img.height, img.width, units, pixels)
}
