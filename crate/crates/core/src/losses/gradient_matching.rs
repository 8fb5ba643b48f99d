//! Multi-scale gradient-matching loss on depth residuals.
//!
//! For each layer and scale the residual `R = pred - gt` is subsampled with
//! stride `2^s`; the term is the sum of absolute forward differences of `R`
//! between valid neighbors, divided by the number of valid samples at that
//! scale.

use serde::{Deserialize, Serialize};

use super::{sign, LossConfig};
use crate::error::{Error, Result};

/// Which axis the configured weight list indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmWeightMode {
    #[default]
    PerLayer,
    PerScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmLoss {
    pub value: f64,
    /// True when no layer had a valid pixel, in which case `value` is zero.
    pub empty_mask: bool,
}

struct LayerView<'a> {
    pred: &'a [f64],
    gt: &'a [f64],
    valid: &'a [bool],
}

fn weight(cfg: &LossConfig, layer: usize, scale: usize) -> f64 {
    let idx = match cfg.gm_weight_mode {
        GmWeightMode::PerLayer => layer,
        GmWeightMode::PerScale => scale,
    };
    cfg.gm_weights.get(idx).copied().unwrap_or(1.0)
}

fn views<'a>(
    pred: &'a [Vec<f64>],
    gt: &'a [Vec<f64>],
    valid: &'a [Vec<bool>],
    height: usize,
    width: usize,
) -> Result<Vec<LayerView<'a>>> {
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(Error::invalid(format!(
            "gradient matching needs aligned layers, got {} pred, {} gt, {} masks",
            pred.len(),
            gt.len(),
            valid.len()
        )));
    }
    let n = height * width;
    pred.iter()
        .zip(gt)
        .zip(valid)
        .map(|((p, g), v)| {
            if p.len() != n || g.len() != n || v.len() != n {
                Err(Error::invalid(format!("layer images must have {n} pixels")))
            } else {
                Ok(LayerView { pred: p, gt: g, valid: v })
            }
        })
        .collect()
}

/// Value and, when `grad` is given, the gradient with respect to each predicted layer image.
pub(crate) fn gm_value_and_grad(
    pred: &[Vec<f64>],
    gt: &[Vec<f64>],
    valid: &[Vec<bool>],
    height: usize,
    width: usize,
    cfg: &LossConfig,
    mut grad: Option<&mut [Vec<f64>]>,
) -> Result<GmLoss> {
    let layers = views(pred, gt, valid, height, width)?;
    let mut value = 0.0;
    let mut any_valid = false;
    for (k, layer) in layers.iter().enumerate() {
        for s in 0..cfg.gm_num_scales {
            let step = 1usize << s;
            let mut count = 0usize;
            for y in (0..height).step_by(step) {
                for x in (0..width).step_by(step) {
                    count += layer.valid[y * width + x] as usize;
                }
            }
            if count == 0 {
                continue;
            }
            any_valid = true;
            let w = weight(cfg, k, s) / count as f64;
            let residual = |p: usize| layer.pred[p] - layer.gt[p];
            let mut acc = 0.0;
            for y in (0..height).step_by(step) {
                for x in (0..width).step_by(step) {
                    let a = y * width + x;
                    if !layer.valid[a] {
                        continue;
                    }
                    let neighbors = [(x + step < width).then(|| a + step), (y + step < height).then(|| a + step * width)];
                    for b in neighbors.into_iter().flatten() {
                        if !layer.valid[b] {
                            continue;
                        }
                        let diff = residual(b) - residual(a);
                        acc += diff.abs();
                        if let Some(g) = grad.as_deref_mut() {
                            let sg = w * sign(diff);
                            g[k][b] += sg;
                            g[k][a] -= sg;
                        }
                    }
                }
            }
            value += w * acc;
        }
    }
    Ok(GmLoss {
        value,
        empty_mask: !any_valid,
    })
}

/// Gradient-matching loss. Layer `k` of `pred` is compared with layer `k` of
/// `gt` where `valid[k]` holds.
pub fn loss_gradient_matching(
    pred: &[Vec<f64>],
    gt: &[Vec<f64>],
    valid: &[Vec<bool>],
    height: usize,
    width: usize,
    cfg: &LossConfig,
) -> Result<GmLoss> {
    gm_value_and_grad(pred, gt, valid, height, width, cfg, None)
}
