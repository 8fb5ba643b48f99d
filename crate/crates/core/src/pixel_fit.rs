//! Direct optimization of one pixel's Laplace parameters against its ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{IntensityMixture, LaplaceComponent};
use crate::losses::{grad_losses, loss_coverage, loss_intensity, LossConfig};
use crate::optim::{clip_grad_norm, poly_lr_multiplier, AdamW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelFitConfig {
    pub components: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub lr_decay_power: f64,
    /// `0` disables clipping.
    pub grad_clip: f64,
    /// Centers start uniform in `[min gt - spread, max gt + spread]`.
    pub init_spread: f64,
    /// Scales start uniform in this range (then clipped).
    pub init_scale: (f64, f64),
    pub loss: LossConfig,
}

impl Default for PixelFitConfig {
    fn default() -> Self {
        Self {
            components: 4,
            steps: 500,
            learning_rate: 0.05,
            lr_decay_power: 0.9,
            grad_clip: 0.0,
            init_spread: 1.0,
            init_scale: (1.0, 3.0),
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFit {
    pub mixture: IntensityMixture,
    /// `lambda_int L_int + lambda_cov L_cov` before each step, then at the end.
    pub trace: Vec<f64>,
}

fn objective(m: &IntensityMixture, gts: &[f64], cfg: &LossConfig) -> Result<f64> {
    Ok(cfg.lambda_int * loss_intensity(m, gts)? + cfg.lambda_cov * loss_coverage(m, gts)?)
}

/// Fits `cfg.components` max-mixture components to `gts` with AdamW, projecting
/// every scale back into the clip range after each step.
pub fn fit_pixel(gts: &[f64], cfg: &PixelFitConfig, seed: u64) -> Result<PixelFit> {
    cfg.loss.validate()?;
    if gts.is_empty() {
        return Err(Error::invalid("pixel fit needs at least one ground-truth depth"));
    }
    if cfg.components == 0 {
        return Err(Error::invalid("pixel fit needs at least one component"));
    }
    if !(cfg.init_scale.0 > 0.0 && cfg.init_scale.0 <= cfg.init_scale.1) {
        return Err(Error::invalid("initial scale range must be positive and ordered"));
    }
    let n = cfg.components;
    let lo = gts.iter().copied().fold(f64::INFINITY, f64::min) - cfg.init_spread;
    let hi = gts.iter().copied().fold(f64::NEG_INFINITY, f64::max) + cfg.init_spread;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // parameters laid out as [d_0..d_n, b_0..b_n]
    let mut params: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    params.extend((0..n).map(|_| cfg.loss.clip_scale(rng.random_range(cfg.init_scale.0..=cfg.init_scale.1))));

    let build = |p: &[f64]| -> Result<IntensityMixture> {
        IntensityMixture::max_mixture(p[..n].iter().zip(&p[n..]).map(|(&d, &b)| LaplaceComponent::new(d, b)).collect::<Result<_>>()?)
    };
    let mut opt = AdamW::new(2 * n, 0.9, 0.99, 0.0);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let m = build(&params)?;
        let value = objective(&m, gts, &cfg.loss)?;
        if !value.is_finite() {
            return Err(Error::Divergence { step, value });
        }
        trace.push(value);
        let g = grad_losses(&m, gts, cfg.loss.lambda_int, cfg.loss.lambda_cov)?;
        let mut flat: Vec<f64> = g.d.iter().chain(&g.b).copied().collect();
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut flat, cfg.grad_clip);
        }
        let lr = cfg.learning_rate * poly_lr_multiplier(step, cfg.steps, cfg.lr_decay_power);
        opt.step(&mut params, &flat, lr);
        for b in &mut params[n..] {
            *b = cfg.loss.clip_scale(*b);
        }
    }
    let mixture = build(&params)?;
    trace.push(objective(&mixture, gts, &cfg.loss)?);
    Ok(PixelFit { mixture, trace })
}
