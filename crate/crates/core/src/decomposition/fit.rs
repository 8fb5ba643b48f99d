//! Gradient-based training of the decomposition on one image.

use serde::{Deserialize, Serialize};

use super::{backward_recurrence, run_recurrence, DecompParams, EtaMode, FeatureImage, OutputLink, PredictorSharing, RecurrenceOptions};
use crate::depth_map::MultiLayerDepthMap;
use crate::error::{Error, Result};
use crate::intensity::MixtureRule;
use crate::losses::{total::evaluate, LossBreakdown, LossConfig};
use crate::optim::{clip_grad_norm, poly_lr_multiplier, AdamW, OptimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub component_dim: usize,
    pub iterations: usize,
    pub sharing: PredictorSharing,
    pub eta_mode: EtaMode,
    pub rule: MixtureRule,
    /// Half-width of the uniform weight init, before the `1/sqrt(fan_in)` factor.
    pub init_scale: f64,
    pub seed: u64,
    pub degenerate_fallback: bool,
    pub loss: LossConfig,
    pub optim: OptimConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            component_dim: 8,
            iterations: 4,
            sharing: PredictorSharing::Shared,
            eta_mode: EtaMode::Attached,
            rule: MixtureRule::MaxMixture,
            init_scale: 1.0,
            seed: 0,
            degenerate_fallback: false,
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn link(&self) -> OutputLink {
        OutputLink {
            scale_lo: self.loss.scale_clip_lo,
            scale_hi: self.loss.scale_clip_hi,
        }
    }

    pub fn recurrence_options(&self) -> RecurrenceOptions {
        RecurrenceOptions {
            link: self.link(),
            rule: self.rule,
            degenerate_fallback: self.degenerate_fallback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub loss: LossBreakdown,
    pub learning_rate: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub eta_identity_error: f64,
    pub degenerate_steps: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: DecompParams,
    /// One entry per optimizer step, then one for the final parameters.
    pub trace: Vec<TraceEntry>,
}

impl FitResult {
    pub fn final_loss(&self) -> LossBreakdown {
        self.trace.last().map(|t| t.loss).unwrap_or_default()
    }

    pub fn max_eta_identity_error(&self) -> f64 {
        self.trace.iter().map(|t| t.eta_identity_error).fold(0.0, f64::max)
    }
}

/// Trains freshly initialized parameters on `features` against normalized `gt`.
pub fn fit(features: &FeatureImage, gt: &MultiLayerDepthMap, cfg: &FitConfig) -> Result<FitResult> {
    let params = DecompParams::init(
        features.dim,
        cfg.component_dim,
        cfg.iterations,
        cfg.sharing,
        cfg.init_scale,
        cfg.seed,
    )?;
    fit_from(params, features, gt, cfg)
}

/// Trains starting from `params`.
pub fn fit_from(mut params: DecompParams, features: &FeatureImage, gt: &MultiLayerDepthMap, cfg: &FitConfig) -> Result<FitResult> {
    cfg.loss.validate()?;
    if features.height != gt.height() || features.width != gt.width() {
        return Err(Error::invalid("features and ground truth differ in size"));
    }
    let opts = cfg.recurrence_options();
    let link = opts.link;
    let mut flat = params.to_flat();
    let mut opt = AdamW::new(flat.len(), cfg.optim.beta1, cfg.optim.beta2, cfg.optim.weight_decay);
    let mut trace = Vec::with_capacity(cfg.optim.steps + 1);

    for step in 0..=cfg.optim.steps {
        let rec = run_recurrence(features, &params, &opts)?;
        let last = step == cfg.optim.steps;
        let out = evaluate(&rec.mixture, gt, &cfg.loss, !last)?;
        if !out.breakdown.total.is_finite() {
            return Err(Error::Divergence {
                step,
                value: out.breakdown.total,
            });
        }
        let mut entry = TraceEntry {
            step,
            loss: out.breakdown,
            learning_rate: 0.0,
            grad_norm: 0.0,
            eta_identity_error: rec.max_eta_identity_error(),
            degenerate_steps: rec.steps.iter().filter(|s| s.degenerate).count(),
        };
        if let Some(upstream) = out.grad {
            let mut grad = backward_recurrence(&params, &rec, &upstream, &link, cfg.eta_mode)?.to_flat();
            entry.grad_norm = if cfg.optim.grad_clip > 0.0 {
                clip_grad_norm(&mut grad, cfg.optim.grad_clip)
            } else {
                grad.iter().map(|g| g * g).sum::<f64>().sqrt()
            };
            if !entry.grad_norm.is_finite() {
                return Err(Error::Divergence {
                    step,
                    value: entry.grad_norm,
                });
            }
            entry.learning_rate = cfg.optim.learning_rate * poly_lr_multiplier(step, cfg.optim.steps, cfg.optim.lr_decay_power);
            opt.step(&mut flat, &grad, entry.learning_rate);
            params.assign_flat(&flat);
        }
        trace.push(entry);
    }
    Ok(FitResult { params, trace })
}
