//! Central finite-difference checks of every analytic gradient.
//!
//! Instances are drawn at random and rejected when any kink of the loss
//! (an `|x - d|` at zero, a tie in a max, a tie in gradient matching) lies
//! closer than a margin that a step of `h` could cross.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decomposition::{backward_recurrence, run_recurrence, DecompParams, DenseImage, EtaMode, PredictorSharing, RecurrenceOptions};
use crate::depth_map::{DepthUnits, MultiLayerDepthMap};
use crate::error::{Error, Result};
use crate::intensity::IntensityMixture;
use crate::losses::total::{evaluate, pair_components};
use crate::losses::{grad_coverage, grad_intensity, loss_coverage, loss_intensity, loss_total, LossConfig, MixtureImage};

pub const FD_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Minimum distance from any kink for an instance to be used.
pub const KINK_MARGIN: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - f| / max(|a|, |f|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn central_difference(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub suite: &'static str,
    pub instances: usize,
    pub partials: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Draws discarded for being too close to a kink.
    pub rejected: usize,
}

impl GradCheckReport {
    fn new(suite: &'static str, tolerance: f64) -> Self {
        Self {
            suite,
            instances: 0,
            partials: 0,
            max_rel_error: 0.0,
            tolerance,
            rejected: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.partials += 1;
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
    }

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<12} {} instances, {} partials, max rel err {:.3e} (tol {:.0e}, {} rejected) {}",
            self.suite,
            self.instances,
            self.partials,
            self.max_rel_error,
            self.tolerance,
            self.rejected,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Smallest gap between the best and second-best value, or infinity with one value.
fn top_two_gap(values: impl Iterator<Item = f64>) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in values {
        if v > a {
            b = a;
            a = v;
        } else if v > b {
            b = v;
        }
    }
    a - b
}

/// Distance from the nearest kink of the per-pixel likelihood terms.
pub fn likelihood_kink_margin(m: &IntensityMixture, gts: &[f64]) -> f64 {
    let comps = m.components();
    let mut margin = f64::INFINITY;
    for &g in gts {
        for c in comps {
            margin = margin.min((g - c.center()).abs());
        }
        margin = margin.min(top_two_gap(comps.iter().map(|c| c.log_density(g))));
    }
    for c in comps {
        margin = margin.min(top_two_gap(gts.iter().map(|&g| c.log_density(g))));
    }
    margin
}

fn random_mixture(rng: &mut ChaCha8Rng, max_n: usize) -> Result<IntensityMixture> {
    let n = rng.random_range(1..=max_n);
    let pairs: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(1.0..5.0))).collect();
    IntensityMixture::from_pairs(&pairs)
}

fn random_gts(rng: &mut ChaCha8Rng, max_m: usize) -> Vec<f64> {
    let m = rng.random_range(1..=max_m);
    (0..m).map(|_| rng.random_range(-3.0..3.0)).collect()
}

type LossFn = fn(&IntensityMixture, &[f64]) -> Result<f64>;
type GradFn = fn(&IntensityMixture, &[f64]) -> Result<crate::losses::ParamGrad>;

fn check_likelihood(suite: &'static str, loss: LossFn, grad: GradFn, seed: u64, trials: usize, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::new(suite, tol);
    while report.instances < trials {
        let m = random_mixture(&mut rng, 6)?;
        let gts = random_gts(&mut rng, 4);
        if likelihood_kink_margin(&m, &gts) < KINK_MARGIN {
            report.rejected += 1;
            continue;
        }
        let analytic = grad(&m, &gts)?;
        let pairs: Vec<(f64, f64)> = m.components().iter().map(|c| (c.center(), c.scale())).collect();
        for j in 0..pairs.len() {
            let at_d = |x: f64| {
                let mut p = pairs.clone();
                p[j].0 = x;
                loss(&IntensityMixture::from_pairs(&p)?, &gts)
            };
            report.record(analytic.d[j], central_difference(at_d, pairs[j].0, FD_STEP)?);
            let at_b = |x: f64| {
                let mut p = pairs.clone();
                p[j].1 = x;
                loss(&IntensityMixture::from_pairs(&p)?, &gts)
            };
            report.record(analytic.b[j], central_difference(at_b, pairs[j].1, FD_STEP)?);
        }
        report.instances += 1;
    }
    Ok(report)
}

pub fn check_intensity_gradients(seed: u64, trials: usize, tol: f64) -> Result<GradCheckReport> {
    check_likelihood("intensity", loss_intensity, grad_intensity, seed, trials, tol)
}

pub fn check_coverage_gradients(seed: u64, trials: usize, tol: f64) -> Result<GradCheckReport> {
    check_likelihood("coverage", loss_coverage, grad_coverage, seed, trials, tol)
}

/// Distance from the nearest tie among gradient-matching differences.
fn gm_kink_margin(img: &MixtureImage, gt: &MultiLayerDepthMap, cfg: &LossConfig) -> f64 {
    let (h, w) = (img.height, img.width);
    let mut margin = f64::INFINITY;
    for (j, l) in pair_components(img, gt) {
        let layer = gt.layer_image(l);
        for s in 0..cfg.gm_num_scales {
            let step = 1usize << s;
            for y in (0..h).step_by(step) {
                for x in (0..w).step_by(step) {
                    let a = y * w + x;
                    let Some(ga) = layer[a] else { continue };
                    for b in [(x + step < w).then(|| a + step), (y + step < h).then(|| a + step * w)].into_iter().flatten() {
                        if let Some(gb) = layer[b] {
                            let diff = (img.centers[j][b] - gb) - (img.centers[j][a] - ga);
                            margin = margin.min(diff.abs());
                        }
                    }
                }
            }
        }
    }
    margin
}

/// Also keeps pairing costs apart so the greedy assignment cannot flip.
fn pairing_margin(img: &MixtureImage, gt: &MultiLayerDepthMap) -> f64 {
    let mut costs = Vec::new();
    for l in 0..gt.max_layers() {
        let layer = gt.layer_image(l);
        let valid: Vec<(usize, f64)> = layer.iter().enumerate().filter_map(|(p, v)| v.map(|v| (p, v))).collect();
        if valid.is_empty() {
            continue;
        }
        for centers in &img.centers {
            costs.push(valid.iter().map(|&(p, g)| (centers[p] - g).abs()).sum::<f64>() / valid.len() as f64);
        }
    }
    costs.sort_by(f64::total_cmp);
    costs.windows(2).map(|c| c[1] - c[0]).fold(f64::INFINITY, f64::min)
}

/// Finite differences of the full objective through the recurrence, on tiny
/// random images and parameter sets.
pub fn check_recurrence_gradients(seed: u64, trials: usize, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::new("recurrence", tol);
    let cfg = LossConfig::default();
    let opts = RecurrenceOptions::default();
    while report.instances < trials {
        let (h, w) = (rng.random_range(1..=3), rng.random_range(2..=3));
        let f_dim = rng.random_range(2..=4);
        let c_dim = rng.random_range(2..=4);
        let iters = rng.random_range(1..=3);
        let sharing = if rng.random_bool(0.5) {
            PredictorSharing::Shared
        } else {
            PredictorSharing::PerIteration
        };
        let eta_mode = EtaMode::Attached;
        let data = (0..h * w * f_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = DenseImage::new(h, w, f_dim, data)?;
        let pixels = (0..h * w)
            .map(|_| {
                let mut v = random_gts(&mut rng, 3);
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let gt = MultiLayerDepthMap::from_pixels(h, w, DepthUnits::Normalized, pixels)?;
        let params = DecompParams::init(f_dim, c_dim, iters, sharing, 1.0, rng.random())?;

        let rec = match run_recurrence(&f, &params, &opts) {
            Ok(r) => r,
            Err(Error::RescaleDegenerate { .. }) => {
                report.rejected += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mixtures = rec.mixture.mixtures()?;
        let margin = mixtures
            .iter()
            .zip(gt.pixels())
            .map(|(m, g)| likelihood_kink_margin(m, g))
            .fold(f64::INFINITY, f64::min)
            .min(gm_kink_margin(&rec.mixture, &gt, &cfg))
            .min(pairing_margin(&rec.mixture, &gt));
        let near_clip = rec.mixture.scales.iter().flatten().any(|&b| b > opts.link.scale_hi - KINK_MARGIN);
        if margin < KINK_MARGIN || near_clip {
            report.rejected += 1;
            continue;
        }
        let upstream = evaluate(&rec.mixture, &gt, &cfg, true)?.grad.expect("gradient requested");
        let analytic = backward_recurrence(&params, &rec, &upstream, &opts.link, eta_mode)?.to_flat();
        let base = params.to_flat();
        for k in 0..base.len() {
            let at = |x: f64| {
                let mut flat = base.clone();
                flat[k] = x;
                let mut q = params.clone();
                q.assign_flat(&flat);
                Ok(loss_total(&run_recurrence(&f, &q, &opts)?.mixture, &gt, &cfg)?.0)
            };
            report.record(analytic[k], central_difference(at, base[k], FD_STEP)?);
        }
        report.instances += 1;
    }
    Ok(report)
}

/// Runs every suite with `trials` instances each.
pub fn run_all(seed: u64, trials: usize, tol: f64) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        check_intensity_gradients(seed, trials, tol)?,
        check_coverage_gradients(seed.wrapping_add(1), trials, tol)?,
        check_recurrence_gradients(seed.wrapping_add(2), trials, tol)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn small_suites_pass() {
        for r in run_all(7, 20, DEFAULT_TOLERANCE).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }
}
