//! Training objectives over Laplace mixtures.
//!
//! Per-pixel terms:
//! - intensity likelihood `-sum_i log max_j L_j(g_i)` ([`loss_intensity`])
//! - component coverage `-sum_j log max_i L_j(g_i)` ([`loss_coverage`])
//! - the ablation objectives (weighted mixture, ordered, SiLog, L1)
//!
//! Sums over ground-truth depths and over components are taken in a canonical
//! order (terms sorted ascending), so reordering either input set leaves the
//! result bitwise unchanged.
//!
//! Image-level aggregation and the gradient-matching term live in [`total`]
//! and [`gradient_matching`].

pub mod gradient_matching;
pub mod total;

use serde::{Deserialize, Serialize};

use crate::depth_map::{DepthUnits, MultiLayerDepthMap};
use crate::error::{Error, Result};
use crate::intensity::{log_sum_exp, IntensityMixture, MixtureRule};

pub use gradient_matching::{loss_gradient_matching, GmLoss, GmWeightMode};
pub use total::{loss_total, LossBreakdown, MixtureGrad, MixtureImage, TotalLoss};

/// Weights and bounds shared by every objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_int: f64,
    pub lambda_cov: f64,
    pub lambda_gm: f64,
    pub gm_weights: Vec<f64>,
    pub gm_num_scales: usize,
    pub gm_weight_mode: GmWeightMode,
    pub scale_clip_lo: f64,
    pub scale_clip_hi: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_int: 1.0,
            lambda_cov: 0.1,
            lambda_gm: 1.0,
            gm_weights: vec![1.2, 1.0, 1.0, 1.0],
            gm_num_scales: 4,
            gm_weight_mode: GmWeightMode::PerLayer,
            scale_clip_lo: 1.0,
            scale_clip_hi: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_int", self.lambda_int),
            ("lambda_cov", self.lambda_cov),
            ("lambda_gm", self.lambda_gm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        if !(self.scale_clip_lo > 0.0 && self.scale_clip_lo <= self.scale_clip_hi) {
            return Err(Error::Config(format!(
                "scale clip range [{}, {}] is invalid",
                self.scale_clip_lo, self.scale_clip_hi
            )));
        }
        if self.gm_num_scales == 0 {
            return Err(Error::Config("gm_num_scales must be at least 1".into()));
        }
        Ok(())
    }

    pub fn clip_scale(&self, b: f64) -> f64 {
        b.clamp(self.scale_clip_lo, self.scale_clip_hi)
    }
}

/// Partial derivatives of a per-pixel loss with respect to each component's
/// center (`d`) and scale (`b`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub d: Vec<f64>,
    pub b: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            d: vec![0.0; n],
            b: vec![0.0; n],
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &ParamGrad) {
        for (a, b) in self.d.iter_mut().zip(&other.d) {
            *a += alpha * b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += alpha * b;
        }
    }
}

/// A depth map mapped to zero median and unit mean absolute deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDepth {
    pub map: MultiLayerDepthMap,
    pub shift: f64,
    pub scale: f64,
}

/// `t = median(d)`, `s = mean |d - t|`, `d' = (d - t) / s`, with `t` and `s`
/// taken jointly over every layer of every pixel.
pub fn normalize_scale_invariant(map: &MultiLayerDepthMap) -> Result<NormalizedDepth> {
    let (shift, scale) = shift_and_scale(map.all_depths())?;
    let out = map.map_depths(DepthUnits::Normalized, |d| (d - shift) / scale)?;
    Ok(NormalizedDepth {
        map: out,
        shift,
        scale,
    })
}

/// Median and mean absolute deviation about the median.
pub fn shift_and_scale(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("normalization needs at least one depth value"));
    }
    let shift = median(values);
    let scale = values.iter().map(|d| (d - shift).abs()).sum::<f64>() / values.len() as f64;
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::DegenerateScale {
            count: values.len(),
            value: shift,
        });
    }
    Ok((shift, scale))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn require_rule(m: &IntensityMixture, rule: MixtureRule, what: &str) -> Result<()> {
    if m.rule() == rule {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} expects a {rule:?} mixture, got {:?}", m.rule())))
    }
}

fn check_gts(gts: &[f64]) -> Result<()> {
    match gts.iter().find(|g| !g.is_finite()) {
        Some(g) => Err(Error::invalid(format!("ground-truth depth must be finite, got {g}"))),
        None => Ok(()),
    }
}

/// `-sum_i log max_j L_j(g_i)`. An empty ground-truth set contributes zero.
pub fn loss_intensity(m: &IntensityMixture, gts: &[f64]) -> Result<f64> {
    require_rule(m, MixtureRule::MaxMixture, "loss_intensity")?;
    check_gts(gts)?;
    Ok(canonical_sum(gts.iter().map(|&g| -m.max_log_density(g)).collect()))
}

/// `-sum_j log max_i L_j(g_i)`. An empty ground-truth set contributes zero.
pub fn loss_coverage(m: &IntensityMixture, gts: &[f64]) -> Result<f64> {
    check_gts(gts)?;
    if gts.is_empty() {
        return Ok(0.0);
    }
    let terms = m
        .components()
        .iter()
        .map(|c| {
            -gts.iter()
                .map(|&g| c.log_density(g))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(canonical_sum(terms))
}

/// Contribution of `-log L(g)` for one component to its partials.
#[inline]
fn accumulate_nll_grad(grad: &mut ParamGrad, j: usize, center: f64, scale: f64, g: f64, weight: f64) {
    let r = g - center;
    grad.d[j] += -weight * sign(r) / scale;
    grad.b[j] += weight * (1.0 / scale - r.abs() / (scale * scale));
}

/// Subgradient of [`loss_intensity`]: each ground-truth depth feeds only the
/// component that is maximal there (lowest index on ties).
pub fn grad_intensity(m: &IntensityMixture, gts: &[f64]) -> Result<ParamGrad> {
    require_rule(m, MixtureRule::MaxMixture, "grad_intensity")?;
    check_gts(gts)?;
    let mut grad = ParamGrad::zeros(m.len());
    for &g in gts {
        let j = m.argmax_unchecked(g);
        let c = m.components()[j];
        accumulate_nll_grad(&mut grad, j, c.center(), c.scale(), g, 1.0);
    }
    Ok(grad)
}

/// Subgradient of [`loss_coverage`]: each component is pulled by its
/// best-matching ground-truth depth (first one on ties).
pub fn grad_coverage(m: &IntensityMixture, gts: &[f64]) -> Result<ParamGrad> {
    check_gts(gts)?;
    let mut grad = ParamGrad::zeros(m.len());
    if gts.is_empty() {
        return Ok(grad);
    }
    for (j, c) in m.components().iter().enumerate() {
        let mut best = gts[0];
        let mut best_val = c.log_density(best);
        for &g in &gts[1..] {
            let v = c.log_density(g);
            if v > best_val {
                best = g;
                best_val = v;
            }
        }
        accumulate_nll_grad(&mut grad, j, c.center(), c.scale(), best, 1.0);
    }
    Ok(grad)
}

/// Gradient of `w_int * L_int + w_cov * L_cov`.
pub fn grad_losses(m: &IntensityMixture, gts: &[f64], w_int: f64, w_cov: f64) -> Result<ParamGrad> {
    let mut grad = ParamGrad::zeros(m.len());
    grad.axpy(w_int, &grad_intensity(m, gts)?);
    grad.axpy(w_cov, &grad_coverage(m, gts)?);
    Ok(grad)
}

/// Negative log likelihood under the uniformly weighted mixture `(1/n) sum_j L_j`.
pub fn loss_intensity_weighted(m: &IntensityMixture, gts: &[f64]) -> Result<f64> {
    check_gts(gts)?;
    let log_n = (m.len() as f64).ln();
    let terms = gts
        .iter()
        .map(|&g| {
            let logs: Vec<f64> = m.components().iter().map(|c| c.log_density(g)).collect();
            log_n - log_sum_exp(&logs)
        })
        .collect();
    Ok(canonical_sum(terms))
}

/// Gradient of [`loss_intensity_weighted`]; each component is weighted by its responsibility.
pub fn grad_intensity_weighted(m: &IntensityMixture, gts: &[f64]) -> Result<ParamGrad> {
    check_gts(gts)?;
    let mut grad = ParamGrad::zeros(m.len());
    for &g in gts {
        let logs: Vec<f64> = m.components().iter().map(|c| c.log_density(g)).collect();
        let lse = log_sum_exp(&logs);
        for (j, c) in m.components().iter().enumerate() {
            let resp = (logs[j] - lse).exp();
            accumulate_nll_grad(&mut grad, j, c.center(), c.scale(), g, resp);
        }
    }
    Ok(grad)
}

/// Value of a per-layer matched loss together with how many layers were paired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedLoss {
    pub value: f64,
    pub matched: usize,
    /// Layers left over on the longer side after truncating to the shorter one.
    pub unmatched: usize,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Ordered parameterization: component `i` is the NLL model of the `i`-th
/// nearest ground-truth depth, `sum_i [log(2 b_i) + |g_i - d_i| / b_i]`.
pub fn loss_ordered(m: &IntensityMixture, gts: &[f64]) -> Result<MatchedLoss> {
    check_gts(gts)?;
    let gts = sorted(gts);
    let k = gts.len().min(m.len());
    let value = m
        .components()
        .iter()
        .zip(&gts)
        .map(|(c, &g)| -c.log_density(g))
        .sum();
    Ok(MatchedLoss {
        value,
        matched: k,
        unmatched: gts.len().max(m.len()) - k,
    })
}

pub fn grad_ordered(m: &IntensityMixture, gts: &[f64]) -> Result<ParamGrad> {
    check_gts(gts)?;
    let gts = sorted(gts);
    let mut grad = ParamGrad::zeros(m.len());
    for (j, (c, &g)) in m.components().iter().zip(&gts).enumerate() {
        accumulate_nll_grad(&mut grad, j, c.center(), c.scale(), g, 1.0);
    }
    Ok(grad)
}

/// Mean absolute error between sorted predictions and sorted ground truth.
pub fn loss_l1(pred: &[f64], gt: &[f64]) -> Result<MatchedLoss> {
    check_gts(pred)?;
    check_gts(gt)?;
    let (p, g) = (sorted(pred), sorted(gt));
    let k = p.len().min(g.len());
    let value = if k == 0 {
        0.0
    } else {
        p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64
    };
    Ok(MatchedLoss {
        value,
        matched: k,
        unmatched: p.len().max(g.len()) - k,
    })
}

/// Scale-invariant log loss `mean(e^2) - lambda * mean(e)^2` with
/// `e = ln p - ln g` over sorted, truncated layer lists. Depths must be positive.
pub fn loss_silog(pred: &[f64], gt: &[f64], lambda: f64) -> Result<MatchedLoss> {
    if pred.iter().chain(gt).any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::invalid("SiLog needs positive finite depths"));
    }
    let (p, g) = (sorted(pred), sorted(gt));
    let k = p.len().min(g.len());
    let value = if k == 0 {
        0.0
    } else {
        let e: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a.ln() - b.ln()).collect();
        let mean = e.iter().sum::<f64>() / k as f64;
        let mean_sq = e.iter().map(|x| x * x).sum::<f64>() / k as f64;
        mean_sq - lambda * mean * mean
    };
    Ok(MatchedLoss {
        value,
        matched: k,
        unmatched: p.len().max(g.len()) - k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn mix(pairs: &[(f64, f64)]) -> IntensityMixture {
        IntensityMixture::from_pairs(pairs).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let map = MultiLayerDepthMap::from_pixels(1, 3, DepthUnits::Raw, vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let n = normalize_scale_invariant(&map).unwrap();
        assert_eq!(n.shift, 2.0);
        assert!((n.scale - 2.0 / 3.0).abs() < 1e-15);
        let got: Vec<f64> = n.map.all_depths().to_vec();
        for (a, b) in got.iter().zip([-1.5, 0.0, 1.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(n.map.units(), DepthUnits::Normalized);

        let fixed = MultiLayerDepthMap::from_pixels(
            1,
            2,
            DepthUnits::Normalized,
            vec![vec![-1.5, 0.0], vec![1.5]],
        )
        .unwrap();
        let n = normalize_scale_invariant(&fixed).unwrap();
        assert_eq!((n.shift, n.scale), (0.0, 1.0));
        assert_eq!(n.map.all_depths(), fixed.all_depths());

        let flat = MultiLayerDepthMap::uniform(2, 2, DepthUnits::Raw, &[3.0]).unwrap();
        assert!(matches!(normalize_scale_invariant(&flat), Err(Error::DegenerateScale { .. })));
        let empty = MultiLayerDepthMap::uniform(2, 2, DepthUnits::Raw, &[]).unwrap();
        assert!(normalize_scale_invariant(&empty).is_err());
    }

    #[test]
    fn intensity_loss_examples() {
        assert!((loss_intensity(&mix(&[(0.7, 1.0)]), &[0.7]).unwrap() - LN2).abs() < 1e-15);
        let m = mix(&[(1.0, 1.0), (3.0, 1.0)]);
        assert!((loss_intensity(&m, &[1.0, 3.0]).unwrap() - 2.0 * LN2).abs() < 1e-15);
        assert_eq!(
            loss_intensity(&m, &[3.0, 1.0]).unwrap(),
            loss_intensity(&m, &[1.0, 3.0]).unwrap()
        );
        assert_eq!(loss_intensity(&m, &[]).unwrap(), 0.0);
    }

    #[test]
    fn coverage_loss_examples() {
        assert!((loss_coverage(&mix(&[(0.7, 1.0)]), &[0.7]).unwrap() - LN2).abs() < 1e-15);
        let m = mix(&[(1.0, 1.0), (5.0, 1.0)]);
        let v = loss_coverage(&m, &[1.0]).unwrap();
        assert!((v - (2.0 * LN2 + 4.0)).abs() < 1e-14);
        assert!((v - 5.386_294_4).abs() < 1e-7);
        let swapped = mix(&[(5.0, 1.0), (1.0, 1.0)]);
        assert_eq!(loss_coverage(&swapped, &[1.0]).unwrap(), v);
    }

    #[test]
    fn gradient_examples() {
        let g = grad_intensity(&mix(&[(1.0, 1.0)]), &[2.0]).unwrap();
        assert_eq!((g.d[0], g.b[0]), (-1.0, 0.0));
        let g = grad_intensity(&mix(&[(1.5, 2.0)]), &[1.5]).unwrap();
        assert_eq!((g.d[0], g.b[0]), (0.0, 0.5));
        // only the argmax component receives the intensity gradient
        let g = grad_intensity(&mix(&[(0.0, 1.0), (5.0, 1.0)]), &[0.5]).unwrap();
        assert_eq!((g.d[1], g.b[1]), (0.0, 0.0));
        // every component receives a coverage gradient
        let g = grad_coverage(&mix(&[(0.0, 1.0), (5.0, 1.0)]), &[0.5]).unwrap();
        assert_eq!(g.d[1], 1.0);
        assert_eq!(g.b[1], 1.0 - 4.5);
    }

    #[test]
    fn weighted_loss_matches_direct_formula() {
        let m = mix(&[(1.0, 1.0), (3.0, 1.0)]);
        let direct = -((0.5 + 0.5 * (-2.0f64).exp()) / 2.0).ln();
        assert!((loss_intensity_weighted(&m, &[1.0]).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn ordered_loss() {
        let m = mix(&[(1.0, 1.0), (2.0, 1.0), (4.0, 1.0)]);
        let l = loss_ordered(&m, &[2.0, 1.0]).unwrap();
        assert!((l.value - 2.0 * LN2).abs() < 1e-15);
        assert_eq!((l.matched, l.unmatched), (2, 1));
        let l = loss_ordered(&m, &[1.0, 2.0, 4.0]).unwrap();
        assert!((l.value - 3.0 * LN2).abs() < 1e-15);
        let g = grad_ordered(&m, &[1.5]).unwrap();
        assert_eq!(g.d, vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn l1_and_silog() {
        let l = loss_l1(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert_eq!(l.value, 0.0);
        let l = loss_l1(&[1.0, 2.0, 9.0], &[1.5, 2.5]).unwrap();
        assert_eq!((l.value, l.matched, l.unmatched), (0.5, 2, 1));
        let gt = [1.0, 2.5, 4.0];
        let pred: Vec<f64> = gt.iter().map(|g| 3.7 * g).collect();
        assert!(loss_silog(&pred, &gt, 1.0).unwrap().value.abs() < 1e-14);
        assert!(loss_silog(&pred, &gt, 0.5).unwrap().value > 0.0);
        assert!(loss_silog(&[-1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn rule_checks() {
        let w = mix(&[(1.0, 1.0)]).with_rule(MixtureRule::WeightedUniform);
        assert!(loss_intensity(&w, &[1.0]).is_err());
        assert!(loss_intensity(&mix(&[(1.0, 1.0)]), &[f64::NAN]).is_err());
    }
}
