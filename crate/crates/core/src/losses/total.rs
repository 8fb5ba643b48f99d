//! Image-level objective: per-pixel likelihood terms averaged over pixels with
//! at least one ground-truth layer, plus gradient matching on paired layers.

use rayon::prelude::*;

use super::gradient_matching::gm_value_and_grad;
use super::{
    canonical_sum, grad_coverage, grad_intensity, grad_intensity_weighted, grad_ordered, loss_coverage, loss_intensity,
    loss_intensity_weighted, loss_ordered, sign, LossConfig, ParamGrad,
};
use crate::depth_map::MultiLayerDepthMap;
use crate::error::{Error, Result};
use crate::intensity::{IntensityMixture, LaplaceComponent, MixtureRule};

/// `n` component maps over an image: per-pixel centers and scales.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureImage {
    pub height: usize,
    pub width: usize,
    pub rule: MixtureRule,
    /// `centers[j][p]` is component `j` at pixel `p`.
    pub centers: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
}

impl MixtureImage {
    pub fn new(height: usize, width: usize, rule: MixtureRule, centers: Vec<Vec<f64>>, scales: Vec<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() || centers.len() != scales.len() {
            return Err(Error::invalid("mixture image needs matching, nonempty center and scale maps"));
        }
        let n = height * width;
        if centers.iter().chain(&scales).any(|m| m.len() != n) {
            return Err(Error::invalid(format!("component maps must have {n} pixels")));
        }
        Ok(Self {
            height,
            width,
            rule,
            centers,
            scales,
        })
    }

    /// The same mixture at every pixel.
    pub fn uniform(height: usize, width: usize, mixture: &IntensityMixture) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            rule: mixture.rule(),
            centers: mixture.components().iter().map(|c| vec![c.center(); n]).collect(),
            scales: mixture.components().iter().map(|c| vec![c.scale(); n]).collect(),
        }
    }

    pub fn num_components(&self) -> usize {
        self.centers.len()
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_mixture(&self, p: usize) -> Result<IntensityMixture> {
        let comps = self
            .centers
            .iter()
            .zip(&self.scales)
            .map(|(c, s)| LaplaceComponent::new(c[p], s[p]))
            .collect::<Result<Vec<_>>>()?;
        IntensityMixture::new(comps, self.rule)
    }

    pub fn mixtures(&self) -> Result<Vec<IntensityMixture>> {
        (0..self.len()).map(|p| self.pixel_mixture(p)).collect()
    }

    /// Reorders the components; used to check permutation invariance.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            centers: order.iter().map(|&j| self.centers[j].clone()).collect(),
            scales: order.iter().map(|&j| self.scales[j].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Gradient of the image objective with respect to every component map.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureGrad {
    pub d: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub intensity: f64,
    pub coverage: f64,
    pub gradient_matching: f64,
    /// Pixels with at least one ground-truth layer.
    pub pixels: usize,
    pub gm_empty_mask: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub grad: Option<MixtureGrad>,
}

/// Greedy one-to-one pairing of component center maps to ground-truth layers
/// by ascending mean absolute difference over the layer's valid pixels.
/// Returns `(component, layer)` pairs.
pub fn pair_components(img: &MixtureImage, gt: &MultiLayerDepthMap) -> Vec<(usize, usize)> {
    let layers = gt.max_layers();
    let mut costs = Vec::new();
    for l in 0..layers {
        let image = gt.layer_image(l);
        let valid: Vec<(usize, f64)> = image.iter().enumerate().filter_map(|(p, v)| v.map(|v| (p, v))).collect();
        if valid.is_empty() {
            continue;
        }
        for (j, centers) in img.centers.iter().enumerate() {
            let cost = valid.iter().map(|&(p, g)| (centers[p] - g).abs()).sum::<f64>() / valid.len() as f64;
            costs.push((cost, j, l));
        }
    }
    costs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_c = vec![false; img.num_components()];
    let mut used_l = vec![false; layers];
    let mut pairs = Vec::new();
    for (_, j, l) in costs {
        if !used_c[j] && !used_l[l] {
            used_c[j] = true;
            used_l[l] = true;
            pairs.push((j, l));
        }
    }
    pairs.sort_by_key(|&(_, l)| l);
    pairs
}

fn index_pairing(img: &MixtureImage, gt: &MultiLayerDepthMap) -> Vec<(usize, usize)> {
    (0..img.num_components().min(gt.max_layers())).map(|j| (j, j)).collect()
}

struct PixelTerms {
    intensity: f64,
    coverage: f64,
    grad: Option<ParamGrad>,
}

/// Max-mixture terms straight from the component maps, with `ln(2b)` computed
/// once per component. Matches [`loss_intensity`] and [`loss_coverage`].
fn max_mixture_terms(img: &MixtureImage, p: usize, gts: &[f64], want_grad: bool) -> Result<PixelTerms> {
    let n = img.num_components();
    let mut d = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut log_norm = Vec::with_capacity(n);
    for j in 0..n {
        let c = LaplaceComponent::new(img.centers[j][p], img.scales[j][p])?;
        d.push(c.center());
        b.push(c.scale());
        log_norm.push((2.0 * c.scale()).ln());
    }
    if let Some(g) = gts.iter().find(|g| !g.is_finite()) {
        return Err(Error::invalid(format!("ground-truth depth must be finite, got {g}")));
    }
    let nll = |j: usize, g: f64| log_norm[j] + (g - d[j]).abs() / b[j];
    let mut grad = want_grad.then(|| ParamGrad::zeros(2 * n));
    let push = |grad: &mut Option<ParamGrad>, slot: usize, j: usize, g: f64| {
        if let Some(grad) = grad {
            let r = g - d[j];
            grad.d[slot] -= sign(r) / b[j];
            grad.b[slot] += 1.0 / b[j] - r.abs() / (b[j] * b[j]);
        }
    };

    let mut int_terms = Vec::with_capacity(gts.len());
    for &g in gts {
        let (mut best, mut best_val) = (0, nll(0, g));
        for j in 1..n {
            let v = nll(j, g);
            if v < best_val {
                best = j;
                best_val = v;
            }
        }
        int_terms.push(best_val);
        push(&mut grad, best, best, g);
    }
    let mut cov_terms = Vec::with_capacity(n);
    for j in 0..n {
        let (mut best, mut best_val) = (gts[0], nll(j, gts[0]));
        for &g in &gts[1..] {
            let v = nll(j, g);
            if v < best_val {
                best = g;
                best_val = v;
            }
        }
        cov_terms.push(best_val);
        push(&mut grad, n + j, j, best);
    }
    Ok(PixelTerms {
        intensity: canonical_sum(int_terms),
        coverage: canonical_sum(cov_terms),
        grad,
    })
}

fn pixel_terms(m: &IntensityMixture, gts: &[f64], want_grad: bool) -> Result<PixelTerms> {
    let (intensity, coverage, grad) = match m.rule() {
        MixtureRule::MaxMixture => {
            let g = if want_grad {
                Some((grad_intensity(m, gts)?, grad_coverage(m, gts)?))
            } else {
                None
            };
            (loss_intensity(m, gts)?, loss_coverage(m, gts)?, g)
        }
        MixtureRule::WeightedUniform => {
            let g = if want_grad {
                Some((grad_intensity_weighted(m, gts)?, grad_coverage(m, gts)?))
            } else {
                None
            };
            (loss_intensity_weighted(m, gts)?, loss_coverage(m, gts)?, g)
        }
        MixtureRule::Ordered => {
            let g = if want_grad {
                Some((grad_ordered(m, gts)?, ParamGrad::zeros(m.len())))
            } else {
                None
            };
            (loss_ordered(m, gts)?.value, 0.0, g)
        }
    };
    // pack the two gradients side by side; split again by the caller
    let grad = grad.map(|(gi, gc)| {
        let mut packed = ParamGrad::zeros(2 * m.len());
        packed.d[..m.len()].copy_from_slice(&gi.d);
        packed.b[..m.len()].copy_from_slice(&gi.b);
        packed.d[m.len()..].copy_from_slice(&gc.d);
        packed.b[m.len()..].copy_from_slice(&gc.b);
        packed
    });
    Ok(PixelTerms {
        intensity,
        coverage,
        grad,
    })
}

/// Evaluates `lambda_int L_int + lambda_cov L_cov + lambda_gm L_gm`.
///
/// The likelihood term follows `img.rule`: max-mixture, uniformly weighted
/// mixture, or the ordered per-layer NLL (which has no coverage term and pairs
/// component `i` with layer `i` for gradient matching).
pub fn evaluate(img: &MixtureImage, gt: &MultiLayerDepthMap, cfg: &LossConfig, want_grad: bool) -> Result<TotalLoss> {
    if gt.height() != img.height || gt.width() != img.width {
        return Err(Error::invalid(format!(
            "ground truth is {}x{} but the mixture image is {}x{}",
            gt.height(),
            gt.width(),
            img.height,
            img.width
        )));
    }
    let n = img.num_components();
    let terms: Vec<Option<PixelTerms>> = (0..img.len())
        .into_par_iter()
        .map(|p| {
            let gts = gt.pixel(p);
            if gts.is_empty() {
                return Ok(None);
            }
            match img.rule {
                MixtureRule::MaxMixture => max_mixture_terms(img, p, gts, want_grad).map(Some),
                _ => pixel_terms(&img.pixel_mixture(p)?, gts, want_grad).map(Some),
            }
        })
        .collect::<Result<_>>()?;

    let pixels = terms.iter().filter(|t| t.is_some()).count();
    let denom = pixels.max(1) as f64;
    let mut intensity = 0.0;
    let mut coverage = 0.0;
    for t in terms.iter().flatten() {
        intensity += t.intensity;
        coverage += t.coverage;
    }
    intensity /= denom;
    coverage /= denom;

    let pairs = match img.rule {
        MixtureRule::Ordered => index_pairing(img, gt),
        _ => pair_components(img, gt),
    };
    let layers = gt.max_layers();
    let hw = img.len();
    let mut pred = vec![vec![0.0; hw]; layers];
    let mut truth = vec![vec![0.0; hw]; layers];
    let mut valid = vec![vec![false; hw]; layers];
    for &(j, l) in &pairs {
        pred[l].clone_from(&img.centers[j]);
        for (p, v) in gt.layer_image(l).into_iter().enumerate() {
            if let Some(v) = v {
                truth[l][p] = v;
                valid[l][p] = true;
            }
        }
    }
    let mut gm_grad = (want_grad && cfg.lambda_gm != 0.0).then(|| vec![vec![0.0; hw]; layers]);
    let gm = gm_value_and_grad(&pred, &truth, &valid, img.height, img.width, cfg, gm_grad.as_deref_mut())?;

    let total = cfg.lambda_int * intensity + cfg.lambda_cov * coverage + cfg.lambda_gm * gm.value;

    let grad = want_grad.then(|| {
        let mut d = vec![vec![0.0; hw]; n];
        let mut b = vec![vec![0.0; hw]; n];
        let wi = cfg.lambda_int / denom;
        let wc = cfg.lambda_cov / denom;
        for (p, t) in terms.iter().enumerate() {
            let Some(g) = t.as_ref().and_then(|t| t.grad.as_ref()) else {
                continue;
            };
            for j in 0..n {
                d[j][p] = wi * g.d[j] + wc * g.d[n + j];
                b[j][p] = wi * g.b[j] + wc * g.b[n + j];
            }
        }
        if let Some(gm_grad) = &gm_grad {
            for &(j, l) in &pairs {
                for p in 0..hw {
                    d[j][p] += cfg.lambda_gm * gm_grad[l][p];
                }
            }
        }
        MixtureGrad { d, b }
    });

    Ok(TotalLoss {
        breakdown: LossBreakdown {
            total,
            intensity,
            coverage,
            gradient_matching: gm.value,
            pixels,
            gm_empty_mask: gm.empty_mask,
        },
        grad,
    })
}

/// Weighted objective and its per-term breakdown.
pub fn loss_total(img: &MixtureImage, gt: &MultiLayerDepthMap, cfg: &LossConfig) -> Result<(f64, LossBreakdown)> {
    let t = evaluate(img, gt, cfg, false)?;
    Ok((t.breakdown.total, t.breakdown))
}
