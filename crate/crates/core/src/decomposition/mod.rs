//! Recurrent decomposition of a mixed feature image into components.
//!
//! With decomposer `D`, remapper `R` and predictor `P` (all affine maps
//! applied per pixel), step `i` computes
//!
//! ```text
//! C_i = D(F_{i-1})
//! F'  = R(C_i)
//! eta = ||F_{i-1}|| / ||F'||          (norms over the whole image)
//! F_i = F_{i-1} - eta * F'
//! (d_i, b_i) = link(P(C_i))
//! ```
//!
//! The forward pass records a tape that [`backward_recurrence`] replays in
//! reverse, including the dependence of `eta` on both norms.

mod checkpoint;
mod fit;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::MixtureRule;
use crate::losses::{MixtureGrad, MixtureImage};

pub use checkpoint::{read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, CHECKPOINT_MAGIC};
pub use fit::{fit, fit_from, FitConfig, FitResult, TraceEntry};

/// Pixels per work unit; fixed so results do not depend on the thread count.
const PIXEL_CHUNK: usize = 256;

/// Below this remapped norm the rescaling factor is treated as undefined.
pub const MIN_REMAP_NORM: f64 = 1e-12;

/// Dense `height x width` image with a `dim`-vector per pixel, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseImage {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

/// Per-pixel feature vectors `F_i`.
pub type FeatureImage = DenseImage;
/// Per-pixel component vectors `C_i`.
pub type ComponentMap = DenseImage;

impl DenseImage {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * dim {
            return Err(Error::invalid(format!(
                "{height}x{width}x{dim} image needs {} values, got {}",
                height * width * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image entries must be finite"));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        Self {
            height,
            width,
            dim,
            data: vec![0.0; height * width * dim],
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.data[p * self.dim..(p + 1) * self.dim]
    }

    /// Euclidean norm over every entry of the image.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Affine map `y = W x + c` with `W` stored row-major (`out x in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn random(out_dim: usize, in_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = scale / (in_dim as f64).sqrt();
        let mut l = Self::zeros(out_dim, in_dim);
        l.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        l
    }

    /// Identity map (square only); handy for hand-checkable cases.
    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        (0..dim).for_each(|i| l.weight[i * dim + i] = 1.0);
        l
    }

    #[inline]
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *yo = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `dW += gy x^T`, `dc += gy` into `grad` and `gx += W^T gy`.
    #[inline]
    fn backward(&self, x: &[f64], gy: &[f64], grad: &mut Linear, gx: &mut [f64]) {
        for (o, &g) in gy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.in_dim..(o + 1) * self.in_dim;
            for (gw, xi) in grad.weight[row.clone()].iter_mut().zip(x) {
                *gw += g * xi;
            }
            for (gxi, w) in gx.iter_mut().zip(&self.weight[row]) {
                *gxi += w * g;
            }
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn add(&mut self, other: &Linear) {
        self.weight.iter_mut().zip(&other.weight).for_each(|(a, b)| *a += b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
    }
}

/// Whether each iteration has its own predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorSharing {
    #[default]
    Shared,
    PerIteration,
}

/// Whether gradients flow through the rescaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMode {
    #[default]
    Attached,
    Detached,
}

/// Maps raw predictor outputs to a Laplace center and scale:
/// `d = raw_d`, `b = min(lo + softplus(raw_b), hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputLink {
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for OutputLink {
    fn default() -> Self {
        Self {
            scale_lo: 1.0,
            scale_hi: 10.0,
        }
    }
}

impl OutputLink {
    #[inline]
    pub fn scale(&self, raw: f64) -> f64 {
        (self.scale_lo + softplus(raw)).min(self.scale_hi)
    }

    /// Derivative of [`OutputLink::scale`]; zero once the upper clip is active.
    #[inline]
    pub fn scale_derivative(&self, raw: f64) -> f64 {
        if self.scale_lo + softplus(raw) < self.scale_hi {
            sigmoid(raw)
        } else {
            0.0
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of the decomposer, remapper and predictor(s).
#[derive(Debug, Clone, PartialEq)]
pub struct DecompParams {
    pub feature_dim: usize,
    pub component_dim: usize,
    pub iterations: usize,
    /// `component_dim x feature_dim`
    pub decomposer: Linear,
    /// `feature_dim x component_dim`
    pub remapper: Linear,
    /// `2 x component_dim` each; one entry when shared, `iterations` otherwise.
    pub predictors: Vec<Linear>,
}

impl DecompParams {
    pub fn zeros(feature_dim: usize, component_dim: usize, iterations: usize, sharing: PredictorSharing) -> Self {
        let heads = match sharing {
            PredictorSharing::Shared => 1,
            PredictorSharing::PerIteration => iterations,
        };
        Self {
            feature_dim,
            component_dim,
            iterations,
            decomposer: Linear::zeros(component_dim, feature_dim),
            remapper: Linear::zeros(feature_dim, component_dim),
            predictors: vec![Linear::zeros(2, component_dim); heads],
        }
    }

    /// Uniform random weights in `+-scale / sqrt(fan_in)`, zero biases.
    pub fn init(
        feature_dim: usize,
        component_dim: usize,
        iterations: usize,
        sharing: PredictorSharing,
        scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if feature_dim == 0 || component_dim == 0 || iterations == 0 {
            return Err(Error::invalid("feature_dim, component_dim and iterations must all be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(feature_dim, component_dim, iterations, sharing);
        p.decomposer = Linear::random(component_dim, feature_dim, scale, &mut rng);
        p.remapper = Linear::random(feature_dim, component_dim, scale, &mut rng);
        for head in &mut p.predictors {
            *head = Linear::random(2, component_dim, scale, &mut rng);
        }
        Ok(p)
    }

    pub fn sharing(&self) -> PredictorSharing {
        if self.predictors.len() == 1 {
            PredictorSharing::Shared
        } else {
            PredictorSharing::PerIteration
        }
    }

    pub fn predictor(&self, iteration: usize) -> &Linear {
        &self.predictors[iteration.min(self.predictors.len() - 1)]
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        [&self.decomposer, &self.remapper].into_iter().chain(&self.predictors)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        [&mut self.decomposer, &mut self.remapper].into_iter().chain(&mut self.predictors)
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Linear::len).sum()
    }

    /// All weights then biases of each map, in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length mismatch");
        let mut off = 0;
        for l in self.layers_mut() {
            let (w, b) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&flat[off..off + w]);
            l.bias.copy_from_slice(&flat[off + w..off + w + b]);
            off += w + b;
        }
    }

    fn check_features(&self, f: &FeatureImage) -> Result<()> {
        if f.dim != self.feature_dim {
            return Err(Error::invalid(format!(
                "feature image has dim {} but parameters expect {}",
                f.dim, self.feature_dim
            )));
        }
        Ok(())
    }
}

/// One recorded iteration.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// `F_{i-1}`
    pub input: FeatureImage,
    /// `C_i`
    pub component: ComponentMap,
    /// `R(C_i)`
    pub remapped: FeatureImage,
    pub eta: f64,
    pub input_norm: f64,
    pub remapped_norm: f64,
    /// Raw predictor outputs, two per pixel.
    pub raw: Vec<f64>,
    /// True when the remapped norm was degenerate and `eta` fell back to zero.
    pub degenerate: bool,
}

impl StepRecord {
    /// `| ||eta R(C)|| - ||F_prev|| | / ||F_prev||`.
    pub fn eta_identity_error(&self) -> f64 {
        if self.degenerate || self.input_norm == 0.0 {
            return 0.0;
        }
        (self.eta * self.remapped_norm - self.input_norm).abs() / self.input_norm
    }
}

/// Output of [`run_recurrence`]; the step records double as the tape.
#[derive(Debug, Clone)]
pub struct Recurrence {
    pub steps: Vec<StepRecord>,
    pub residual: FeatureImage,
    pub mixture: MixtureImage,
}

impl Recurrence {
    pub fn max_eta_identity_error(&self) -> f64 {
        self.steps.iter().map(StepRecord::eta_identity_error).fold(0.0, f64::max)
    }
}

fn step_record(f_prev: &FeatureImage, params: &DecompParams, iteration: usize, allow_degenerate: bool) -> Result<(StepRecord, FeatureImage)> {
    let (c_dim, f_dim) = (params.component_dim, params.feature_dim);
    let n = f_prev.pixels();
    let mut component = DenseImage::zeros(f_prev.height, f_prev.width, c_dim);
    let mut remapped = DenseImage::zeros(f_prev.height, f_prev.width, f_dim);
    let mut raw = vec![0.0; 2 * n];
    let head = params.predictor(iteration);
    component
        .data
        .par_chunks_mut(PIXEL_CHUNK * c_dim)
        .zip(remapped.data.par_chunks_mut(PIXEL_CHUNK * f_dim))
        .zip(raw.par_chunks_mut(PIXEL_CHUNK * 2))
        .enumerate()
        .for_each(|(k, ((cs, rs), raws))| {
            let first = k * PIXEL_CHUNK;
            for (q, ((c, r), o)) in cs
                .chunks_exact_mut(c_dim)
                .zip(rs.chunks_exact_mut(f_dim))
                .zip(raws.chunks_exact_mut(2))
                .enumerate()
            {
                params.decomposer.apply(f_prev.pixel(first + q), c);
                params.remapper.apply(c, r);
                head.apply(c, o);
            }
        });
    let input_norm = f_prev.norm();
    let remapped_norm = remapped.norm();
    let degenerate = remapped_norm < MIN_REMAP_NORM;
    if degenerate && !allow_degenerate {
        return Err(Error::RescaleDegenerate {
            iteration,
            norm: remapped_norm,
        });
    }
    let eta = if degenerate { 0.0 } else { input_norm / remapped_norm };
    let mut next = f_prev.clone();
    for (v, r) in next.data.iter_mut().zip(&remapped.data) {
        *v -= eta * r;
    }
    Ok((
        StepRecord {
            input: f_prev.clone(),
            component,
            remapped,
            eta,
            input_norm,
            remapped_norm,
            raw,
            degenerate,
        },
        next,
    ))
}

/// One decomposition step: `(C, F_next, eta)`.
pub fn decompose_step(f_prev: &FeatureImage, params: &DecompParams) -> Result<(ComponentMap, FeatureImage, f64)> {
    params.check_features(f_prev)?;
    let (rec, next) = step_record(f_prev, params, 0, false)?;
    Ok((rec.component, next, rec.eta))
}

/// Options for [`run_recurrence`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecurrenceOptions {
    pub link: OutputLink,
    pub rule: MixtureRule,
    /// Use `eta = 0` instead of failing when the remapped norm vanishes.
    pub degenerate_fallback: bool,
}

/// Runs all iterations and maps each component to per-pixel Laplace parameters.
pub fn run_recurrence(f0: &FeatureImage, params: &DecompParams, opts: &RecurrenceOptions) -> Result<Recurrence> {
    params.check_features(f0)?;
    let mut steps = Vec::with_capacity(params.iterations);
    let mut current = f0.clone();
    let mut centers = Vec::with_capacity(params.iterations);
    let mut scales = Vec::with_capacity(params.iterations);
    for i in 0..params.iterations {
        let (rec, next) = step_record(&current, params, i, opts.degenerate_fallback)?;
        centers.push(rec.raw.chunks_exact(2).map(|r| r[0]).collect());
        scales.push(rec.raw.chunks_exact(2).map(|r| opts.link.scale(r[1])).collect());
        steps.push(rec);
        current = next;
    }
    let mixture = MixtureImage::new(f0.height, f0.width, opts.rule, centers, scales)?;
    Ok(Recurrence {
        steps,
        residual: current,
        mixture,
    })
}

/// Reverse-mode gradient of a loss through the recurrence.
///
/// `upstream` holds the loss gradient with respect to every component's
/// center and scale maps (as produced by [`crate::losses::total::evaluate`]).
pub fn backward_recurrence(
    params: &DecompParams,
    tape: &Recurrence,
    upstream: &MixtureGrad,
    link: &OutputLink,
    eta_mode: EtaMode,
) -> Result<DecompParams> {
    if tape.steps.len() != params.iterations {
        return Err(Error::invalid(format!(
            "tape has {} steps but parameters run {} iterations",
            tape.steps.len(),
            params.iterations
        )));
    }
    if upstream.d.len() != params.iterations || upstream.b.len() != params.iterations {
        return Err(Error::invalid("upstream gradient must cover every iteration"));
    }
    let mut grads = DecompParams::zeros(params.feature_dim, params.component_dim, params.iterations, params.sharing());
    let (c_dim, f_dim) = (params.component_dim, params.feature_dim);
    let n = tape.residual.pixels();
    // dL/dF_i; F_n itself does not reach the loss
    let mut g_f = vec![0.0; n * f_dim];
    let mut g_remap = vec![0.0; n * f_dim];

    for (i, rec) in tape.steps.iter().enumerate().rev() {
        let head = params.predictor(i);
        let head_idx = i.min(params.predictors.len() - 1);

        // F_i = F_{i-1} - eta * F'
        let g_eta: f64 = -g_f.iter().zip(&rec.remapped.data).map(|(g, r)| g * r).sum::<f64>();
        let attached = eta_mode == EtaMode::Attached && !rec.degenerate;
        let (a, r) = (rec.input_norm, rec.remapped_norm);
        let coef_remap = if attached { -g_eta * a / (r * r * r) } else { 0.0 };
        for ((gr, gf), rv) in g_remap.iter_mut().zip(&g_f).zip(&rec.remapped.data) {
            *gr = -rec.eta * gf + coef_remap * rv;
        }
        if attached && a > 0.0 {
            let coef_in = g_eta / (a * r);
            for (gf, fv) in g_f.iter_mut().zip(&rec.input.data) {
                *gf += coef_in * fv;
            }
        }
        // g_f now holds the direct path dL/dF_{i-1}; add the decomposer path per
        // pixel, one partial gradient per fixed chunk, summed in chunk order
        let partials: Vec<(Linear, Linear, Linear)> = g_f
            .par_chunks_mut(PIXEL_CHUNK * f_dim)
            .enumerate()
            .map(|(k, gf_chunk)| {
                let mut gp = Linear::zeros(2, c_dim);
                let mut gr = Linear::zeros(f_dim, c_dim);
                let mut gd = Linear::zeros(c_dim, f_dim);
                let mut g_c = vec![0.0; c_dim];
                for (q, gx) in gf_chunk.chunks_exact_mut(f_dim).enumerate() {
                    let p = k * PIXEL_CHUNK + q;
                    let c = rec.component.pixel(p);
                    g_c.iter_mut().for_each(|v| *v = 0.0);
                    let g_raw = [upstream.d[i][p], upstream.b[i][p] * link.scale_derivative(rec.raw[2 * p + 1])];
                    head.backward(c, &g_raw, &mut gp, &mut g_c);
                    params.remapper.backward(c, &g_remap[p * f_dim..(p + 1) * f_dim], &mut gr, &mut g_c);
                    params.decomposer.backward(rec.input.pixel(p), &g_c, &mut gd, gx);
                }
                (gp, gr, gd)
            })
            .collect();
        for (gp, gr, gd) in &partials {
            grads.predictors[head_idx].add(gp);
            grads.remapper.add(gr);
            grads.decomposer.add(gd);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(h: usize, w: usize, dim: usize, seed: u64) -> FeatureImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseImage::new(h, w, dim, data).unwrap()
    }

    #[test]
    fn eta_definition() {
        // F_prev has norm 10; R(C) = F_prev / 2 has norm 5
        let f = DenseImage::new(1, 1, 2, vec![6.0, 8.0]).unwrap();
        let mut p = DecompParams::zeros(2, 2, 1, PredictorSharing::Shared);
        p.decomposer = Linear::identity(2);
        p.remapper = Linear::identity(2);
        p.remapper.weight.iter_mut().for_each(|w| *w *= 0.5);
        let (_, next, eta) = decompose_step(&f, &p).unwrap();
        assert_eq!(eta, 2.0);
        assert!(next.data.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn identity_maps_explain_everything() {
        let f = random_image(3, 4, 5, 1);
        let mut p = DecompParams::zeros(5, 5, 1, PredictorSharing::Shared);
        p.decomposer = Linear::identity(5);
        p.remapper = Linear::identity(5);
        let (c, next, eta) = decompose_step(&f, &p).unwrap();
        assert!((eta - 1.0).abs() < 1e-15);
        assert_eq!(c, f);
        assert!(next.data.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn eta_identity_holds_on_random_steps() {
        for seed in 0..20 {
            let f = random_image(4, 3, 6, seed);
            let p = DecompParams::init(6, 3, 4, PredictorSharing::Shared, 1.0, seed + 100).unwrap();
            let rec = run_recurrence(&f, &p, &RecurrenceOptions::default()).unwrap();
            assert!(rec.max_eta_identity_error() < 1e-12);
        }
    }

    #[test]
    fn degenerate_remap_is_an_error_unless_fallback() {
        let f = random_image(2, 2, 3, 7);
        let p = DecompParams::zeros(3, 2, 2, PredictorSharing::Shared);
        let err = run_recurrence(&f, &p, &RecurrenceOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RescaleDegenerate { iteration: 0, .. }));
        let opts = RecurrenceOptions {
            degenerate_fallback: true,
            ..Default::default()
        };
        let rec = run_recurrence(&f, &p, &opts).unwrap();
        assert!(rec.steps.iter().all(|s| s.degenerate && s.eta == 0.0));
        assert_eq!(rec.residual, f);
    }

    #[test]
    fn single_iteration_is_predictor_of_decomposer() {
        let f = random_image(2, 3, 4, 3);
        let p = DecompParams::init(4, 3, 1, PredictorSharing::Shared, 1.0, 9).unwrap();
        let link = OutputLink::default();
        let rec = run_recurrence(&f, &p, &RecurrenceOptions::default()).unwrap();
        for px in 0..f.pixels() {
            let mut c = vec![0.0; 3];
            p.decomposer.apply(f.pixel(px), &mut c);
            let mut raw = [0.0; 2];
            p.predictors[0].apply(&c, &mut raw);
            assert_eq!(rec.mixture.centers[0][px], raw[0]);
            assert_eq!(rec.mixture.scales[0][px], link.scale(raw[1]));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let f = random_image(2, 2, 3, 5);
        let p = DecompParams::init(3, 2, 3, PredictorSharing::Shared, 1.0, 2).unwrap();
        let rec = run_recurrence(&f, &p, &RecurrenceOptions::default()).unwrap();
        let zero = MixtureGrad {
            d: vec![vec![0.0; 4]; 3],
            b: vec![vec![0.0; 4]; 3],
        };
        let g = backward_recurrence(&p, &rec, &zero, &OutputLink::default(), EtaMode::Attached).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
    }

    fn fd_check(sharing: PredictorSharing, seed: u64) {
        use crate::depth_map::{DepthUnits, MultiLayerDepthMap};
        use crate::losses::{loss_total, total::evaluate, LossConfig};

        let (h, w) = (3, 3);
        let f = random_image(h, w, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let pixels = (0..h * w)
            .map(|_| {
                let mut v: Vec<f64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(-2.0..2.0)).collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let gt = MultiLayerDepthMap::from_pixels(h, w, DepthUnits::Normalized, pixels).unwrap();
        let cfg = LossConfig::default();
        let opts = RecurrenceOptions::default();
        let p = DecompParams::init(4, 3, 3, sharing, 1.0, seed + 2).unwrap();
        let rec = run_recurrence(&f, &p, &opts).unwrap();
        let up = evaluate(&rec.mixture, &gt, &cfg, true).unwrap().grad.unwrap();
        let analytic = backward_recurrence(&p, &rec, &up, &opts.link, EtaMode::Attached).unwrap().to_flat();

        let loss_at = |flat: &[f64]| {
            let mut q = p.clone();
            q.assign_flat(flat);
            let rec = run_recurrence(&f, &q, &opts).unwrap();
            loss_total(&rec.mixture, &gt, &cfg).unwrap().0
        };
        let base = p.to_flat();
        let step = 1e-6;
        for k in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[k] += step;
            minus[k] -= step;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let tol = 1e-5 * (1.0 + fd.abs());
            assert!((fd - analytic[k]).abs() < tol, "param {k}: fd {fd} vs analytic {}", analytic[k]);
        }
    }

    #[test]
    fn backward_matches_finite_differences_shared() {
        fd_check(PredictorSharing::Shared, 3);
    }

    #[test]
    fn backward_matches_finite_differences_per_iteration() {
        fd_check(PredictorSharing::PerIteration, 8);
    }

    #[test]
    fn detached_eta_drops_norm_path() {
        let f = random_image(2, 2, 3, 4);
        let p = DecompParams::init(3, 2, 2, PredictorSharing::Shared, 1.0, 6).unwrap();
        let rec = run_recurrence(&f, &p, &RecurrenceOptions::default()).unwrap();
        let up = MixtureGrad {
            d: vec![vec![1.0; 4]; 2],
            b: vec![vec![0.5; 4]; 2],
        };
        let link = OutputLink::default();
        let a = backward_recurrence(&p, &rec, &up, &link, EtaMode::Attached).unwrap();
        let d = backward_recurrence(&p, &rec, &up, &link, EtaMode::Detached).unwrap();
        // the last iteration's predictor gradient does not depend on eta
        assert_ne!(a.remapper, d.remapper);
    }

    #[test]
    fn flat_round_trip() {
        let p = DecompParams::init(4, 3, 2, PredictorSharing::PerIteration, 1.0, 11).unwrap();
        let mut q = DecompParams::zeros(4, 3, 2, PredictorSharing::PerIteration);
        q.assign_flat(&p.to_flat());
        assert_eq!(p, q);
        assert_eq!(p.num_params(), 3 * 4 + 3 + 4 * 3 + 4 + 2 * (2 * 3 + 2));
    }

    #[test]
    fn link_respects_clip() {
        let link = OutputLink::default();
        assert!(link.scale(-50.0) >= 1.0);
        assert_eq!(link.scale(50.0), 10.0);
        assert_eq!(link.scale_derivative(50.0), 0.0);
        assert!((link.scale(0.0) - (1.0 + 2f64.ln())).abs() < 1e-15);
    }
}
