//! Laplace components and the intensity function built from them.
//!
//! A pixel's intensity is a mixture of `n` unit-mass Laplace bumps on the
//! depth axis. The default rule takes the pointwise maximum, which makes every
//! local maximum of the intensity sit exactly on one component center. That
//! property is what [`IntensityMixture::peaks`] relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One Laplace bump `1/(2b) exp(-|x - d| / b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceComponent {
    center: f64,
    scale: f64,
}

impl LaplaceComponent {
    pub fn new(center: f64, scale: f64) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::invalid(format!("component center must be finite, got {center}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("component scale must be positive and finite, got {scale}")));
        }
        Ok(Self { center, scale })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Value at the center, `1/(2b)`.
    pub fn peak(&self) -> f64 {
        0.5 / self.scale
    }

    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        0.5 / self.scale * (-(x - self.center).abs() / self.scale).exp()
    }

    #[inline]
    pub fn log_density(&self, x: f64) -> f64 {
        -(2.0 * self.scale).ln() - (x - self.center).abs() / self.scale
    }
}

/// How component densities combine into the intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureRule {
    /// Pointwise maximum over components.
    #[default]
    MaxMixture,
    /// `(1/n) * sum_i L_i`.
    WeightedUniform,
    /// Component `i` models the `i`-th nearest layer; evaluation needs a layer index.
    Ordered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMixture {
    components: Vec<LaplaceComponent>,
    rule: MixtureRule,
}

impl IntensityMixture {
    pub fn new(components: Vec<LaplaceComponent>, rule: MixtureRule) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("intensity mixture needs at least one component"));
        }
        Ok(Self { components, rule })
    }

    pub fn max_mixture(components: Vec<LaplaceComponent>) -> Result<Self> {
        Self::new(components, MixtureRule::MaxMixture)
    }

    /// Builds a max-mixture from `(center, scale)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let components = pairs
            .iter()
            .map(|&(d, b)| LaplaceComponent::new(d, b))
            .collect::<Result<Vec<_>>>()?;
        Self::max_mixture(components)
    }

    pub fn components(&self) -> &[LaplaceComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn rule(&self) -> MixtureRule {
        self.rule
    }

    pub fn with_rule(mut self, rule: MixtureRule) -> Self {
        self.rule = rule;
        self
    }

    /// Intensity at `x`. Ordered mixtures have no single intensity; use
    /// [`IntensityMixture::layer_density`] for them.
    pub fn eval(&self, x: f64) -> Result<f64> {
        check_depth(x)?;
        match self.rule {
            MixtureRule::MaxMixture => Ok(self.max_density(x)),
            MixtureRule::WeightedUniform => {
                let sum: f64 = self.components.iter().map(|c| c.density(x)).sum();
                Ok(sum / self.components.len() as f64)
            }
            MixtureRule::Ordered => Err(Error::invalid(
                "ordered mixtures are evaluated per layer; call layer_density",
            )),
        }
    }

    /// Density of the component assigned to `layer` (0-based) under the ordered rule.
    pub fn layer_density(&self, layer: usize, x: f64) -> Result<f64> {
        check_depth(x)?;
        self.components
            .get(layer)
            .map(|c| c.density(x))
            .ok_or_else(|| Error::invalid(format!("layer {layer} out of range for {} components", self.len())))
    }

    /// Log intensity, computed without leaving log space.
    pub fn log_eval(&self, x: f64) -> Result<f64> {
        check_depth(x)?;
        match self.rule {
            MixtureRule::MaxMixture => Ok(self.max_log_density(x)),
            MixtureRule::WeightedUniform => {
                let logs: Vec<f64> = self.components.iter().map(|c| c.log_density(x)).collect();
                Ok(log_sum_exp(&logs) - (self.components.len() as f64).ln())
            }
            MixtureRule::Ordered => Err(Error::invalid(
                "ordered mixtures are evaluated per layer; call layer_density",
            )),
        }
    }

    #[inline]
    pub(crate) fn max_density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.density(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[inline]
    pub(crate) fn max_log_density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.log_density(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the component with the largest density at `x`; ties go to the lowest index.
    pub fn argmax(&self, x: f64) -> Result<usize> {
        check_depth(x)?;
        Ok(self.argmax_unchecked(x))
    }

    #[inline]
    pub(crate) fn argmax_unchecked(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_val = self.components[0].log_density(x);
        for (i, c) in self.components.iter().enumerate().skip(1) {
            let v = c.log_density(x);
            if v > best_val {
                best = i;
                best_val = v;
            }
        }
        best
    }

    /// Every local maximum of the max-mixture, sorted by depth.
    ///
    /// A component contributes a peak at its center iff no other component is
    /// strictly higher there. Components sharing a center yield one peak.
    pub fn peaks(&self) -> Result<Vec<Peak>> {
        if self.rule != MixtureRule::MaxMixture {
            return Err(Error::invalid("peak analysis is defined for max-mixtures"));
        }
        let mut peaks: Vec<Peak> = self
            .components
            .iter()
            .enumerate()
            .filter(|&(i, ci)| {
                let own = ci.log_density(ci.center);
                self.components
                    .iter()
                    .enumerate()
                    .all(|(j, cj)| j == i || own >= cj.log_density(ci.center))
            })
            .map(|(_, c)| Peak {
                depth: c.center,
                intensity: c.peak(),
            })
            .collect();
        peaks.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        peaks.dedup_by(|a, b| a.depth == b.depth);
        Ok(peaks)
    }

    /// Largest possible intensity, `max_i 1/(2 b_i)`.
    pub fn peak_bound(&self) -> f64 {
        self.components
            .iter()
            .map(LaplaceComponent::peak)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A local maximum of the intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub depth: f64,
    pub intensity: f64,
}

pub fn eval_component(c: &LaplaceComponent, x: f64) -> Result<f64> {
    check_depth(x)?;
    Ok(c.density(x))
}

pub fn eval_intensity(m: &IntensityMixture, x: f64) -> Result<f64> {
    m.eval(x)
}

pub fn log_intensity(m: &IntensityMixture, x: f64) -> Result<f64> {
    m.log_eval(x)
}

pub fn argmax_component(m: &IntensityMixture, x: f64) -> Result<usize> {
    if m.rule() != MixtureRule::MaxMixture {
        return Err(Error::invalid("argmax is defined for max-mixtures"));
    }
    m.argmax(x)
}

pub fn peak_set(m: &IntensityMixture) -> Result<Vec<Peak>> {
    m.peaks()
}

fn check_depth(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("depth must be finite, got {x}")))
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix(pairs: &[(f64, f64)]) -> IntensityMixture {
        IntensityMixture::from_pairs(pairs).unwrap()
    }

    #[test]
    fn component_values() {
        let c = LaplaceComponent::new(0.0, 1.0).unwrap();
        assert_eq!(eval_component(&c, 0.0).unwrap(), 0.5);
        let c = LaplaceComponent::new(0.0, 2.0).unwrap();
        assert_eq!(eval_component(&c, 0.0).unwrap(), 0.25);
        let c = LaplaceComponent::new(1.0, 1.0).unwrap();
        let v = eval_component(&c, 2.0).unwrap();
        assert!((v - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.183_939_7).abs() < 1e-7);
    }

    #[test]
    fn invalid_inputs() {
        assert!(LaplaceComponent::new(0.0, 0.0).is_err());
        assert!(LaplaceComponent::new(0.0, -1.0).is_err());
        assert!(LaplaceComponent::new(f64::NAN, 1.0).is_err());
        let c = LaplaceComponent::new(0.0, 1.0).unwrap();
        assert!(eval_component(&c, f64::INFINITY).is_err());
        assert!(IntensityMixture::max_mixture(vec![]).is_err());
    }

    #[test]
    fn mixture_rules() {
        let m = mix(&[(1.0, 1.0), (3.0, 1.0)]);
        assert!((m.eval(2.0).unwrap() - 0.183_939_7).abs() < 1e-7);
        let w = m.clone().with_rule(MixtureRule::WeightedUniform);
        let expected = (0.5 + 0.5 * (-2.0f64).exp()) / 2.0;
        assert!((w.eval(1.0).unwrap() - expected).abs() < 1e-15);
        assert!((w.eval(1.0).unwrap() - 0.283_833_8).abs() < 1e-7);
        assert!((w.log_eval(1.0).unwrap().exp() - expected).abs() < 1e-15);

        let single = mix(&[(2.5, 0.4)]);
        for rule in [MixtureRule::MaxMixture, MixtureRule::WeightedUniform] {
            assert!((single.clone().with_rule(rule).eval(2.5).unwrap() - 1.25).abs() < 1e-15);
        }
        let ordered = single.with_rule(MixtureRule::Ordered);
        assert!(ordered.eval(2.5).is_err());
        assert_eq!(ordered.layer_density(0, 2.5).unwrap(), 1.25);
    }

    #[test]
    fn log_values() {
        let m = mix(&[(1.0, 1.0)]);
        assert!((m.log_eval(1.0).unwrap() + 2f64.ln()).abs() < 1e-15);
        let m = mix(&[(1.0, 1.0), (3.0, 1.0)]);
        assert!((m.log_eval(2.0).unwrap() - (-(2f64.ln()) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_and_domination() {
        let m = mix(&[(1.0, 1.0), (3.0, 1.0)]);
        assert_eq!(argmax_component(&m, 0.0).unwrap(), 0);
        assert_eq!(argmax_component(&m, 2.0).unwrap(), 0);
        assert_eq!(argmax_component(&m, 3.5).unwrap(), 1);
        let m = mix(&[(0.0, 0.5), (0.05, 5.0)]);
        assert_eq!(argmax_component(&m, 0.05).unwrap(), 0);
    }

    #[test]
    fn peak_examples() {
        let p = peak_set(&mix(&[(1.0, 1.0), (3.0, 1.0)])).unwrap();
        assert_eq!(p, vec![Peak { depth: 1.0, intensity: 0.5 }, Peak { depth: 3.0, intensity: 0.5 }]);

        let p = peak_set(&mix(&[(0.0, 0.5), (0.05, 5.0)])).unwrap();
        assert_eq!(p, vec![Peak { depth: 0.0, intensity: 1.0 }]);

        let p = peak_set(&mix(&[(2.0, 1.0)])).unwrap();
        assert_eq!(p, vec![Peak { depth: 2.0, intensity: 0.5 }]);
    }

    #[test]
    fn duplicate_centers_give_one_peak() {
        let m = mix(&[(1.0, 1.0), (1.0, 1.0), (2.0, 1.0)]);
        assert_eq!(m.peaks().unwrap().len(), 2);
    }

    #[test]
    fn peaks_need_max_rule() {
        let m = mix(&[(1.0, 1.0)]).with_rule(MixtureRule::WeightedUniform);
        assert!(m.peaks().is_err());
        assert!(argmax_component(&m, 0.0).is_err());
    }
}
