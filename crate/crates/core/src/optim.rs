//! First-order optimizer pieces shared by the fitting loops.

use serde::{Deserialize, Serialize};

/// Adam with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamW {
    pub fn new(len: usize, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            *p -= lr * (update + self.weight_decay * *p);
        }
    }
}

/// Learning-rate multiplier `(1 - k / total)^power`.
pub fn poly_lr_multiplier(step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    (1.0 - step as f64 / total as f64).max(0.0).powf(power)
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= factor);
    }
    norm
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; `0` disables clipping.
    pub grad_clip: f64,
    pub lr_decay_power: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.01,
            grad_clip: 0.1,
            lr_decay_power: 0.9,
        }
    }
}
