//! Adam and the clipped, noised gradient aggregation used for private training.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::numkernel::SeededRng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update `params -= lr · m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("adam params", self.m.len(), params.len()));
        }
        if grad.len() != self.m.len() {
            return Err(Error::shape("adam gradient", self.m.len(), grad.len()));
        }
        self.step += 1;
        self.beta1_pow *= self.beta1;
        self.beta2_pow *= self.beta2;
        let c1 = 1.0 - self.beta1_pow;
        let c2 = 1.0 - self.beta2_pow;
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (math::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

/// Per-sample clipping norm and Gaussian noise multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DpConfig {
    pub clip: f64,
    pub noise_multiplier: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            clip: 20.0,
            noise_multiplier: 1.02,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(Error::argument("clip norm C must be positive"));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::argument("noise multiplier must be finite and non-negative"));
        }
        Ok(())
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// Rescales `g` in place to norm at most `clip`.
pub fn clip_in_place(g: &mut [f64], clip: f64) {
    let factor = (l2_norm(g) / clip).max(1.0);
    for x in g.iter_mut() {
        *x /= factor;
    }
}

/// Streams per-sample gradients into a mean.
///
/// Sums run in arrival order, so feeding samples in a fixed index order makes
/// the result reproducible. With `dp = None` the samples are averaged as-is.
#[derive(Debug)]
pub struct GradientAggregator {
    sum: Vec<f64>,
    count: usize,
    dp: Option<DpConfig>,
}

impl GradientAggregator {
    pub fn new(num_params: usize, dp: Option<DpConfig>) -> Self {
        GradientAggregator {
            sum: vec![0.0; num_params],
            count: 0,
            dp,
        }
    }

    pub fn reset(&mut self) {
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.count = 0;
    }

    /// Adds one per-sample gradient. Under DP it is clipped and noised in place.
    pub fn push(&mut self, g: &mut [f64], rng: &mut SeededRng) {
        debug_assert_eq!(g.len(), self.sum.len());
        if let Some(cfg) = self.dp {
            clip_in_place(g, cfg.clip);
            let std = cfg.noise_multiplier * cfg.clip;
            if std > 0.0 {
                for x in g.iter_mut() {
                    *x += std * rng.normal();
                }
            }
        }
        for (s, x) in self.sum.iter_mut().zip(g.iter()) {
            *s += *x;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Writes the mean over the group into `out`.
    pub fn mean_into(&self, out: &mut [f64]) -> Result<()> {
        if self.count == 0 {
            return Err(Error::argument("cannot aggregate an empty gradient group"));
        }
        let n = self.count as f64;
        for (o, s) in out.iter_mut().zip(&self.sum) {
            *o = *s / n;
        }
        Ok(())
    }
}

/// Clip each per-sample gradient to norm `C`, add `N(0, σ²C²)` noise to each,
/// and average over the group.
pub fn dp_sgd_step(cfg: &DpConfig, per_sample_grads: &[Vec<f64>], rng: &mut SeededRng) -> Result<Vec<f64>> {
    cfg.validate()?;
    let first = per_sample_grads
        .first()
        .ok_or_else(|| Error::argument("cannot aggregate an empty gradient group"))?;
    let n = first.len();
    let mut agg = GradientAggregator::new(n, Some(*cfg));
    let mut scratch = vec![0.0; n];
    for g in per_sample_grads {
        if g.len() != n {
            return Err(Error::shape("dp_sgd_step", n, g.len()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("per-sample gradient"));
        }
        scratch.copy_from_slice(g);
        agg.push(&mut scratch, rng);
    }
    let mut out = vec![0.0; n];
    agg.mean_into(&mut out)?;
    Ok(out)
}

/// Plain mean of per-sample gradients, summed in index order.
pub fn mean_gradient(per_sample_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_sample_grads
        .first()
        .ok_or_else(|| Error::argument("cannot aggregate an empty gradient group"))?;
    let mut agg = GradientAggregator::new(first.len(), None);
    let mut rng = SeededRng::new(0);
    let mut scratch = first.clone();
    for g in per_sample_grads {
        if g.len() != first.len() {
            return Err(Error::shape("mean_gradient", first.len(), g.len()));
        }
        scratch.copy_from_slice(g);
        agg.push(&mut scratch, &mut rng);
    }
    let mut out = vec![0.0; first.len()];
    agg.mean_into(&mut out)?;
    Ok(out)
}
