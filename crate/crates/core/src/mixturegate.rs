//! Bimodality of the per-sample loss distribution.
//!
//! Losses are min-max normalized, a two-component univariate Gaussian
//! mixture is fitted by EM, and the separation of the two components is
//! measured by the order-2 Wasserstein distance between them.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, LN_2PI};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const WEIGHT_FLOOR: f64 = 1e-6;
pub const MAX_EM_ITERATIONS: usize = 200;
pub const EM_TOLERANCE: f64 = 1e-6;
/// Components lighter than this do not count as a mode.
pub const VANISHING_WEIGHT: f64 = 1e-3;

/// Fitted `π₁ N(μ₁, σ₁²) + π₂ N(μ₂, σ₂²)` with `μ₁ ≤ μ₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Gmm2Fit {
    pub pi1: f64,
    pub pi2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Total data log-likelihood at the returned parameters.
    pub loglik: f64,
    pub iterations: usize,
}

/// `(l - min) / (max - min)`; a constant vector maps to 0.5 everywhere.
pub fn normalize_losses(l: &[f64]) -> Vec<f64> {
    let lo = l.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return l.iter().map(|_| 0.5).collect();
    }
    let range = hi - lo;
    l.iter().map(|v| (v - lo) / range).collect()
}

#[derive(Clone, Copy)]
struct Params {
    pi: [f64; 2],
    mu: [f64; 2],
    var: [f64; 2],
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.max(VARIANCE_FLOOR))
}

#[inline]
fn log_normal(x: f64, mu: f64, var: f64) -> f64 {
    let r = x - mu;
    -0.5 * (LN_2PI + math::ln(var) + r * r / var)
}

/// E-step plus M-step in one pass over the data. Returns the log-likelihood
/// of the *incoming* parameters and the updated parameters.
fn em_step(data: &[f64], p: &Params) -> (f64, Params) {
    let ln_pi = [math::ln(p.pi[0]), math::ln(p.pi[1])];
    let mut ll = 0.0;
    let mut nk = [0.0; 2];
    let mut sx = [0.0; 2];
    let mut resp = Vec::with_capacity(data.len());
    for &x in data {
        let a = ln_pi[0] + log_normal(x, p.mu[0], p.var[0]);
        let b = ln_pi[1] + log_normal(x, p.mu[1], p.var[1]);
        let m = a.max(b);
        let lse = m + math::ln(math::exp(a - m) + math::exp(b - m));
        ll += lse;
        let r0 = math::exp(a - lse);
        let r1 = 1.0 - r0;
        resp.push(r0);
        nk[0] += r0;
        nk[1] += r1;
        sx[0] += r0 * x;
        sx[1] += r1 * x;
    }
    let n = data.len() as f64;
    let mut next = *p;
    for c in 0..2 {
        if nk[c] > 0.0 {
            next.mu[c] = sx[c] / nk[c];
        }
    }
    let mut sv = [0.0; 2];
    for (&x, &r0) in data.iter().zip(&resp) {
        let d0 = x - next.mu[0];
        let d1 = x - next.mu[1];
        sv[0] += r0 * d0 * d0;
        sv[1] += (1.0 - r0) * d1 * d1;
    }
    for c in 0..2 {
        next.var[c] = if nk[c] > 0.0 {
            (sv[c] / nk[c]).max(VARIANCE_FLOOR)
        } else {
            p.var[c]
        };
    }
    let pi0 = (nk[0] / n).clamp(WEIGHT_FLOOR, 1.0 - WEIGHT_FLOOR);
    next.pi = [pi0, 1.0 - pi0];
    (ll, next)
}

/// Deterministic median-split initialization.
fn initialize(data: &[f64]) -> Params {
    let mut sorted: Vec<f64> = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lower, upper) = sorted.split_at(sorted.len() / 2);
    let (m0, v0) = mean_var(lower);
    let (m1, v1) = mean_var(upper);
    Params {
        pi: [0.5, 0.5],
        mu: [m0, m1],
        var: [v0, v1],
    }
}

/// EM fit, returning the fit and the log-likelihood after every iteration
/// (entry 0 is the initialization).
pub fn fit_gmm2_traced(data: &[f64]) -> Result<(Gmm2Fit, Vec<f64>)> {
    if data.len() < 4 {
        return Err(Error::DatasetTooSmall { n: data.len(), min: 4 });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mixture input"));
    }
    let mut params = initialize(data);
    let mut trace = Vec::new();
    let (mut prev, mut next) = em_step(data, &params);
    trace.push(prev);
    let mut iterations = 0;
    while iterations < MAX_EM_ITERATIONS {
        params = next;
        iterations += 1;
        let (ll, after) = em_step(data, &params);
        trace.push(ll);
        next = after;
        if ll - prev < EM_TOLERANCE {
            prev = ll;
            break;
        }
        prev = ll;
    }
    let (a, b) = if params.mu[0] <= params.mu[1] { (0, 1) } else { (1, 0) };
    let fit = Gmm2Fit {
        pi1: params.pi[a],
        pi2: params.pi[b],
        mu1: params.mu[a],
        mu2: params.mu[b],
        sigma1: math::sqrt(params.var[a]),
        sigma2: math::sqrt(params.var[b]),
        loglik: prev,
        iterations,
    };
    Ok((fit, trace))
}

/// Two-component Gaussian mixture fitted by EM from a median split.
pub fn fit_gmm2(data: &[f64]) -> Result<Gmm2Fit> {
    fit_gmm2_traced(data).map(|(f, _)| f)
}

/// `W₂(N(μ₁,σ₁²), N(μ₂,σ₂²)) = sqrt((μ₁-μ₂)² + (σ₁-σ₂)²)`; zero when a
/// component's weight has vanished.
pub fn wasserstein_gauss(f: &Gmm2Fit) -> f64 {
    if f.pi1 < VANISHING_WEIGHT || f.pi2 < VANISHING_WEIGHT {
        return 0.0;
    }
    let dm = f.mu1 - f.mu2;
    let ds = f.sigma1 - f.sigma2;
    math::sqrt(dm * dm + ds * ds)
}

/// Normalize, fit, and measure: the bimodality score of a loss vector.
pub fn bimodality(losses: &[f64]) -> Result<(Gmm2Fit, f64)> {
    let normalized = normalize_losses(losses);
    let fit = fit_gmm2(&normalized)?;
    Ok((fit, wasserstein_gauss(&fit)))
}
