//! Numerical checks on the linear-Gaussian VAE.
//!
//! With `p(x|z) = N(Wz + b, σ²I)` and `q(z|x) = N(Ux + v, η²I)`, the gradient
//! of the evidence lower bound with respect to the decoder parameters has a
//! closed form. Its expected squared norm over uniform initializations grows
//! like the fourth power of the input norm, which is what
//! [`prop1_scaling_experiment`] measures. [`prop2_norm_experiment`] compares
//! per-sample ℓ₁ norms of inliers and outliers after min-max scaling and
//! after standardization.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::numkernel::{Matrix, SeededRng};
use crate::preprocess::{fit_transform, ScalerKind};

/// Linear encoder/decoder pair with fixed noise scales.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearVaeParams {
    /// Decoder loadings, `D × d`.
    pub w: Matrix,
    pub b: Vec<f64>,
    /// Encoder matrix, `d × D`.
    pub u: Matrix,
    pub v: Vec<f64>,
    pub sigma: f64,
    pub eta: f64,
}

impl LinearVaeParams {
    pub fn new(w: Matrix, b: Vec<f64>, u: Matrix, v: Vec<f64>, sigma: f64, eta: f64) -> Result<Self> {
        let (dd, d) = (w.rows(), w.cols());
        if b.len() != dd {
            return Err(Error::shape("decoder bias", dd, b.len()));
        }
        if u.rows() != d || u.cols() != dd {
            return Err(Error::shape("encoder matrix", d * dd, u.rows() * u.cols()));
        }
        if v.len() != d {
            return Err(Error::shape("encoder bias", d, v.len()));
        }
        if !(sigma > 0.0) || !(eta > 0.0) {
            return Err(Error::argument("sigma and eta must be positive"));
        }
        Ok(LinearVaeParams { w, b, u, v, sigma, eta })
    }

    /// All of `W, b, U, v` i.i.d. uniform on `[-1, 1]`.
    pub fn random(rng: &mut SeededRng, input_dim: usize, latent_dim: usize, sigma: f64, eta: f64) -> Result<Self> {
        let mut draw = |n: usize| (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect::<Vec<_>>();
        let w = Matrix::from_vec(input_dim, latent_dim, draw(input_dim * latent_dim))?;
        let b = draw(input_dim);
        let u = Matrix::from_vec(latent_dim, input_dim, draw(latent_dim * input_dim))?;
        let v = draw(latent_dim);
        LinearVaeParams::new(w, b, u, v, sigma, eta)
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.cols()
    }

    /// `Ux + v`.
    pub fn encoder_mean(&self, x: &[f64]) -> Vec<f64> {
        (0..self.latent_dim())
            .map(|j| self.u.row(j).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.v[j])
            .collect()
    }
}

/// Gradient of the lower bound with respect to the decoder `(W, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl LinearGrad {
    pub fn squared_norm(&self) -> f64 {
        self.w.as_slice().iter().chain(&self.b).map(|g| g * g).sum()
    }
}

/// Exact gradient of the lower bound (not its negative) with respect to `W`
/// and `b`, with the expectation over `q(z|x)` taken analytically:
///
/// `∂/∂w_ij = σ⁻²[(x_i − b_i) m_j − m_j Σ_j' w_ij' m_j' − w_ij η²]`,
/// `∂/∂b_i = σ⁻²[x_i − b_i − Σ_j w_ij m_j]`, where `m = Ux + v`.
pub fn linear_vae_grad_theta(p: &LinearVaeParams, x: &[f64]) -> Result<LinearGrad> {
    let (dd, d) = (p.input_dim(), p.latent_dim());
    if x.len() != dd {
        return Err(Error::shape("linear_vae_grad_theta", dd, x.len()));
    }
    let m = p.encoder_mean(x);
    let inv_var = 1.0 / (p.sigma * p.sigma);
    let eta2 = p.eta * p.eta;
    let mut gw = Matrix::zeros(dd, d);
    let mut gb = vec![0.0; dd];
    for i in 0..dd {
        let wi = p.w.row(i);
        let resid = x[i] - p.b[i] - wi.iter().zip(&m).map(|(w, mj)| w * mj).sum::<f64>();
        gb[i] = inv_var * resid;
        let row = gw.row_mut(i);
        for j in 0..d {
            row[j] = inv_var * (resid * m[j] - wi[j] * eta2);
        }
    }
    Ok(LinearGrad { w: gw, b: gb })
}

/// Expected squared gradient norm at `x = 0` over uniform `[-1, 1]`
/// initializations, from the moments `E[X²] = 1/3`, `E[X⁴] = 1/5`.
pub fn expected_sq_grad_at_origin(input_dim: usize, latent_dim: usize, sigma: f64, eta: f64) -> f64 {
    let (dd, d) = (input_dim as f64, latent_dim as f64);
    let eta2 = eta * eta;
    let per_w = 1.0 / 9.0 + (1.0 / 5.0 + (d - 1.0) / 9.0) / 3.0 + eta2 * eta2 / 3.0 + 2.0 * eta2 / 9.0;
    let per_b = 1.0 / 3.0 + d / 9.0;
    (dd * d * per_w + dd * per_b) / math::powf(sigma, 4.0)
}

/// Direction along which the input norm is swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    /// `x = (s / D) · 1`.
    #[default]
    AllOnes,
    /// A fixed random direction with unit ℓ₁ norm, drawn once per experiment.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prop1Config {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub n_inits: usize,
    /// Target ℓ₁ norms of the input.
    pub norms: Vec<f64>,
    pub sigma: f64,
    pub eta: f64,
    pub direction: Direction,
    /// Bootstrap resamples over initializations for the slope interval.
    pub bootstrap: usize,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Prop1Config {
            input_dim: 20,
            latent_dim: 5,
            n_inits: 10_000,
            norms: vec![10.0, 30.0, 100.0, 300.0, 1000.0],
            sigma: 1.0,
            eta: 1.0,
            direction: Direction::AllOnes,
            bootstrap: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prop1Report {
    pub norms_l1: Vec<f64>,
    pub norms_l2: Vec<f64>,
    /// Mean squared gradient norm per input norm.
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Least-squares slope of `ln estimate` against `ln ‖x‖₁`.
    pub slope_l1: f64,
    pub slope_l2: f64,
    /// 95% percentile bootstrap interval for `slope_l1`.
    pub slope_ci: (f64, f64),
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let t = pos - lo as f64;
    v[lo] * (1.0 - t) + v[hi] * t
}

/// Monte-Carlo estimate of `E‖∂L/∂θ‖²` over uniform initializations as the
/// input norm grows, with a log–log slope fit. The same initializations are
/// reused for every norm.
pub fn prop1_scaling_experiment_with(cfg: &Prop1Config, rng: &mut SeededRng) -> Result<Prop1Report> {
    if cfg.input_dim == 0 || cfg.latent_dim == 0 {
        return Err(Error::argument("dimensions must be positive"));
    }
    if cfg.n_inits < 2 {
        return Err(Error::argument("need at least two initializations"));
    }
    if cfg.norms.len() < 2 || cfg.norms.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::argument("need at least two positive input norms"));
    }
    let dd = cfg.input_dim;
    let unit: Vec<f64> = match cfg.direction {
        Direction::AllOnes => vec![1.0 / dd as f64; dd],
        Direction::Random => {
            let raw: Vec<f64> = (0..dd).map(|_| rng.normal()).collect();
            let l1: f64 = raw.iter().map(|v| v.abs()).sum();
            raw.iter().map(|v| v / l1).collect()
        }
    };
    let unit_l2 = math::sqrt(unit.iter().map(|v| v * v).sum());
    let inputs: Vec<Vec<f64>> = cfg.norms.iter().map(|s| unit.iter().map(|u| s * u).collect()).collect();

    let n_norms = cfg.norms.len();
    // samples[init * n_norms + k]
    let mut samples = Vec::with_capacity(cfg.n_inits * n_norms);
    for _ in 0..cfg.n_inits {
        let p = LinearVaeParams::random(rng, dd, cfg.latent_dim, cfg.sigma, cfg.eta)?;
        for x in &inputs {
            samples.push(linear_vae_grad_theta(&p, x)?.squared_norm());
        }
    }

    let n = cfg.n_inits as f64;
    let mut estimates = vec![0.0; n_norms];
    for chunk in samples.chunks_exact(n_norms) {
        for (e, s) in estimates.iter_mut().zip(chunk) {
            *e += s;
        }
    }
    estimates.iter_mut().for_each(|e| *e /= n);
    let mut std_errors = vec![0.0; n_norms];
    for chunk in samples.chunks_exact(n_norms) {
        for k in 0..n_norms {
            let dev = chunk[k] - estimates[k];
            std_errors[k] += dev * dev;
        }
    }
    std_errors.iter_mut().for_each(|v| *v = math::sqrt(*v / (n - 1.0) / n));

    let log_l1: Vec<f64> = cfg.norms.iter().map(|s| math::ln(*s)).collect();
    let log_l2: Vec<f64> = cfg.norms.iter().map(|s| math::ln(s * unit_l2)).collect();
    let log_est: Vec<f64> = estimates.iter().map(|e| math::ln(*e)).collect();
    let slope_l1 = ls_slope(&log_l1, &log_est);
    let slope_l2 = ls_slope(&log_l2, &log_est);

    let mut boot = Vec::with_capacity(cfg.bootstrap);
    let mut acc = vec![0.0; n_norms];
    for _ in 0..cfg.bootstrap {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for _ in 0..cfg.n_inits {
            let pick = rng.below(cfg.n_inits);
            for (a, s) in acc.iter_mut().zip(&samples[pick * n_norms..(pick + 1) * n_norms]) {
                *a += s;
            }
        }
        let logs: Vec<f64> = acc.iter().map(|a| math::ln(a / n)).collect();
        boot.push(ls_slope(&log_l1, &logs));
    }
    let slope_ci = if boot.is_empty() {
        (slope_l1, slope_l1)
    } else {
        boot.sort_by(f64::total_cmp);
        (quantile_sorted(&boot, 0.025), quantile_sorted(&boot, 0.975))
    };

    Ok(Prop1Report {
        norms_l1: cfg.norms.clone(),
        norms_l2: cfg.norms.iter().map(|s| s * unit_l2).collect(),
        estimates,
        std_errors,
        slope_l1,
        slope_l2,
        slope_ci,
    })
}

/// [`prop1_scaling_experiment_with`] along the all-ones direction with `σ = η = 1`.
pub fn prop1_scaling_experiment(
    input_dim: usize,
    latent_dim: usize,
    n_inits: usize,
    norms: &[f64],
    rng: &mut SeededRng,
) -> Result<Prop1Report> {
    let cfg = Prop1Config {
        input_dim,
        latent_dim,
        n_inits,
        norms: norms.to_vec(),
        ..Prop1Config::default()
    };
    prop1_scaling_experiment_with(&cfg, rng)
}

/// Fraction of outliers in the norm experiment's mixture.
pub const PROP2_OUTLIER_FRACTION: f64 = 0.2;
/// Inner box half-width for inliers.
pub const PROP2_INNER: f64 = 1.0;
/// Outlier coordinates have magnitude in `[PROP2_GAP_LO, PROP2_OUTER]`.
pub const PROP2_GAP_LO: f64 = 1.25;
pub const PROP2_OUTER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormGap {
    pub inlier_mean: f64,
    pub outlier_mean: f64,
    /// `outlier_mean − inlier_mean`.
    pub gap: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prop2Report {
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub minmax: NormGap,
    pub standardized: NormGap,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

fn norm_gap(x: &Matrix, n_in: usize) -> NormGap {
    let l1: Vec<f64> = x.iter_rows().map(|r| r.iter().map(|v| v.abs()).sum()).collect();
    let (mi, vi) = mean_var(&l1[..n_in]);
    let (mo, vo) = mean_var(&l1[n_in..]);
    NormGap {
        inlier_mean: mi,
        outlier_mean: mo,
        gap: mo - mi,
        std_error: math::sqrt(vi / n_in as f64 + vo / (l1.len() - n_in) as f64),
    }
}

/// Zero-mean inliers uniform on `[-1, 1]^D` and zero-mean outliers whose
/// coordinates are `±Unif[1.25, 2]`, so the outlier support wraps the inlier
/// box without touching it. Both scalers are fitted on the pooled sample.
pub fn prop2_norm_experiment(input_dim: usize, n_samples: usize, rng: &mut SeededRng) -> Result<Prop2Report> {
    if input_dim == 0 {
        return Err(Error::argument("dimension must be positive"));
    }
    let n_out = (n_samples as f64 * PROP2_OUTLIER_FRACTION) as usize;
    let n_in = n_samples - n_out;
    if n_out < 2 || n_in < 2 {
        return Err(Error::DatasetTooSmall { n: n_samples, min: 10 });
    }
    let mut data = Vec::with_capacity(n_samples * input_dim);
    for _ in 0..n_in * input_dim {
        data.push(rng.uniform_range(-PROP2_INNER, PROP2_INNER));
    }
    for _ in 0..n_out * input_dim {
        let mag = rng.uniform_range(PROP2_GAP_LO, PROP2_OUTER);
        data.push(if rng.uniform() < 0.5 { -mag } else { mag });
    }
    let x = Matrix::from_vec(n_samples, input_dim, data)?;
    let (mm, _) = fit_transform(&x, ScalerKind::MinMax)?;
    let (st, _) = fit_transform(&x, ScalerKind::Standardize)?;
    Ok(Prop2Report {
        n_inliers: n_in,
        n_outliers: n_out,
        minmax: norm_gap(&mm, n_in),
        standardized: norm_gap(&st, n_in),
    })
}
