//! Gaussian encoder/decoder pair with IWAE and CUBO per-sample objectives.
//!
//! All parameters live in one flat vector ([`MlpParams`]) addressed through
//! [`Block`]s, which keeps optimizers, clipping and serialization trivial.
//! Gradients are exact pathwise derivatives of the Monte-Carlo estimator for
//! a fixed set of noise draws `eps`, computed by hand-written backprop.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::math::{self, LN_2PI};
use crate::numkernel::{axpy, dot, gemm, softmax_in_place, transpose_into, Matrix, SeededRng};

/// Clamp interval for the encoder log-variance and decoder log-variance.
pub const LOGVAR_MIN: f64 = -6.0;
pub const LOGVAR_MAX: f64 = 2.0;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    #[default]
    LeakyRelu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu if a < 0.0 => LEAKY_SLOPE * a,
            _ => a,
        }
    }

    #[inline]
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu if a < 0.0 => LEAKY_SLOPE,
            _ => 1.0,
        }
    }
}

/// Link from the decoder head to the likelihood mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OutputMean {
    #[default]
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitScheme {
    /// Weights uniform on `±sqrt(6 / fan_in)`, biases zero.
    #[default]
    HeUniform,
    /// Every weight and bias uniform on `[-1, 1]`.
    Unif11,
}

/// Network dimensions and nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub output: OutputMean,
}

impl Architecture {
    pub fn new(input_dim: usize, latent_dim: usize, hidden: usize) -> Self {
        Architecture {
            input_dim,
            latent_dim,
            hidden,
            activation: Activation::LeakyRelu,
            output: OutputMean::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::argument("network dimensions must be at least 1"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Named parameter blocks. Weight blocks are row-major `out × in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    EncW1,
    EncB1,
    EncW2,
    EncB2,
    EncMuW,
    EncMuB,
    EncLogvarW,
    EncLogvarB,
    DecW1,
    DecB1,
    DecW2,
    DecB2,
    DecMuW,
    DecMuB,
    DecLogvar,
}

impl Block {
    pub const ALL: [Block; 15] = [
        Block::EncW1,
        Block::EncB1,
        Block::EncW2,
        Block::EncB2,
        Block::EncMuW,
        Block::EncMuB,
        Block::EncLogvarW,
        Block::EncLogvarB,
        Block::DecW1,
        Block::DecB1,
        Block::DecW2,
        Block::DecB2,
        Block::DecMuW,
        Block::DecMuB,
        Block::DecLogvar,
    ];

    /// Fan-in for weight blocks, `None` for biases and the decoder log-variance.
    fn fan_in(self, arch: &Architecture) -> Option<usize> {
        match self {
            Block::EncW1 => Some(arch.input_dim),
            Block::EncW2 | Block::EncMuW | Block::EncLogvarW => Some(arch.hidden),
            Block::DecW1 => Some(arch.latent_dim),
            Block::DecW2 | Block::DecMuW => Some(arch.hidden),
            _ => None,
        }
    }

    pub fn is_decoder(self) -> bool {
        matches!(
            self,
            Block::DecW1
                | Block::DecB1
                | Block::DecW2
                | Block::DecB2
                | Block::DecMuW
                | Block::DecMuB
                | Block::DecLogvar
        )
    }
}

/// Offsets of every block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    ranges: [Range<usize>; 15],
    total: usize,
}

impl Layout {
    fn new(a: &Architecture) -> Self {
        let (dd, d, h) = (a.input_dim, a.latent_dim, a.hidden);
        let sizes = [
            h * dd,
            h,
            h * h,
            h,
            d * h,
            d,
            d * h,
            d,
            h * d,
            h,
            h * h,
            h,
            dd * h,
            dd,
            dd,
        ];
        let mut start = 0;
        let ranges = sizes.map(|s| {
            let r = start..start + s;
            start += s;
            r
        });
        Layout {
            ranges,
            total: start,
        }
    }

    #[inline]
    pub fn range(&self, b: Block) -> Range<usize> {
        self.ranges[b as usize].clone()
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Encoder and decoder parameters in one flat vector. The same type carries
/// gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: Architecture,
    layout: Layout,
    values: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: Architecture) -> Self {
        let layout = arch.layout();
        MlpParams {
            values: vec![0.0; layout.total()],
            arch,
            layout,
        }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        let layout = arch.layout();
        if values.len() != layout.total() {
            return Err(Error::shape("MlpParams::from_values", layout.total(), values.len()));
        }
        Ok(MlpParams {
            arch,
            layout,
            values,
        })
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams::zeros(self.arch)
    }

    #[inline]
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn block(&self, b: Block) -> &[f64] {
        &self.values[self.layout.range(b)]
    }

    #[inline]
    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.layout.range(b);
        &mut self.values[r]
    }

    /// Projects the decoder log-variance back into its clamp interval.
    pub fn clamp_decoder_logvar(&mut self) {
        for g in self.block_mut(Block::DecLogvar) {
            *g = g.clamp(LOGVAR_MIN, LOGVAR_MAX);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Draws fresh parameters. The decoder log-variance always starts at 0.
pub fn init_params(rng: &mut SeededRng, arch: Architecture, scheme: InitScheme) -> Result<MlpParams> {
    arch.validate()?;
    let mut p = MlpParams::zeros(arch);
    for b in Block::ALL {
        if b == Block::DecLogvar {
            continue;
        }
        let bound = match (scheme, b.fan_in(&arch)) {
            (InitScheme::Unif11, _) => 1.0,
            (InitScheme::HeUniform, Some(fan_in)) => math::sqrt(6.0 / fan_in as f64),
            (InitScheme::HeUniform, None) => continue,
        };
        for w in p.block_mut(b) {
            *w = rng.uniform_range(-bound, bound);
        }
    }
    Ok(p)
}

/// Diagonal Gaussian variational posterior `q(z|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Which per-sample bound to estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `-(lse(log w) - ln K)`, the negative importance-weighted bound.
    Iwae,
    /// `(lse(u log w) - ln K) / u`, the chi upper bound with exponent `u > 1`.
    Cubo { u: f64 },
}

impl Objective {
    pub fn cubo(u: f64) -> Result<Self> {
        if !(u > 1.0) {
            return Err(Error::argument("CUBO exponent u must exceed 1"));
        }
        Ok(Objective::Cubo { u })
    }
}

/// Per-sample losses for a whole dataset at one update count.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub losses: Vec<f64>,
    pub update: usize,
}

/// Scratch buffers for one forward/backward pass with `k` noise draws.
#[derive(Debug, Clone)]
pub struct Workspace {
    k: usize,
    // encoder, one row
    ea1: Vec<f64>,
    eh1: Vec<f64>,
    ea2: Vec<f64>,
    eh2: Vec<f64>,
    mu: Vec<f64>,
    lv_raw: Vec<f64>,
    lv: Vec<f64>,
    sd: Vec<f64>,
    // decoder, k rows
    z: Vec<f64>,
    da1: Vec<f64>,
    dh1: Vec<f64>,
    da2: Vec<f64>,
    dh2: Vec<f64>,
    mean: Vec<f64>,
    log_w: Vec<f64>,
    coef: Vec<f64>,
    // backward
    g_out: Vec<f64>,
    g_h2: Vec<f64>,
    g_h1: Vec<f64>,
    g_z: Vec<f64>,
    g_mu: Vec<f64>,
    g_lv: Vec<f64>,
    g_eh2: Vec<f64>,
    g_eh1: Vec<f64>,
    inv_var: Vec<f64>,
    t_a: Vec<f64>,
    t_w: Vec<f64>,
}

impl Workspace {
    pub fn new(arch: &Architecture, k: usize) -> Self {
        let (dd, d, h) = (arch.input_dim, arch.latent_dim, arch.hidden);
        let z = |n: usize| vec![0.0; n];
        Workspace {
            k,
            ea1: z(h),
            eh1: z(h),
            ea2: z(h),
            eh2: z(h),
            mu: z(d),
            lv_raw: z(d),
            lv: z(d),
            sd: z(d),
            z: z(k * d),
            da1: z(k * h),
            dh1: z(k * h),
            da2: z(k * h),
            dh2: z(k * h),
            mean: z(k * dd),
            log_w: z(k),
            coef: z(k),
            g_out: z(k * dd),
            g_h2: z(k * h),
            g_h1: z(k * h),
            g_z: z(k * d),
            g_mu: z(d),
            g_lv: z(d),
            g_eh2: z(h),
            g_eh1: z(h),
            inv_var: z(dd),
            t_a: z(k * h.max(dd)),
            t_w: z(h * h.max(dd).max(d)),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.k
    }

    /// Log importance weights from the most recent evaluation.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    fn encode(&mut self, p: &MlpParams, x: &[f64]) {
        let a = p.arch;
        let (dd, d, h) = (a.input_dim, a.latent_dim, a.hidden);
        let w1 = p.block(Block::EncW1);
        let b1 = p.block(Block::EncB1);
        for o in 0..h {
            self.ea1[o] = dot(&w1[o * dd..(o + 1) * dd], x) + b1[o];
            self.eh1[o] = a.activation.apply(self.ea1[o]);
        }
        let w2 = p.block(Block::EncW2);
        let b2 = p.block(Block::EncB2);
        for o in 0..h {
            self.ea2[o] = dot(&w2[o * h..(o + 1) * h], &self.eh1) + b2[o];
            self.eh2[o] = a.activation.apply(self.ea2[o]);
        }
        let wm = p.block(Block::EncMuW);
        let bm = p.block(Block::EncMuB);
        let wl = p.block(Block::EncLogvarW);
        let bl = p.block(Block::EncLogvarB);
        for j in 0..d {
            self.mu[j] = dot(&wm[j * h..(j + 1) * h], &self.eh2) + bm[j];
            self.lv_raw[j] = dot(&wl[j * h..(j + 1) * h], &self.eh2) + bl[j];
            self.lv[j] = self.lv_raw[j].clamp(LOGVAR_MIN, LOGVAR_MAX);
            self.sd[j] = math::exp(0.5 * self.lv[j]);
        }
    }

    /// Decoder forward pass over the `k` latent rows already in `self.z`.
    fn decode_rows(&mut self, p: &MlpParams) {
        let a = p.arch;
        let (dd, d, h, k) = (a.input_dim, a.latent_dim, a.hidden, self.k);
        let wt = &mut self.t_w;
        transpose_into(p.block(Block::DecW1), h, d, wt);
        gemm(&self.z, wt, k, h, d, &mut self.da1, false);
        dense_activate(&mut self.da1, &mut self.dh1, p.block(Block::DecB1), a.activation);
        transpose_into(p.block(Block::DecW2), h, h, wt);
        gemm(&self.dh1, wt, k, h, h, &mut self.da2, false);
        dense_activate(&mut self.da2, &mut self.dh2, p.block(Block::DecB2), a.activation);
        transpose_into(p.block(Block::DecMuW), dd, h, wt);
        gemm(&self.dh2, wt, k, dd, h, &mut self.mean, false);
        let bx = p.block(Block::DecMuB);
        for m in self.mean.chunks_exact_mut(dd) {
            for (v, b) in m.iter_mut().zip(bx) {
                let out = *v + b;
                *v = match a.output {
                    OutputMean::Sigmoid => math::sigmoid(out),
                    OutputMean::Identity => out,
                };
            }
        }
    }

    /// Evaluates the objective for sample `x` with noise `eps` (`k × d`,
    /// row-major). When `grad` is given, adds `scale · ∂loss/∂params` to it.
    pub fn evaluate(
        &mut self,
        p: &MlpParams,
        x: &[f64],
        eps: &[f64],
        objective: Objective,
        grad: Option<(&mut MlpParams, f64)>,
    ) -> f64 {
        let a = p.arch;
        let (dd, d) = (a.input_dim, a.latent_dim);
        let k = self.k;
        debug_assert_eq!(x.len(), dd);
        debug_assert_eq!(eps.len(), k * d);

        self.encode(p, x);
        for kk in 0..k {
            for j in 0..d {
                self.z[kk * d + j] = self.mu[j] + self.sd[j] * eps[kk * d + j];
            }
        }
        self.decode_rows(p);

        let gamma = p.block(Block::DecLogvar);
        let mut lpx_const = 0.0;
        for (iv, &g) in self.inv_var.iter_mut().zip(gamma) {
            let gc = g.clamp(LOGVAR_MIN, LOGVAR_MAX);
            lpx_const -= 0.5 * (LN_2PI + gc);
            *iv = math::exp(-gc);
        }
        let lq_const: f64 = self.lv.iter().map(|lv| -0.5 * (LN_2PI + lv)).sum();
        for kk in 0..k {
            let m = &self.mean[kk * dd..(kk + 1) * dd];
            let mut sq = 0.0;
            for i in 0..dd {
                let r = x[i] - m[i];
                sq += r * r * self.inv_var[i];
            }
            let lpx = lpx_const - 0.5 * sq;
            let zk = &self.z[kk * d..(kk + 1) * d];
            let ek = &eps[kk * d..(kk + 1) * d];
            let lpz: f64 = zk.iter().map(|z| -0.5 * (LN_2PI + z * z)).sum();
            let lq = lq_const - 0.5 * ek.iter().map(|e| e * e).sum::<f64>();
            self.log_w[kk] = lpx + lpz - lq;
        }

        let ln_k = math::ln(k as f64);
        self.coef.copy_from_slice(&self.log_w);
        let loss = match objective {
            Objective::Iwae => {
                let lse = softmax_in_place(&mut self.coef);
                self.coef.iter_mut().for_each(|c| *c = -*c);
                -(lse - ln_k)
            }
            Objective::Cubo { u } => {
                self.coef.iter_mut().for_each(|c| *c *= u);
                let lse = softmax_in_place(&mut self.coef);
                (lse - ln_k) / u
            }
        };

        if let Some((g, scale)) = grad {
            self.backward(p, x, eps, g, scale);
        }
        loss
    }

    /// Backprop of `Σ_k coef_k · log w_k`, scaled.
    fn backward(&mut self, p: &MlpParams, x: &[f64], eps: &[f64], g: &mut MlpParams, scale: f64) {
        let a = p.arch;
        let (dd, d, h) = (a.input_dim, a.latent_dim, a.hidden);
        let k = self.k;
        let gamma = p.block(Block::DecLogvar);

        // Decoder head and likelihood log-variance.
        {
            let g_gamma = &mut g.values[g.layout.range(Block::DecLogvar)];
            for kk in 0..k {
                let c = scale * self.coef[kk];
                let m = &self.mean[kk * dd..(kk + 1) * dd];
                let go = &mut self.g_out[kk * dd..(kk + 1) * dd];
                for i in 0..dd {
                    let gi = gamma[i];
                    let inv_var = self.inv_var[i];
                    let r = x[i] - m[i];
                    let link = match a.output {
                        OutputMean::Sigmoid => m[i] * (1.0 - m[i]),
                        OutputMean::Identity => 1.0,
                    };
                    go[i] = c * r * inv_var * link;
                    if gi > LOGVAR_MIN && gi < LOGVAR_MAX {
                        g_gamma[i] += c * (-0.5 + 0.5 * r * r * inv_var);
                    }
                }
            }
        }

        // Decoder layers, batched over the k draws.
        let t = &mut self.t_a;
        transpose_into(&self.g_out, k, dd, t);
        gemm(t, &self.dh2, dd, h, k, &mut g.values[g.layout.range(Block::DecMuW)], true);
        add_column_sums(&self.g_out, dd, &mut g.values[g.layout.range(Block::DecMuB)]);
        gemm(&self.g_out, p.block(Block::DecMuW), k, h, dd, &mut self.g_h2, false);
        mul_slopes(&mut self.g_h2, &self.da2, a.activation);

        transpose_into(&self.g_h2, k, h, t);
        gemm(t, &self.dh1, h, h, k, &mut g.values[g.layout.range(Block::DecW2)], true);
        add_column_sums(&self.g_h2, h, &mut g.values[g.layout.range(Block::DecB2)]);
        gemm(&self.g_h2, p.block(Block::DecW2), k, h, h, &mut self.g_h1, false);
        mul_slopes(&mut self.g_h1, &self.da1, a.activation);

        transpose_into(&self.g_h1, k, h, t);
        gemm(t, &self.z, h, d, k, &mut g.values[g.layout.range(Block::DecW1)], true);
        add_column_sums(&self.g_h1, h, &mut g.values[g.layout.range(Block::DecB1)]);
        gemm(&self.g_h1, p.block(Block::DecW1), k, d, h, &mut self.g_z, false);
        // Prior term: ∂ log p(z)/∂z = -z.
        for kk in 0..k {
            let c = scale * self.coef[kk];
            for j in 0..d {
                self.g_z[kk * d + j] -= c * self.z[kk * d + j];
            }
        }

        // Through z = mu + sd ⊙ eps, plus the +½·logvar from -log q.
        self.g_mu.iter_mut().for_each(|v| *v = 0.0);
        self.g_lv.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let c = scale * self.coef[kk];
            for j in 0..d {
                let gz = self.g_z[kk * d + j];
                self.g_mu[j] += gz;
                self.g_lv[j] += gz * eps[kk * d + j] * self.sd[j] * 0.5 + 0.5 * c;
            }
        }
        for j in 0..d {
            let raw = self.lv_raw[j];
            if !(raw > LOGVAR_MIN && raw < LOGVAR_MAX) {
                self.g_lv[j] = 0.0;
            }
        }

        // Encoder.
        let wm = p.block(Block::EncMuW);
        let wl = p.block(Block::EncLogvarW);
        let r_wm = g.layout.range(Block::EncMuW);
        let r_bm = g.layout.range(Block::EncMuB);
        let r_wl = g.layout.range(Block::EncLogvarW);
        let r_bl = g.layout.range(Block::EncLogvarB);
        self.g_eh2.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..d {
            let gm = self.g_mu[j];
            let gl = self.g_lv[j];
            axpy(gm, &self.eh2, &mut g.values[r_wm.start + j * h..r_wm.start + (j + 1) * h]);
            g.values[r_bm.start + j] += gm;
            axpy(gl, &self.eh2, &mut g.values[r_wl.start + j * h..r_wl.start + (j + 1) * h]);
            g.values[r_bl.start + j] += gl;
            axpy(gm, &wm[j * h..(j + 1) * h], &mut self.g_eh2);
            axpy(gl, &wl[j * h..(j + 1) * h], &mut self.g_eh2);
        }
        for o in 0..h {
            self.g_eh2[o] *= a.activation.slope(self.ea2[o]);
        }
        let ew2 = p.block(Block::EncW2);
        let r_ew2 = g.layout.range(Block::EncW2);
        let r_eb2 = g.layout.range(Block::EncB2);
        self.g_eh1.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..h {
            let ga = self.g_eh2[o];
            axpy(ga, &self.eh1, &mut g.values[r_ew2.start + o * h..r_ew2.start + (o + 1) * h]);
            g.values[r_eb2.start + o] += ga;
            axpy(ga, &ew2[o * h..(o + 1) * h], &mut self.g_eh1);
        }
        for o in 0..h {
            self.g_eh1[o] *= a.activation.slope(self.ea1[o]);
        }
        let r_ew1 = g.layout.range(Block::EncW1);
        let r_eb1 = g.layout.range(Block::EncB1);
        for o in 0..h {
            let ga = self.g_eh1[o];
            axpy(ga, x, &mut g.values[r_ew1.start + o * dd..r_ew1.start + (o + 1) * dd]);
            g.values[r_eb1.start + o] += ga;
        }
    }
}

fn dense_activate(pre: &mut [f64], post: &mut [f64], bias: &[f64], act: Activation) {
    for (a_row, h_row) in pre.chunks_exact_mut(bias.len()).zip(post.chunks_exact_mut(bias.len())) {
        for ((a, h), b) in a_row.iter_mut().zip(h_row.iter_mut()).zip(bias) {
            *a += b;
            *h = act.apply(*a);
        }
    }
}

fn mul_slopes(grad: &mut [f64], pre: &[f64], act: Activation) {
    for (g, a) in grad.iter_mut().zip(pre) {
        *g *= act.slope(*a);
    }
}

fn add_column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Encoder forward pass.
pub fn encode(p: &MlpParams, x: &[f64]) -> GaussianCode {
    let mut ws = Workspace::new(&p.arch, 1);
    ws.encode(p, x);
    GaussianCode {
        mu: ws.mu,
        logvar: ws.lv,
    }
}

/// Decoder forward pass: likelihood mean and (shared) log-variance.
pub fn decode(p: &MlpParams, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ws = Workspace::new(&p.arch, 1);
    ws.z.copy_from_slice(z);
    ws.decode_rows(p);
    let logvar = p
        .block(Block::DecLogvar)
        .iter()
        .map(|g| g.clamp(LOGVAR_MIN, LOGVAR_MAX))
        .collect();
    (ws.mean, logvar)
}

fn draw_noise(rng: &mut SeededRng, arch: &Architecture, k: usize) -> Vec<f64> {
    let mut eps = vec![0.0; k * arch.latent_dim];
    rng.fill_normal(&mut eps);
    eps
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::argument("number of importance samples K must be at least 1"));
    }
    Ok(())
}

/// Objective value for fixed noise draws `eps` (`k × d`, row-major).
pub fn loss_with_noise(p: &MlpParams, x: &[f64], eps: &[f64], objective: Objective) -> Result<f64> {
    let d = p.arch.latent_dim;
    if eps.is_empty() || !eps.len().is_multiple_of(d) {
        return Err(Error::shape("noise draws", d, eps.len()));
    }
    if x.len() != p.arch.input_dim {
        return Err(Error::shape("input sample", p.arch.input_dim, x.len()));
    }
    let mut ws = Workspace::new(&p.arch, eps.len() / d);
    Ok(ws.evaluate(p, x, eps, objective, None))
}

/// Objective value and its gradient for fixed noise draws.
pub fn grad_with_noise(
    p: &MlpParams,
    x: &[f64],
    eps: &[f64],
    objective: Objective,
) -> Result<(f64, MlpParams)> {
    let d = p.arch.latent_dim;
    if eps.is_empty() || !eps.len().is_multiple_of(d) {
        return Err(Error::shape("noise draws", d, eps.len()));
    }
    if x.len() != p.arch.input_dim {
        return Err(Error::shape("input sample", p.arch.input_dim, x.len()));
    }
    let mut ws = Workspace::new(&p.arch, eps.len() / d);
    let mut g = p.zeros_like();
    let loss = ws.evaluate(p, x, eps, objective, Some((&mut g, 1.0)));
    Ok((loss, g))
}

/// Single Monte-Carlo estimate of the negative `k`-sample importance-weighted bound.
pub fn iwae_loss(p: &MlpParams, x: &[f64], k: usize, rng: &mut SeededRng) -> Result<f64> {
    check_k(k)?;
    let eps = draw_noise(rng, &p.arch, k);
    loss_with_noise(p, x, &eps, Objective::Iwae)
}

/// Pathwise gradient of [`iwae_loss`]; consumes the same draws from `rng`.
pub fn iwae_grad(p: &MlpParams, x: &[f64], k: usize, rng: &mut SeededRng) -> Result<(f64, MlpParams)> {
    check_k(k)?;
    let eps = draw_noise(rng, &p.arch, k);
    grad_with_noise(p, x, &eps, Objective::Iwae)
}

/// Negative ELBO, i.e. the importance-weighted loss with a single draw.
pub fn vae_loss(p: &MlpParams, x: &[f64], rng: &mut SeededRng) -> Result<f64> {
    iwae_loss(p, x, 1, rng)
}

/// Monte-Carlo estimate of the chi upper bound with exponent `u > 1`.
pub fn cubo_loss(p: &MlpParams, x: &[f64], u: f64, k: usize, rng: &mut SeededRng) -> Result<f64> {
    let objective = Objective::cubo(u)?;
    check_k(k)?;
    let eps = draw_noise(rng, &p.arch, k);
    loss_with_noise(p, x, &eps, objective)
}

pub fn cubo_grad(
    p: &MlpParams,
    x: &[f64],
    u: f64,
    k: usize,
    rng: &mut SeededRng,
) -> Result<(f64, MlpParams)> {
    let objective = Objective::cubo(u)?;
    check_k(k)?;
    let eps = draw_noise(rng, &p.arch, k);
    grad_with_noise(p, x, &eps, objective)
}

/// Row key used to derive a per-sample noise stream from the row contents.
pub fn row_key(row: &[f64]) -> u64 {
    // FNV-1a over the IEEE bits.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for v in row {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

/// Per-sample IWAE losses for every row of `x`.
///
/// Each row draws its noise from the stream `(seed, row_key(row))`, so the
/// result is equivariant under row permutations.
pub fn per_sample_losses(p: &MlpParams, x: &Matrix, k: usize, seed: u64) -> Result<Vec<f64>> {
    check_k(k)?;
    if x.cols() != p.arch.input_dim {
        return Err(Error::shape("per_sample_losses", p.arch.input_dim, x.cols()));
    }
    let mut ws = Workspace::new(&p.arch, k);
    let mut eps = vec![0.0; k * p.arch.latent_dim];
    let mut out = Vec::with_capacity(x.rows());
    for row in x.iter_rows() {
        let mut rng = SeededRng::derive(seed, row_key(row));
        rng.fill_normal(&mut eps);
        out.push(ws.evaluate(p, row, &eps, Objective::Iwae, None));
    }
    Ok(out)
}
