//! Dense row-major matrices, stable reductions and the seeded random stream.
//!
//! Normal variates come from the Box–Muller transform driven by
//! xoshiro256++; every transcendental goes through `libm`, so a given seed
//! yields the same bits on every platform.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::math;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A dataset: one sample per row.
pub type DataMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so zero-width matrices yield empty rows.
        let cols = self.cols;
        (0..self.rows).map(move |r| &self.data[r * cols..(r + 1) * cols])
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.cols, b.rows));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            axpy(aik, &b.data[k * b.cols..(k + 1) * b.cols], out_row);
        }
    }
    Ok(out)
}

/// Dot product with four independent accumulators, combined in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[i·n + j] (+)= Σ_l a[i·kd + l] · b[l·n + j]` for an `m × kd` matrix
/// `a` and a `kd × n` matrix `b`. Overwrites unless `accumulate`.
///
/// Every entry is summed in increasing `l`, exactly as a naive triple loop,
/// so the result is the same whichever kernel runs.
pub fn gemm(a: &[f64], b: &[f64], m: usize, n: usize, kd: usize, out: &mut [f64], accumulate: bool) {
    assert!(a.len() >= m * kd && b.len() >= kd * n && out.len() >= m * n);
    #[cfg(target_arch = "x86_64")]
    if simd::has_avx512() {
        // SAFETY: the CPU and OS support AVX-512F.
        unsafe { simd::gemm_avx512(a, b, m, n, kd, out, accumulate) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if simd::has_avx() {
        // SAFETY: the CPU and OS support AVX.
        unsafe { simd::gemm_avx(a, b, m, n, kd, out, accumulate) };
        return;
    }
    gemm_tiled::<4>(a, b, m, n, kd, out, accumulate);
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use core::arch::x86_64::{__cpuid, __cpuid_count, _xgetbv};
    use core::sync::atomic::{AtomicU8, Ordering};

    static AVX: AtomicU8 = AtomicU8::new(0);
    static AVX512: AtomicU8 = AtomicU8::new(0);

    pub fn has_avx() -> bool {
        match AVX.load(Ordering::Relaxed) {
            0 => {
                let yes = detect();
                AVX.store(if yes { 2 } else { 1 }, Ordering::Relaxed);
                yes
            }
            v => v == 2,
        }
    }

    fn detect() -> bool {
        #[allow(unused_unsafe)]
        let leaf = unsafe { __cpuid(1) };
        let osxsave = leaf.ecx & (1 << 27) != 0;
        let avx = leaf.ecx & (1 << 28) != 0;
        // SAFETY: OSXSAVE set means XGETBV is available.
        osxsave && avx && unsafe { xcr0() } & 0b110 == 0b110
    }

    #[target_feature(enable = "xsave")]
    unsafe fn xcr0() -> u64 {
        _xgetbv(0)
    }

    pub fn has_avx512() -> bool {
        match AVX512.load(Ordering::Relaxed) {
            0 => {
                let yes = has_avx() && detect512();
                AVX512.store(if yes { 2 } else { 1 }, Ordering::Relaxed);
                yes
            }
            v => v == 2,
        }
    }

    fn detect512() -> bool {
        #[allow(unused_unsafe)]
        let leaf = unsafe { __cpuid_count(7, 0) };
        // SAFETY: only called once AVX, hence XGETBV, is known to be usable.
        leaf.ebx & (1 << 16) != 0 && unsafe { xcr0() } & 0b1110_0110 == 0b1110_0110
    }

    #[target_feature(enable = "avx512f")]
    pub unsafe fn gemm_avx512(a: &[f64], b: &[f64], m: usize, n: usize, kd: usize, out: &mut [f64], accumulate: bool) {
        super::gemm_tiled::<16>(a, b, m, n, kd, out, accumulate);
    }

    #[target_feature(enable = "avx")]
    pub unsafe fn gemm_avx(a: &[f64], b: &[f64], m: usize, n: usize, kd: usize, out: &mut [f64], accumulate: bool) {
        super::gemm_tiled::<8>(a, b, m, n, kd, out, accumulate);
    }
}

/// Column strips `NR` wide, then narrower strips for the remainder.
#[inline(always)]
fn gemm_tiled<const NR: usize>(a: &[f64], b: &[f64], m: usize, n: usize, kd: usize, out: &mut [f64], accumulate: bool) {
    let mut j0 = 0;
    while j0 + NR <= n {
        gemm_strip::<NR>(a, b, m, n, kd, out, accumulate, j0);
        j0 += NR;
    }
    if NR > 8 && j0 + 8 <= n {
        gemm_strip::<8>(a, b, m, n, kd, out, accumulate, j0);
        j0 += 8;
    }
    if NR > 4 && j0 + 4 <= n {
        gemm_strip::<4>(a, b, m, n, kd, out, accumulate, j0);
        j0 += 4;
    }
    while j0 < n {
        gemm_strip::<1>(a, b, m, n, kd, out, accumulate, j0);
        j0 += 1;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_strip<const W: usize>(
    a: &[f64],
    b: &[f64],
    m: usize,
    n: usize,
    kd: usize,
    out: &mut [f64],
    accumulate: bool,
    j0: usize,
) {
    let mut i0 = 0;
    while i0 + 4 <= m {
        gemm_tile::<4, W>(a, b, n, kd, out, accumulate, i0, j0);
        i0 += 4;
    }
    while i0 < m {
        gemm_tile::<1, W>(a, b, n, kd, out, accumulate, i0, j0);
        i0 += 1;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_tile<const R: usize, const W: usize>(
    a: &[f64],
    b: &[f64],
    n: usize,
    kd: usize,
    out: &mut [f64],
    accumulate: bool,
    i0: usize,
    j0: usize,
) {
    let rows: [&[f64]; R] = core::array::from_fn(|r| &a[(i0 + r) * kd..(i0 + r + 1) * kd]);
    let mut acc = [[0.0f64; W]; R];
    for l in 0..kd {
        let row: &[f64; W] = b[l * n + j0..l * n + j0 + W].try_into().unwrap();
        for r in 0..R {
            let x = rows[r][l];
            for c in 0..W {
                acc[r][c] += x * row[c];
            }
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        let o: &mut [f64; W] = (&mut out[(i0 + r) * n + j0..(i0 + r) * n + j0 + W]).try_into().unwrap();
        for (oc, v) in o.iter_mut().zip(acc_r) {
            *oc = if accumulate { *oc + v } else { *v };
        }
    }
}

/// Writes the transpose of the `rows × cols` row-major `src` into `dst`.
pub fn transpose_into(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// `log Σ exp(v_i)`, shifted by the maximum so large entries cannot overflow.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::argument("log_sum_exp of an empty vector"));
    }
    Ok(log_sum_exp_nonempty(v))
}

#[inline]
pub(crate) fn log_sum_exp_nonempty(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    let sum: f64 = v.iter().map(|&x| math::exp(x - max)).sum();
    max + math::ln(sum)
}

/// In-place softmax of `v`, returning `log Σ exp(v_i)`.
pub(crate) fn softmax_in_place(v: &mut [f64]) -> f64 {
    let lse = log_sum_exp_nonempty(v);
    for x in v.iter_mut() {
        *x = math::exp(*x - lse);
    }
    lse
}

/// Mixes a base seed with a stream id (SplitMix64 finalizer), so parallel
/// consumers get decorrelated, reproducible streams.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream (xoshiro256++ with Box–Muller normals).
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream `(seed, stream)`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        SeededRng::new(split_seed(seed, stream))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` (rejection sampling, unbiased).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = core::f64::consts::TAU * u2;
        self.spare_normal = Some(r * math::sin(theta));
        r * math::cos(theta)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.normal();
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i + 1);
            v.swap(i, j);
        }
    }
}

/// `n` i.i.d. standard normal draws.
pub fn gauss_sample(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    rng.fill_normal(&mut out);
    out
}
