//! Per-feature scaling fitted once on the training matrix.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::numkernel::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ScalerKind {
    /// Maps each feature onto `[0, 1]`.
    #[default]
    MinMax,
    /// Zero mean, unit (population) variance.
    Standardize,
}

/// Fitted per-feature statistics.
///
/// For min-max, `a` is the column minimum and `b` the maximum; for
/// standardization, `a` is the mean and `b` the population standard
/// deviation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalerParams {
    pub kind: ScalerKind,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub constant: Vec<bool>,
}

pub fn fit_scaler(x: &Matrix, kind: ScalerKind) -> Result<ScalerParams> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::argument("cannot fit a scaler on an empty matrix"));
    }
    let d = x.cols();
    let n = x.rows() as f64;
    let (a, b) = match kind {
        ScalerKind::MinMax => {
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for row in x.iter_rows() {
                for j in 0..d {
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
            (lo, hi)
        }
        ScalerKind::Standardize => {
            let mut mean = vec![0.0; d];
            for row in x.iter_rows() {
                for j in 0..d {
                    mean[j] += row[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; d];
            for row in x.iter_rows() {
                for j in 0..d {
                    let c = row[j] - mean[j];
                    var[j] += c * c;
                }
            }
            let std = var.into_iter().map(|v| math::sqrt(v / n)).collect();
            (mean, std)
        }
    };
    let constant = match kind {
        ScalerKind::MinMax => a.iter().zip(&b).map(|(lo, hi)| hi <= lo).collect(),
        ScalerKind::Standardize => b.iter().map(|&s| s <= 0.0).collect(),
    };
    Ok(ScalerParams { kind, a, b, constant })
}

impl ScalerParams {
    pub fn num_features(&self) -> usize {
        self.a.len()
    }

    #[inline]
    fn scale_value(&self, j: usize, v: f64) -> f64 {
        if self.constant[j] {
            return 0.0;
        }
        match self.kind {
            ScalerKind::MinMax => ((v - self.a[j]) / (self.b[j] - self.a[j])).clamp(0.0, 1.0),
            ScalerKind::Standardize => (v - self.a[j]) / self.b[j],
        }
    }

    /// Maps scaled values back to raw units. Constant features return `a`.
    pub fn inverse(&self, x: &Matrix) -> Result<Matrix> {
        self.check_cols(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.constant[j] {
                    self.a[j]
                } else {
                    match self.kind {
                        ScalerKind::MinMax => self.a[j] + *v * (self.b[j] - self.a[j]),
                        ScalerKind::Standardize => self.a[j] + *v * self.b[j],
                    }
                };
            }
        }
        Ok(out)
    }

    fn check_cols(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.a.len() {
            return Err(Error::shape("scaler transform", self.a.len(), x.cols()));
        }
        Ok(())
    }
}

pub fn transform(x: &Matrix, s: &ScalerParams) -> Result<Matrix> {
    s.check_cols(x)?;
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = s.scale_value(j, *v);
        }
    }
    Ok(out)
}

/// Fit on `x`, then transform it.
pub fn fit_transform(x: &Matrix, kind: ScalerKind) -> Result<(Matrix, ScalerParams)> {
    let s = fit_scaler(x, kind)?;
    Ok((transform(x, &s)?, s))
}
