//! Kernel functions, Gram matrices and feature-space distances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower end of the RBF width range searched by gamma tuning.
pub const GAMMA_MIN: f64 = 1e-4;
/// Upper end of the RBF width range searched by gamma tuning.
pub const GAMMA_MAX: f64 = 2.0;

/// Radicands of `feature_distance` below this indicate a non-PSD kernel.
const NEGATIVE_RADICAND_TOL: f64 = -1e-12;

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `exp(-gamma ||x - y||^2)`
    Rbf { gamma: f64 },
    /// Anisotropic Matérn 5/2 with per-dimension length-scales.
    Matern52 {
        length_scales: Vec<f64>,
        signal_variance: f64,
    },
    /// `<x, y>`
    Linear,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rbf gamma must be positive, got {gamma}"
            )));
        }
        Ok(KernelSpec::Rbf { gamma })
    }

    pub fn matern52(length_scales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if length_scales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("length-scales must be positive".into()));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::InvalidArgument("signal variance must be positive".into()));
        }
        Ok(KernelSpec::Matern52 {
            length_scales,
            signal_variance,
        })
    }

    /// Kernel value without dimension checks.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Matern52 {
                length_scales,
                signal_variance,
            } => {
                let rho = x
                    .iter()
                    .zip(y)
                    .zip(length_scales)
                    .map(|((a, b), l)| ((a - b) / l).powi(2))
                    .sum::<f64>()
                    .sqrt();
                signal_variance * matern52_profile(rho)
            }
            KernelSpec::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

/// `(1 + sqrt5 rho + 5 rho^2 / 3) exp(-sqrt5 rho)`
pub fn matern52_profile(rho: f64) -> f64 {
    let s = SQRT5 * rho;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn check_pair(k: &KernelSpec, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if let KernelSpec::Matern52 { length_scales, .. } = k {
        if length_scales.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: length_scales.len(),
                got: x.len(),
            });
        }
    }
    Ok(())
}

pub fn kernel_eval(k: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(k, x, y)?;
    Ok(k.eval_unchecked(x, y))
}

/// `G_ij = k(x_i, x_j)`.
pub fn gram(k: &KernelSpec, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidArgument("gram matrix of an empty point set".into()));
    }
    for p in points {
        check_pair(k, &points[0], p)?;
    }
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = k.eval_unchecked(&points[i], &points[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// `||phi(x) - phi(y)||` in the kernel's feature space.
pub fn feature_distance(k: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(k, x, y)?;
    let radicand = k.eval_unchecked(x, x) - 2.0 * k.eval_unchecked(x, y) + k.eval_unchecked(y, y);
    if radicand < NEGATIVE_RADICAND_TOL {
        return Err(Error::InvalidArgument(format!(
            "kernel is not positive semi-definite (squared distance {radicand:e})"
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}
