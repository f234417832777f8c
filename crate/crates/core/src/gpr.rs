//! Gaussian process regression with an anisotropic Matérn 5/2 kernel.
//!
//! Inputs and targets are standardized before fitting. Hyperparameters (length-scales, signal
//! variance, nugget) are fitted on a log scale by maximizing the marginal likelihood
//! with analytic gradients and several starts.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::kernels::matern52_profile;
use crate::localopt::{self, BoundedProblem};

pub const LENGTH_SCALE_MIN: f64 = 1e-2;
pub const LENGTH_SCALE_MAX: f64 = 1e2;
pub const SIGNAL_VARIANCE_MIN: f64 = 1e-2;
pub const SIGNAL_VARIANCE_MAX: f64 = 1e2;
pub const NUGGET_MIN: f64 = 1e-8;
pub const NUGGET_MAX: f64 = 1e-2;
/// Nugget of the heuristic starting point.
pub const NUGGET_INIT: f64 = 1e-6;
/// Log-uniform random starts in addition to the heuristic one.
pub const RANDOM_STARTS: usize = 4;
/// Iteration cap of each likelihood optimization.
pub const MAX_ITERS: usize = 100;
/// Magnitude of the perturbation applied to duplicated input rows.
pub const DUPLICATE_JITTER: f64 = 1e-8;

const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    pub nugget: f64,
}

impl Hyperparameters {
    /// `(ln l_1, .., ln l_d, ln sigma^2, ln nugget)`
    pub fn to_log(&self) -> Vec<f64> {
        let mut theta: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        theta.push(self.signal_variance.ln());
        theta.push(self.nugget.ln());
        theta
    }

    pub fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        Self {
            length_scales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[d].exp(),
            nugget: theta[d + 1].exp(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.length_scales.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.length_scales.len(),
            });
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.length_scales.iter().all(|&l| positive(l)) || !positive(self.signal_variance) || !positive(self.nugget)
        {
            return Err(Error::InvalidArgument("hyperparameters must be positive".into()));
        }
        Ok(())
    }

    /// Box of the log-parameters searched by [`fit`].
    pub fn log_bounds(dim: usize) -> Bounds {
        let mut lower = vec![LENGTH_SCALE_MIN.ln(); dim];
        let mut upper = vec![LENGTH_SCALE_MAX.ln(); dim];
        lower.extend([SIGNAL_VARIANCE_MIN.ln(), NUGGET_MIN.ln()]);
        upper.extend([SIGNAL_VARIANCE_MAX.ln(), NUGGET_MAX.ln()]);
        Bounds::new(lower, upper).expect("static hyperparameter bounds")
    }
}

/// Zero-mean, unit-variance transform; `(standardized, mean, scale)`. A spread below
/// 1e-12 falls back to scale 1.
pub fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 { sd } else { 1.0 };
    (y.iter().map(|v| (v - mean) / scale).collect(), mean, scale)
}

fn check_inputs(z: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if z.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: y.len(),
        });
    }
    if z.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: z.len(),
        });
    }
    let d = z[0].len();
    if d == 0 {
        return Err(Error::InvalidArgument(
            "inputs must have at least one coordinate".into(),
        ));
    }
    for row in z {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("inputs must be finite".into()));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("targets must be finite".into()));
    }
    Ok(d)
}

/// Marginal likelihood of standardized targets; pairwise squared coordinate
/// differences are cached once per data set.
struct Likelihood<'a> {
    n: usize,
    d: usize,
    y: &'a DVector<f64>,
    /// `(x_i - x_j)_m^2` for every pair `i < j`, row-major by pair.
    pair_sq: Vec<f64>,
}

impl<'a> Likelihood<'a> {
    fn new(z: &[Vec<f64>], y: &'a DVector<f64>) -> Self {
        let (n, d) = (z.len(), z[0].len());
        let mut pair_sq = Vec::with_capacity(n * (n - 1) / 2 * d);
        for j in 0..n {
            for i in 0..j {
                pair_sq.extend(z[i].iter().zip(&z[j]).map(|(a, b)| (a - b) * (a - b)));
            }
        }
        Self { n, d, y, pair_sq }
    }

    /// Covariance with nugget and, per pair, `s2 (5/3) (1 + sqrt5 rho) exp(-sqrt5 rho)`.
    fn covariance(&self, theta: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let (n, d) = (self.n, self.d);
        let inv_l2: Vec<f64> = theta[..d].iter().map(|t| (-2.0 * t).exp()).collect();
        let s2 = theta[d].exp();
        let nugget = theta[d + 1].exp();
        let mut k = DMatrix::zeros(n, n);
        let mut factors = Vec::with_capacity(n * (n - 1) / 2);
        let mut p = 0;
        for j in 0..n {
            for i in 0..j {
                let sq = &self.pair_sq[p * d..(p + 1) * d];
                let rho = sq.iter().zip(&inv_l2).map(|(a, b)| a * b).sum::<f64>().sqrt();
                let s = SQRT5 * rho;
                let e = (-s).exp();
                let v = s2 * (1.0 + s + s * s / 3.0) * e;
                k[(i, j)] = v;
                k[(j, i)] = v;
                factors.push(s2 * (5.0 / 3.0) * (1.0 + s) * e);
                p += 1;
            }
            k[(j, j)] = s2 + nugget;
        }
        (k, factors)
    }

    /// Cholesky factor, `K^-1 y` and the likelihood value; `None` if `k` is not
    /// numerically positive definite.
    fn factor(&self, k: &DMatrix<f64>) -> Option<(faer::linalg::solvers::Llt<f64>, Vec<f64>, f64)> {
        let n = self.n;
        let dense = faer::MatRef::from_column_major_slice(k.as_slice(), n, n);
        let llt = dense.llt(faer::Side::Lower).ok()?;
        let y = faer::MatRef::from_column_major_slice(self.y.as_slice(), n, 1);
        let alpha = llt.solve(y);
        let alpha: Vec<f64> = (0..n).map(|i| alpha[(i, 0)]).collect();
        let l = llt.L();
        let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        let fit: f64 = self.y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let value = 0.5 * fit + log_det_half + 0.5 * n as f64 * LN_2PI;
        Some((llt, alpha, value))
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let (k, _) = self.covariance(theta);
        self.factor(&k).map_or(f64::INFINITY, |(_, _, value)| value)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (n, d) = (self.n, self.d);
        let (k, factors) = self.covariance(theta);
        let Some((llt, alpha, value)) = self.factor(&k) else {
            return (f64::INFINITY, vec![0.0; d + 2]);
        };
        let k_inv = llt.inverse();
        let w = |i: usize, j: usize| alpha[i] * alpha[j] - k_inv[(i, j)];
        let inv_l2: Vec<f64> = theta[..d].iter().map(|t| (-2.0 * t).exp()).collect();
        let s2 = theta[d].exp();
        let nugget = theta[d + 1].exp();

        // d NLL / d theta = -1/2 tr(W dK/d theta); off-diagonal pairs count twice
        let mut grad = vec![0.0; d + 2];
        let mut p = 0;
        for j in 0..n {
            for i in 0..j {
                let wij = w(i, j);
                let wc = wij * factors[p];
                let sq = &self.pair_sq[p * d..(p + 1) * d];
                for m in 0..d {
                    grad[m] -= wc * sq[m] * inv_l2[m];
                }
                grad[d] -= wij * k[(i, j)];
                p += 1;
            }
        }
        let trace_w: f64 = (0..n).map(|i| w(i, i)).sum();
        grad[d] -= 0.5 * s2 * trace_w;
        grad[d + 1] = -0.5 * nugget * trace_w;
        (value, grad)
    }
}

/// Negative log marginal likelihood of `y` (already standardized) at `hyper`.
pub fn negative_log_likelihood(z: &[Vec<f64>], y: &[f64], hyper: &Hyperparameters) -> Result<f64> {
    let d = check_inputs(z, y)?;
    hyper.validate(d)?;
    let yv = DVector::from_column_slice(y);
    let value = Likelihood::new(z, &yv).value(&hyper.to_log());
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::IllConditioned { nugget: hyper.nugget })
    }
}

/// Negative log marginal likelihood and its gradient with respect to
/// [`Hyperparameters::to_log`].
pub fn negative_log_likelihood_gradient(z: &[Vec<f64>], y: &[f64], hyper: &Hyperparameters) -> Result<(f64, Vec<f64>)> {
    let d = check_inputs(z, y)?;
    hyper.validate(d)?;
    let yv = DVector::from_column_slice(y);
    let (value, grad) = Likelihood::new(z, &yv).value_and_gradient(&hyper.to_log());
    if value.is_finite() {
        Ok((value, grad))
    } else {
        Err(Error::IllConditioned { nugget: hyper.nugget })
    }
}

/// Posterior prediction with gradients with respect to the input point.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionWithGradient {
    pub mean: f64,
    pub variance: f64,
    pub mean_gradient: Vec<f64>,
    pub variance_gradient: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GprModel {
    raw_inputs: Vec<Vec<f64>>,
    /// Standardized inputs, the ones the kernel sees.
    inputs: Vec<Vec<f64>>,
    transform: InputTransform,
    hyper: Hyperparameters,
    y_mean: f64,
    y_scale: f64,
    targets: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Fits hyperparameters by maximum likelihood and conditions on the data.
pub fn fit<R: Rng + ?Sized>(z: &[Vec<f64>], y: &[f64], rng: &mut R) -> Result<GprModel> {
    let d = check_inputs(z, y)?;
    let raw = jitter_duplicates(z, rng);
    let transform = InputTransform::from_data(&raw);
    let inputs: Vec<Vec<f64>> = raw.iter().map(|p| transform.apply(p)).collect();
    let (ys, _, _) = standardize(y);
    let yv = DVector::from_vec(ys);
    let likelihood = Likelihood::new(&inputs, &yv);
    let bounds = Hyperparameters::log_bounds(d);

    let heuristic = heuristic_hyperparameters(&inputs);
    let mut starts = vec![heuristic.to_log()];
    for _ in 0..RANDOM_STARTS {
        starts.push(
            bounds
                .lower()
                .iter()
                .zip(bounds.upper())
                .map(|(&l, &u)| rng.random_range(l..=u))
                .collect(),
        );
    }
    let problem = BoundedProblem::new(|t: &[f64]| likelihood.value(t), bounds, MAX_ITERS)
        .with_gradient(|t: &[f64]| likelihood.value_and_gradient(t));
    let hyper = match localopt::minimize_multistart(&problem, &starts) {
        Ok(res) if res.value.is_finite() => Hyperparameters::from_log(&res.x),
        _ => heuristic,
    };
    GprModel::condition(raw, transform, y, hyper)
}

/// Per-coordinate standardization of the inputs; hyperparameters live in these
/// units. A spread below 1e-12 falls back to scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTransform {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputTransform {
    pub fn from_data(z: &[Vec<f64>]) -> Self {
        let n = z.len() as f64;
        let d = z[0].len();
        let mean: Vec<f64> = (0..d).map(|m| z.iter().map(|p| p[m]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|m| {
                let var = z.iter().map(|p| (p[m] - mean[m]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Length-scales at a quarter of each input range, unit signal variance.
fn heuristic_hyperparameters(z: &[Vec<f64>]) -> Hyperparameters {
    let d = z[0].len();
    let length_scales = (0..d)
        .map(|m| {
            let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[m]), hi.max(p[m]))
            });
            let l = if hi > lo { (hi - lo) / 4.0 } else { 1.0 };
            l.clamp(LENGTH_SCALE_MIN, LENGTH_SCALE_MAX)
        })
        .collect();
    Hyperparameters {
        length_scales,
        signal_variance: 1.0,
        nugget: NUGGET_INIT,
    }
}

fn jitter_duplicates<R: Rng + ?Sized>(z: &[Vec<f64>], rng: &mut R) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(z.len());
    for row in z {
        let mut row = row.clone();
        while out.contains(&row) {
            for v in row.iter_mut() {
                *v += DUPLICATE_JITTER * rng.random_range(-1.0..=1.0);
            }
        }
        out.push(row);
    }
    out
}

impl GprModel {
    /// Conditions on the data with fixed hyperparameters, given in standardized
    /// input units. The nugget is raised by factors of ten up to 1e-2 if the
    /// covariance is not numerically positive definite.
    pub fn with_hyperparameters(z: &[Vec<f64>], y: &[f64], hyper: Hyperparameters) -> Result<Self> {
        check_inputs(z, y)?;
        let transform = InputTransform::from_data(z);
        Self::condition(z.to_vec(), transform, y, hyper)
    }

    fn condition(raw: Vec<Vec<f64>>, transform: InputTransform, y: &[f64], hyper: Hyperparameters) -> Result<Self> {
        hyper.validate(raw[0].len())?;
        let inputs: Vec<Vec<f64>> = raw.iter().map(|p| transform.apply(p)).collect();
        let (ys, y_mean, y_scale) = standardize(y);
        let yv = DVector::from_vec(ys);
        let likelihood = Likelihood::new(&inputs, &yv);
        let mut hyper = hyper;
        loop {
            let (k, _) = likelihood.covariance(&hyper.to_log());
            if let Some(chol) = k.cholesky() {
                let alpha = chol.solve(&yv);
                return Ok(Self {
                    raw_inputs: raw,
                    inputs,
                    transform,
                    hyper,
                    y_mean,
                    y_scale,
                    targets: yv,
                    chol,
                    alpha,
                });
            }
            if hyper.nugget >= NUGGET_MAX {
                return Err(Error::IllConditioned { nugget: hyper.nugget });
            }
            hyper.nugget = (hyper.nugget * 10.0).min(NUGGET_MAX);
        }
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// Training inputs as given (after duplicate jitter).
    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.raw_inputs
    }

    /// Training inputs in standardized units.
    pub fn standardized_inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn input_transform(&self) -> &InputTransform {
        &self.transform
    }

    pub fn dim(&self) -> usize {
        self.hyper.length_scales.len()
    }

    /// Lower Cholesky factor of the standardized covariance including the nugget.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `(mean, scale)` of the target standardization.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    /// Negative log marginal likelihood of the standardized targets at the fitted
    /// hyperparameters.
    pub fn negative_log_likelihood(&self) -> f64 {
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        0.5 * self.targets.dot(&self.alpha) + log_det_half + 0.5 * self.inputs.len() as f64 * LN_2PI
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let rho = a
            .iter()
            .zip(b)
            .zip(&self.hyper.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum::<f64>()
            .sqrt();
        self.hyper.signal_variance * matern52_profile(rho)
    }

    fn clamp_variance(&self, latent: f64) -> f64 {
        debug_assert!(
            latent >= -1e-8 * self.hyper.signal_variance.max(1.0),
            "posterior variance {latent} is negative beyond round-off"
        );
        latent.max(0.0)
    }

    /// Posterior mean and variance of the latent function on the original y scale.
    pub fn predict(&self, z: &[f64]) -> Result<(f64, f64)> {
        self.check_point(z)?;
        let z = self.transform.apply(z);
        let k = DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|p| self.kernel(&z, p)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let latent = self.hyper.signal_variance - k.dot(&v);
        let variance = self.clamp_variance(latent);
        Ok((
            self.y_mean + self.y_scale * mean,
            variance * self.y_scale * self.y_scale,
        ))
    }

    pub fn predict_with_gradient(&self, z: &[f64]) -> Result<PredictionWithGradient> {
        self.check_point(z)?;
        let z = self.transform.apply(z);
        let (n, d) = (self.inputs.len(), self.dim());
        let s2 = self.hyper.signal_variance;
        let inv_l2: Vec<f64> = self.hyper.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut k = DVector::zeros(n);
        // dk_i/dz_m = -s2 (5/3)(1 + sqrt5 rho) exp(-sqrt5 rho) (z_m - p_m) / l_m^2
        let mut dk = DMatrix::zeros(n, d);
        for (i, p) in self.inputs.iter().enumerate() {
            let rho = z
                .iter()
                .zip(p)
                .zip(&inv_l2)
                .map(|((a, b), il)| (a - b) * (a - b) * il)
                .sum::<f64>()
                .sqrt();
            let s = SQRT5 * rho;
            let e = (-s).exp();
            k[i] = s2 * (1.0 + s + s * s / 3.0) * e;
            let c = -s2 * (5.0 / 3.0) * (1.0 + s) * e;
            for m in 0..d {
                dk[(i, m)] = c * (z[m] - p[m]) * inv_l2[m];
            }
        }
        let v = self.chol.solve(&k);
        let latent = s2 - k.dot(&v);
        let variance = self.clamp_variance(latent);
        let scale2 = self.y_scale * self.y_scale;
        // chain rule through the input standardization
        let input_scale = &self.transform.scale;
        let mean_gradient = (dk.transpose() * &self.alpha)
            .iter()
            .zip(input_scale)
            .map(|(g, s)| g * self.y_scale / s)
            .collect();
        let variance_gradient = if latent > 0.0 {
            (dk.transpose() * &v)
                .iter()
                .zip(input_scale)
                .map(|(g, s)| -2.0 * g * scale2 / s)
                .collect()
        } else {
            vec![0.0; d]
        };
        Ok(PredictionWithGradient {
            mean: self.y_mean + self.y_scale * k.dot(&self.alpha),
            variance: variance * scale2,
            mean_gradient,
            variance_gradient,
        })
    }
}
