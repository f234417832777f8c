//! Rank-weighted kernel PCA, RBF width tuning and the reduced search domain.
//!
//! Archive points are centered on their mean and scaled by weights proportional to
//! `ln n - ln rank` (rank 1 = best objective value). Kernel PCA on the rescaled
//! points yields eigenfunctions `v_i = sum_j a_j^(i) phi~(x_j)` of the feature-space
//! covariance; the forward map projects a point onto the leading `r` of them using
//! only kernel evaluations and stored centering statistics.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec, GAMMA_MAX, GAMMA_MIN};
use crate::localopt::{self, BoundedProblem};

/// Default share of eigenvalue mass the selected components must explain.
pub const DEFAULT_ETA: f64 = 0.9;
/// Gram eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLAMP_RELATIVE: f64 = 1e-12;
/// Number of log-spaced starting widths used by [`tune_gamma`].
pub const GAMMA_GRID_SEEDS: usize = 16;

/// Relative slack when comparing cumulative eigenvalue mass against `eta`.
const SELECTION_SLACK: f64 = 1e-12;
/// Objective values closer than this count as ties in gamma tuning.
const GAMMA_TIE_TOL: f64 = 1e-12;

/// Archive points after centering and rank-based weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledData {
    points: Vec<Vec<f64>>,
    center: Vec<f64>,
    weights: Vec<f64>,
}

impl RescaledData {
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Weight given to points that were not part of the ranking.
    pub fn out_of_sample_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }

    /// `w (x - center)` with the out-of-sample weight.
    pub fn rescale_point(&self, x: &[f64]) -> Vec<f64> {
        let w = self.out_of_sample_weight();
        x.iter().zip(&self.center).map(|(v, c)| w * (v - c)).collect()
    }
}

/// Normalized weights proportional to `ln n - ln R_i`, with ranks taken on `y` in
/// increasing order and ties broken by position.
pub fn rank_weights(y: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("objective values must be finite".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let ln_n = (n as f64).ln();
    let mut weights = vec![0.0; n];
    for (rank0, &i) in order.iter().enumerate() {
        weights[i] = ln_n - ((rank0 + 1) as f64).ln();
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(weights)
}

pub fn rescale(x: &[Vec<f64>], y: &[f64]) -> Result<RescaledData> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let weights = rank_weights(y)?;
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let n = x.len() as f64;
    let mut center = vec![0.0; d];
    for p in x {
        for (c, v) in center.iter_mut().zip(p) {
            *c += v / n;
        }
    }
    let points = x
        .iter()
        .zip(&weights)
        .map(|(p, w)| p.iter().zip(&center).map(|(v, c)| w * (v - c)).collect())
        .collect();
    Ok(RescaledData {
        points,
        center,
        weights,
    })
}

/// Smallest `r` whose leading eigenvalues (sorted nonincreasing) hold at least
/// `eta` of the total mass.
pub fn select_dimension(eigenvalues: &[f64], eta: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let target = eta * total * (1.0 - SELECTION_SLACK);
    let mut cumulative = 0.0;
    for (i, &lambda) in eigenvalues.iter().enumerate() {
        cumulative += lambda;
        if cumulative >= target {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// Double centering `G - 1G/n - G1/n + 1G1/n^2`; returns the centered matrix, the
/// column means and the grand mean of `G`.
fn double_center(g: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, f64) {
    let n = g.nrows();
    let col_means: Vec<f64> = (0..n).map(|j| g.column(j).sum() / n as f64).collect();
    let total = col_means.iter().sum::<f64>() / n as f64;
    let centered = DMatrix::from_fn(n, n, |i, j| g[(i, j)] - col_means[i] - col_means[j] + total);
    (centered, col_means, total)
}

fn clamp_spectrum(mu: &mut [f64]) -> Result<()> {
    let top = mu.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::DegenerateData(
            "all kernel PCA eigenvalues vanish (rescaled points coincide)".into(),
        ));
    }
    for m in mu.iter_mut() {
        if *m < EIGEN_CLAMP_RELATIVE * top {
            *m = 0.0;
        }
    }
    Ok(())
}

fn degenerate_scale(g: &DMatrix<f64>) -> f64 {
    1e-13 * g.amax().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone)]
pub struct KpcaModel {
    rescaled: RescaledData,
    kernel: KernelSpec,
    /// Row `i` holds `a^(i)`, one row per component with a nonzero eigenvalue.
    coeffs: DMatrix<f64>,
    /// Covariance eigenvalues `lambda_i = mu_i / n`, nonincreasing, length `n`.
    eigenvalues: Vec<f64>,
    r: usize,
    gram_column_means: Vec<f64>,
    gram_total_mean: f64,
    centered_gram: DMatrix<f64>,
}

/// Kernel PCA with the RBF kernel of width `gamma`.
pub fn fit_kpca(data: &RescaledData, gamma: f64, eta: f64) -> Result<KpcaModel> {
    KpcaModel::fit(data, KernelSpec::rbf(gamma)?, eta)
}

impl KpcaModel {
    /// Kernel PCA with an arbitrary kernel (the linear kernel is used as a PCA
    /// reference and in the linear baseline's tests).
    pub fn fit(data: &RescaledData, kernel: KernelSpec, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidArgument(format!("eta must lie in (0, 1], got {eta}")));
        }
        let n = data.len();
        if n < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        let g = kernels::gram(&kernel, &data.points)?;
        let (centered, col_means, total) = double_center(&g);
        let eig = SymmetricEigen::new(centered.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut mu: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        if mu[0] <= degenerate_scale(&g) {
            return Err(Error::DegenerateData(
                "all kernel PCA eigenvalues vanish (rescaled points coincide)".into(),
            ));
        }
        clamp_spectrum(&mut mu)?;
        let positive = mu.iter().take_while(|&&m| m > 0.0).count();
        let mut coeffs = DMatrix::zeros(positive, n);
        for (row, &i) in order.iter().take(positive).enumerate() {
            let scale = 1.0 / mu[row].sqrt();
            for j in 0..n {
                coeffs[(row, j)] = eig.eigenvectors[(j, i)] * scale;
            }
        }
        let eigenvalues: Vec<f64> = mu.iter().map(|m| m / n as f64).collect();
        let cap = data.dim().saturating_sub(1).max(1);
        let r = select_dimension(&eigenvalues, eta).min(cap).min(positive);
        Ok(Self {
            rescaled: data.clone(),
            kernel,
            coeffs,
            eigenvalues,
            r,
            gram_column_means: col_means,
            gram_total_mean: total,
            centered_gram: centered,
        })
    }

    pub fn rescaled(&self) -> &RescaledData {
        &self.rescaled
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// RBF width, if the model uses the RBF kernel.
    pub fn gamma(&self) -> Option<f64> {
        match self.kernel {
            KernelSpec::Rbf { gamma } => Some(gamma),
            _ => None,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Number of components with a nonzero eigenvalue.
    pub fn components(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn centered_gram(&self) -> &DMatrix<f64> {
        &self.centered_gram
    }

    pub fn gram_column_means(&self) -> &[f64] {
        &self.gram_column_means
    }

    pub fn gram_total_mean(&self) -> f64 {
        self.gram_total_mean
    }

    /// Share of eigenvalue mass held by the selected components.
    pub fn explained_ratio(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues[..self.r].iter().sum::<f64>() / total
    }

    /// Number of components `eta` would select on this spectrum, with the same cap.
    pub fn dimension_for(&self, eta: f64) -> usize {
        let cap = self.rescaled.dim().saturating_sub(1).max(1);
        select_dimension(&self.eigenvalues, eta).min(cap).min(self.components())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.rescaled.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.rescaled.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Centered kernel vector `g_i(x) = <phi~(x), phi~(x_i)>` plus the raw kernel
    /// values.
    fn centered_kernel_vector(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k: Vec<f64> = self
            .rescaled
            .points
            .iter()
            .map(|p| self.kernel.eval_unchecked(x, p))
            .collect();
        let mean = k.iter().sum::<f64>() / k.len() as f64;
        let g = k
            .iter()
            .zip(&self.gram_column_means)
            .map(|(ki, ci)| ki - mean - ci + self.gram_total_mean)
            .collect();
        (g, k)
    }

    /// Projections of an already rescaled point onto the leading `count` components.
    pub fn project(&self, x_rescaled: &[f64], count: usize) -> Result<Vec<f64>> {
        self.check_point(x_rescaled)?;
        let (g, _) = self.centered_kernel_vector(x_rescaled);
        Ok((0..count.min(self.components()))
            .map(|row| self.coeffs.row(row).iter().zip(&g).map(|(a, gi)| a * gi).sum())
            .collect())
    }

    /// Forward map of an already rescaled point onto the selected `r` components.
    pub fn forward(&self, x_rescaled: &[f64]) -> Result<Vec<f64>> {
        self.project(x_rescaled, self.r)
    }

    /// Forward map of a domain point, rescaled with the out-of-sample weight.
    pub fn forward_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.forward(&self.rescaled.rescale_point(x))
    }

    /// Forward map of a domain point together with its Jacobian (`r x d`).
    pub fn forward_raw_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_point(x)?;
        let w = self.rescaled.out_of_sample_weight();
        let xr = self.rescaled.rescale_point(x);
        let (g, k) = self.centered_kernel_vector(&xr);
        let n = k.len();
        let d = x.len();
        // d k_i / d x, one row per training point
        let dk = DMatrix::from_fn(n, d, |i, m| {
            let p = &self.rescaled.points[i];
            match self.kernel {
                KernelSpec::Rbf { gamma } => -2.0 * gamma * w * k[i] * (xr[m] - p[m]),
                KernelSpec::Linear => w * p[m],
                KernelSpec::Matern52 { .. } => f64::NAN,
            }
        });
        if matches!(self.kernel, KernelSpec::Matern52 { .. }) {
            return Err(Error::InvalidArgument(
                "forward Jacobian is only available for rbf and linear kernels".into(),
            ));
        }
        let mut z = vec![0.0; self.r];
        let mut jac = DMatrix::zeros(self.r, d);
        for row in 0..self.r {
            let a = self.coeffs.row(row);
            let a_mean = a.sum() / n as f64;
            z[row] = a.iter().zip(&g).map(|(ai, gi)| ai * gi).sum();
            for i in 0..n {
                let b = a[i] - a_mean;
                for m in 0..d {
                    jac[(row, m)] += b * dk[(i, m)];
                }
            }
        }
        Ok((z, jac))
    }

    /// Scores of the training points on the selected components.
    pub fn training_scores(&self) -> Vec<Vec<f64>> {
        self.training_projections(self.r)
    }

    /// Scores of the training points on the leading `count` components.
    pub fn training_projections(&self, count: usize) -> Vec<Vec<f64>> {
        let count = count.min(self.components());
        let scores = &self.centered_gram * self.coeffs.rows(0, count).transpose();
        scores.row_iter().map(|row| row.iter().copied().collect()).collect()
    }

    /// `||phi(x) - mean_j phi(x_j)||` for a rescaled point.
    pub fn centered_feature_norm(&self, x_rescaled: &[f64]) -> Result<f64> {
        self.check_point(x_rescaled)?;
        let (_, k) = self.centered_kernel_vector(x_rescaled);
        let mean = k.iter().sum::<f64>() / k.len() as f64;
        let sq = self.kernel.eval_unchecked(x_rescaled, x_rescaled) - 2.0 * mean + self.gram_total_mean;
        Ok(sq.max(0.0).sqrt())
    }
}

/// Precomputed pairwise squared distances of the rescaled points, so each gamma
/// only costs an exponential and a symmetric eigenvalue solve. Values are memoized
/// because finite differences and projections onto the bounds revisit widths.
struct GammaObjective {
    sq_dists: DMatrix<f64>,
    eta: f64,
    memo: RefCell<HashMap<u64, f64>>,
}

impl GammaObjective {
    fn new(data: &RescaledData, eta: f64) -> Self {
        let n = data.len();
        let p = &data.points;
        let sq_dists = DMatrix::from_fn(n, n, |i, j| {
            p[i].iter().zip(&p[j]).map(|(a, b)| (a - b) * (a - b)).sum()
        });
        Self {
            sq_dists,
            eta,
            memo: RefCell::new(HashMap::new()),
        }
    }

    fn eval(&self, gamma: f64) -> Result<f64> {
        if let Some(&v) = self.memo.borrow().get(&gamma.to_bits()) {
            return Ok(v);
        }
        let v = self.compute(gamma)?;
        self.memo.borrow_mut().insert(gamma.to_bits(), v);
        Ok(v)
    }

    fn compute(&self, gamma: f64) -> Result<f64> {
        let g = self.sq_dists.map(|d2| (-gamma * d2).exp());
        let (centered, _, _) = double_center(&g);
        let n = centered.nrows();
        let dense = faer::MatRef::from_column_major_slice(centered.as_slice(), n, n);
        let mut mu = dense
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::DegenerateData(format!("eigenvalue solver failed: {e:?}")))?;
        mu.sort_by(|a, b| b.total_cmp(a));
        if mu[0] <= degenerate_scale(&g) {
            return Err(Error::DegenerateData(
                "all kernel PCA eigenvalues vanish (rescaled points coincide)".into(),
            ));
        }
        clamp_spectrum(&mut mu)?;
        let r = select_dimension(&mu, self.eta);
        let total: f64 = mu.iter().sum();
        Ok(r as f64 - mu[..r].iter().sum::<f64>() / total)
    }
}

/// The width-tuning cost `r(gamma) - sum_{i<=r} lambda_i / sum_i lambda_i`.
pub fn gamma_objective(data: &RescaledData, gamma: f64, eta: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    GammaObjective::new(data, eta).eval(gamma)
}

/// Log-spaced starting widths over `[GAMMA_MIN, GAMMA_MAX]`.
pub fn gamma_grid() -> Vec<f64> {
    let (lo, hi) = (GAMMA_MIN.log10(), GAMMA_MAX.log10());
    (0..GAMMA_GRID_SEEDS)
        .map(|k| {
            let t = k as f64 / (GAMMA_GRID_SEEDS - 1) as f64;
            10f64.powf(lo + t * (hi - lo)).clamp(GAMMA_MIN, GAMMA_MAX)
        })
        .collect()
}

/// Minimizes [`gamma_objective`] over `[1e-4, 2]` by refining every grid seed with
/// [`localopt::minimize`]; the lowest value wins and ties go to the smaller width.
pub fn tune_gamma(data: &RescaledData, eta: f64, max_iters: usize) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0, 1], got {eta}")));
    }
    let objective = GammaObjective::new(data, eta);
    let seeds = gamma_grid();
    // surfaces degenerate data before any optimizer runs
    objective.eval(seeds[0])?;
    let bounds = Bounds::new(vec![GAMMA_MIN], vec![GAMMA_MAX])?;
    let problem = BoundedProblem::new(
        |x: &[f64]| objective.eval(x[0]).unwrap_or(f64::INFINITY),
        bounds,
        max_iters,
    );
    let mut best: Option<(f64, f64)> = None;
    for seed in seeds {
        let Ok(res) = localopt::minimize(&problem, &[seed]) else {
            continue;
        };
        let candidate = (res.value, res.x[0]);
        best = match best {
            None => Some(candidate),
            Some((value, gamma)) => {
                let better = candidate.0 < value - GAMMA_TIE_TOL;
                let tie = (candidate.0 - value).abs() <= GAMMA_TIE_TOL && candidate.1 < gamma;
                if better || tie {
                    Some(candidate)
                } else {
                    Some((value, gamma))
                }
            }
        };
    }
    best.map(|(_, gamma)| gamma).ok_or(Error::AllStartsFailed)
}

/// Search box of BO in the reduced space.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDomain {
    pub r: usize,
    pub radius: f64,
    pub bounds: Bounds,
}

/// The smallest box covering the ball whose radius is the feature distance between
/// the rescaled upper vertex of `bounds` and the origin of the rescaled space.
pub fn reduced_domain(model: &KpcaModel, bounds: &Bounds) -> Result<ReducedDomain> {
    if model.gamma().is_none() {
        return Err(Error::InvalidArgument(
            "reduced domain is defined for rbf models only".into(),
        ));
    }
    bounds.check_dim(model.rescaled.center())?;
    let vertex = model.rescaled.rescale_point(&bounds.upper_vertex());
    let origin = vec![0.0; vertex.len()];
    let radius = kernels::feature_distance(&model.kernel, &vertex, &origin)?;
    Ok(ReducedDomain {
        r: model.r,
        radius,
        bounds: Bounds::symmetric(model.r, radius)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f64>() + rng.random_range(0.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn weights_for_three_points() {
        let w = rank_weights(&[1.0, 2.0, 3.0]).unwrap();
        let raw = [3f64.ln(), 3f64.ln() - 2f64.ln(), 0.0];
        let total: f64 = raw.iter().sum();
        for (a, b) in w.iter().zip(raw.iter()) {
            assert!((a - b / total).abs() < 1e-15);
        }
        assert!((w[0] - 0.7305).abs() < 1e-4 && (w[1] - 0.2695).abs() < 1e-4 && w[2] == 0.0);
    }

    #[test]
    fn weights_for_two_points_and_ties() {
        assert_eq!(rank_weights(&[5.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        let tied = rank_weights(&[2.0, 2.0, 1.0]).unwrap();
        assert!(tied[2] > tied[0] && tied[0] > tied[1] && tied[1] == 0.0);
        assert!(matches!(rank_weights(&[1.0]), Err(Error::TooFewPoints { .. })));
        assert!(rank_weights(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn rescale_rows_and_center() {
        let x = vec![vec![0.0, 2.0], vec![2.0, 0.0], vec![4.0, 4.0]];
        let y = vec![3.0, 1.0, 2.0];
        let data = rescale(&x, &y).unwrap();
        assert_eq!(data.center(), &[2.0, 2.0]);
        for i in 0..3 {
            for j in 0..2 {
                let expected = data.weights()[i] * (x[i][j] - 2.0);
                assert!((data.points()[i][j] - expected).abs() < 1e-15);
            }
        }
        assert_eq!(data.weights()[0], 0.0);
        assert!((data.out_of_sample_weight() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rescale_is_permutation_invariant() {
        let (x, y) = random_data(12, 3, 5);
        let a = rescale(&x, &y).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let xp: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let b = rescale(&xp, &yp).unwrap();
        let mut ra = a.points().to_vec();
        let mut rb = b.points().to_vec();
        let key = |p: &Vec<f64>| (p[0] * 1e6).round() as i64;
        ra.sort_by_key(key);
        rb.sort_by_key(key);
        for (p, q) in ra.iter().zip(&rb) {
            assert!(p.iter().zip(q).all(|(u, v)| (u - v).abs() < 1e-12));
        }
    }

    #[test]
    fn dimension_selection() {
        assert_eq!(select_dimension(&[9.0, 0.5, 0.3, 0.2], 0.9), 1);
        assert_eq!(select_dimension(&[5.0, 3.0, 1.5, 0.5], 0.9), 3);
        assert_eq!(select_dimension(&[1.0, 1.0], 1.0), 2);
    }

    #[test]
    fn two_points_single_component() {
        let x = vec![vec![1.0, -1.0, 0.5], vec![-2.0, 0.0, 3.0], vec![0.0, 0.0, 0.0]];
        let y = vec![1.0, 2.0, 3.0];
        let data = rescale(&x, &y).unwrap();
        // the worst point gets weight 0 and sits at the origin; use only the two others
        let two = RescaledData {
            points: data.points()[..2].to_vec(),
            center: data.center().to_vec(),
            weights: data.weights()[..2].to_vec(),
        };
        for gamma in [1e-3, 0.3, 2.0] {
            let m = fit_kpca(&two, gamma, 0.9).unwrap();
            assert_eq!(m.components(), 1);
            assert_eq!(m.r(), 1);
            assert!(m.eigenvalues()[1] == 0.0);
        }
    }

    #[test]
    fn identical_points_are_degenerate() {
        let data = RescaledData {
            points: vec![vec![0.3, 0.3]; 4],
            center: vec![0.0, 0.0],
            weights: vec![0.25; 4],
        };
        assert!(matches!(fit_kpca(&data, 0.5, 0.9), Err(Error::DegenerateData(_))));
        assert!(matches!(tune_gamma(&data, 0.9, 100), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn eigen_identities_hold() {
        for (seed, gamma) in [(1, 0.01), (2, 0.5), (3, 2.0)] {
            let (x, y) = random_data(30, 4, seed);
            let data = rescale(&x, &y).unwrap();
            let m = fit_kpca(&data, gamma, 0.9).unwrap();
            let gt = m.centered_gram();
            let n = 30;
            for i in 0..n {
                assert!(gt.row(i).sum().abs() < 1e-10);
                assert!(gt.column(i).sum().abs() < 1e-10);
            }
            let trace: f64 = gt.trace() / n as f64;
            assert!((m.eigenvalues().iter().sum::<f64>() - trace).abs() < 1e-8);
            // unit feature-space norm; components far below the top one amplify
            // eigenvector round-off by 1/sqrt(mu), so they are left out here
            let a = m.coefficients();
            let strong = m
                .eigenvalues()
                .iter()
                .filter(|&&l| l >= 1e-6 * m.eigenvalues()[0])
                .count();
            for i in 0..strong {
                for j in 0..strong {
                    let v = (a.row(i) * gt * a.row(j).transpose())[(0, 0)];
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expected).abs() < 1e-8, "({i},{j}) = {v}");
                }
            }
            let scores = m.training_projections(m.components());
            for c in 0..m.components() {
                let var = scores.iter().map(|s| s[c] * s[c]).sum::<f64>() / n as f64;
                assert!((var - m.eigenvalues()[c]).abs() < 1e-8);
            }
            assert!(m.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
            assert!(m.eigenvalues().iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn forward_reproduces_training_scores() {
        let (x, y) = random_data(25, 5, 9);
        let data = rescale(&x, &y).unwrap();
        let m = fit_kpca(&data, 0.8, 0.9).unwrap();
        let scores = m.training_scores();
        for (p, s) in data.points().iter().zip(&scores) {
            let f = m.forward(p).unwrap();
            assert!(f.iter().zip(s).all(|(a, b)| (a - b).abs() < 1e-10));
        }
        assert!(m.forward(&[0.0; 4]).is_err());
    }

    #[test]
    fn forward_does_not_increase_distance() {
        let (x, y) = random_data(40, 6, 10);
        let data = rescale(&x, &y).unwrap();
        let m = fit_kpca(&data, 1.5, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = m.forward(&p).unwrap();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= m.centered_feature_norm(&p).unwrap() + 1e-8);
        }
    }

    #[test]
    fn selection_is_monotone_in_eta() {
        let (x, y) = random_data(30, 8, 12);
        let m = fit_kpca(&rescale(&x, &y).unwrap(), 1.0, 0.99).unwrap();
        let mut last = usize::MAX;
        for eta in [0.99, 0.95, 0.9, 0.8, 0.5, 0.1] {
            let r = m.dimension_for(eta);
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn r_is_capped_below_dimension() {
        let (x, y) = random_data(20, 2, 4);
        let m = fit_kpca(&rescale(&x, &y).unwrap(), 2.0, 1.0).unwrap();
        assert_eq!(m.r(), 1);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (x, y) = random_data(20, 4, 17);
        let data = rescale(&x, &y).unwrap();
        let m = fit_kpca(&data, 2.0, 0.99).unwrap();
        let p = vec![0.7, -1.1, 2.0, 0.3];
        let (z, jac) = m.forward_raw_jacobian(&p).unwrap();
        assert_eq!(z, m.forward_raw(&p).unwrap());
        let h = 1e-6;
        for col in 0..4 {
            let mut up = p.clone();
            let mut down = p.clone();
            up[col] += h;
            down[col] -= h;
            let fu = m.forward_raw(&up).unwrap();
            let fd = m.forward_raw(&down).unwrap();
            for row in 0..m.r() {
                let numeric = (fu[row] - fd[row]) / (2.0 * h);
                assert!((numeric - jac[(row, col)]).abs() < 1e-7 * (1.0 + numeric.abs()));
            }
        }
    }

    #[test]
    fn tuned_gamma_beats_every_seed() {
        let (x, y) = random_data(30, 5, 6);
        let data = rescale(&x, &y).unwrap();
        let gamma = tune_gamma(&data, 0.9, 1000).unwrap();
        assert!((GAMMA_MIN..=GAMMA_MAX).contains(&gamma));
        let best = gamma_objective(&data, gamma, 0.9).unwrap();
        for seed in gamma_grid() {
            assert!(best <= gamma_objective(&data, seed, 0.9).unwrap() + 1e-12);
        }
    }

    #[test]
    fn line_data_prefers_smallest_gamma() {
        let dir = [0.6, -0.8, 0.0];
        let x: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64 - 5.5;
                dir.iter().map(|d| d * t).collect()
            })
            .collect();
        let y: Vec<f64> = (0..12).map(|i| ((i * 7) % 12) as f64).collect();
        let data = rescale(&x, &y).unwrap();
        let gamma = tune_gamma(&data, 0.9, 1000).unwrap();
        assert_eq!(gamma, GAMMA_MIN);
        let value = gamma_objective(&data, gamma, 0.9).unwrap();
        assert!(value.abs() < 1e-3, "{value}");
        assert_eq!(fit_kpca(&data, gamma, 0.9).unwrap().r(), 1);
    }

    #[test]
    fn reduced_domain_properties() {
        let (x, y) = random_data(30, 4, 8);
        let data = rescale(&x, &y).unwrap();
        let bounds = Bounds::uniform(4, -5.0, 5.0).unwrap();
        for gamma in [1e-4, 0.1, 2.0] {
            let m = fit_kpca(&data, gamma, 0.9).unwrap();
            let dom = reduced_domain(&m, &bounds).unwrap();
            assert!(dom.radius > 0.0 && dom.radius < 2f64.sqrt());
            assert_eq!(dom.bounds.dim(), m.r());
            assert!(dom.bounds.upper().iter().all(|&u| u == dom.radius));
        }
        // vertex mapping onto the center gives radius zero
        let x = vec![vec![5.0, 5.0], vec![5.0, 5.0], vec![5.0, 5.0]];
        let shifted = RescaledData {
            points: vec![vec![0.1, 0.0], vec![-0.1, 0.0], vec![0.0, 0.05]],
            center: x[0].clone(),
            weights: vec![0.5, 0.3, 0.2],
        };
        let m = fit_kpca(&shifted, 1.0, 0.9).unwrap();
        let dom = reduced_domain(&m, &Bounds::uniform(2, -5.0, 5.0).unwrap()).unwrap();
        assert_eq!(dom.radius, 0.0);
        let linear = KpcaModel::fit(&shifted, KernelSpec::Linear, 0.9).unwrap();
        assert!(reduced_domain(&linear, &Bounds::uniform(2, -5.0, 5.0).unwrap()).is_err());
    }
}
