//! Linear PCA on rank-weighted points, used by the `pca-bo` baseline.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::kpca::{select_dimension, RescaledData, EIGEN_CLAMP_RELATIVE};

#[derive(Debug, Clone)]
pub struct PcaModel {
    center: Vec<f64>,
    /// Columns are the principal directions, nonincreasing eigenvalue order.
    directions: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    rescaled_mean: Vec<f64>,
    r: usize,
}

/// PCA of the rescaled points with a `1/n` covariance. The maps act on raw domain
/// points relative to the archive center.
pub fn fit_pca(data: &RescaledData, eta: f64) -> Result<PcaModel> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("eta must lie in (0, 1], got {eta}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let d = data.dim();
    let x = DMatrix::from_fn(n, d, |i, j| data.points()[i][j]);
    let mean = x.row_mean();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let top = eigenvalues[0];
    if !(top > 0.0) {
        return Err(Error::DegenerateData("rescaled points coincide".into()));
    }
    for l in eigenvalues.iter_mut() {
        if *l < EIGEN_CLAMP_RELATIVE * top {
            *l = 0.0;
        }
    }
    let directions = DMatrix::from_fn(d, d, |i, c| eig.eigenvectors[(i, order[c])]);
    let positive = eigenvalues.iter().filter(|&&l| l > 0.0).count();
    let r = select_dimension(&eigenvalues, eta)
        .min(d.saturating_sub(1).max(1))
        .min(positive);
    Ok(PcaModel {
        center: data.center().to_vec(),
        directions,
        eigenvalues,
        rescaled_mean: mean.iter().copied().collect(),
        r,
    })
}

impl PcaModel {
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn explained_ratio(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues[..self.r].iter().sum::<f64>() / total
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// The leading `r` directions as columns.
    pub fn basis(&self) -> DMatrix<f64> {
        self.directions.columns(0, self.r).into_owned()
    }

    fn check(&self, len: usize, expected: usize) -> Result<()> {
        if len != expected {
            return Err(Error::DimensionMismatch { expected, got: len });
        }
        Ok(())
    }

    /// `U_r^T (x - center)`
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len(), self.center.len())?;
        let diff = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, c)| a - c));
        Ok((self.basis().transpose() * diff).iter().copied().collect())
    }

    /// `center + U_r z`, not clipped.
    pub fn backward_unclipped(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len(), self.r)?;
        let v = self.basis() * DVector::from_column_slice(z);
        Ok(v.iter().zip(&self.center).map(|(a, c)| a + c).collect())
    }

    /// `center + U_r z` clipped to `bounds`, plus whether clipping changed it.
    pub fn backward(&self, z: &[f64], bounds: &Bounds) -> Result<(Vec<f64>, bool)> {
        let raw = self.backward_unclipped(z)?;
        bounds.check_dim(&raw)?;
        let clipped = !bounds.contains(&raw);
        Ok((bounds.clip(&raw), clipped))
    }

    /// Scores of the centered rescaled points on all `d` directions.
    pub fn rescaled_scores(&self, data: &RescaledData) -> Vec<Vec<f64>> {
        data.points()
            .iter()
            .map(|p| {
                let c = DVector::from_iterator(p.len(), p.iter().zip(&self.rescaled_mean).map(|(a, m)| a - m));
                (self.directions.transpose() * c).iter().copied().collect()
            })
            .collect()
    }

    /// Search box `[-R, R]^r`, where `R` is the distance from the archive center to
    /// the farthest vertex of `bounds`; every point of `bounds` projects inside it.
    pub fn reduced_bounds(&self, bounds: &Bounds) -> Result<Bounds> {
        bounds.check_dim(&self.center)?;
        Bounds::symmetric(self.r, bounds.max_vertex_distance(&self.center))
    }
}
