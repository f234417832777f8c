use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[l_1, u_1] x ... x [l_d, u_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    /// Builds a box, rejecting non-finite entries and `lower > upper`.
    ///
    /// Zero-width coordinates are allowed here (a reduced domain may collapse to a
    /// point); use [`Bounds::check_nondegenerate`] where strictly positive widths are
    /// needed.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (coord, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::DegenerateBounds {
                    coord,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    /// Box `[-radius, radius]^dim`.
    pub fn symmetric(dim: usize, radius: f64) -> Result<Self> {
        Self::uniform(dim, -radius, radius)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, coord: usize) -> f64 {
        self.upper[coord] - self.lower[coord]
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        for coord in 0..self.dim() {
            if self.lower[coord] >= self.upper[coord] {
                return Err(Error::DegenerateBounds {
                    coord,
                    lower: self.lower[coord],
                    upper: self.upper[coord],
                });
            }
        }
        Ok(())
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| v >= l && v <= u)
    }

    /// Component-wise projection onto the box.
    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| v.clamp(l, u))
            .collect()
    }

    pub fn clip_in_place(&self, x: &mut [f64]) {
        for (v, (&l, &u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(l, u);
        }
    }

    /// Total amount by which `x` leaves the box, `sum_i max(0, l_i - x_i) + max(0, x_i - u_i)`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (l - v).max(0.0) + (v - u).max(0.0))
            .sum()
    }

    /// The vertex `(u_1, ..., u_d)`.
    pub fn upper_vertex(&self) -> Vec<f64> {
        self.upper.clone()
    }

    /// Largest Euclidean distance from `point` to any vertex of the box.
    pub fn max_vertex_distance(&self, point: &[f64]) -> f64 {
        point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&c, (&l, &u))| (c - l).abs().max((u - c).abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
