//! Pre-images of reduced-space points under the kernel PCA forward map.
//!
//! The search is restricted to the cone spanned by `d` archive points sampled
//! without replacement: `x(w) = sum_i w_i p_i` with `w in [0, 10]^d`. The
//! objective is the squared distance in the reduced space plus the penalty
//! `exp(sum of box violations)`, which equals 1 inside the domain.

use rand::seq::index;
use rand::Rng;

use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::kpca::KpcaModel;
use crate::localopt::{self, BoundedProblem};

/// Upper limit of each cone weight.
pub const WEIGHT_MAX: f64 = 10.0;
/// Iteration budget of the weight search per domain dimension.
pub const ITERS_PER_DIM: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PreimageResult {
    /// Pre-image clipped to the domain.
    pub x: Vec<f64>,
    /// Optimal cone weights.
    pub weights: Vec<f64>,
    /// `||z - F(x(w))||^2` at the unclipped combination.
    pub residual: f64,
    /// True when the unclipped combination lies outside the domain.
    pub clipped: bool,
    /// Archive rows spanning the cone.
    pub basis_indices: Vec<usize>,
}

fn combine(basis: &[&[f64]], w: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; basis[0].len()];
    for (p, wi) in basis.iter().zip(w) {
        for (xm, pm) in x.iter_mut().zip(p.iter()) {
            *xm += wi * pm;
        }
    }
    x
}

fn squared_residual(z: &[f64], fx: &[f64]) -> f64 {
    z.iter().zip(fx).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn cone_value(model: &KpcaModel, z: &[f64], basis: &[&[f64]], bounds: &Bounds, w: &[f64]) -> f64 {
    let x = combine(basis, w);
    match model.forward_raw(&x) {
        Ok(fx) => squared_residual(z, &fx) + bounds.violation(&x).exp(),
        Err(_) => f64::INFINITY,
    }
}

fn cone_value_and_gradient(
    model: &KpcaModel,
    z: &[f64],
    basis: &[&[f64]],
    bounds: &Bounds,
    w: &[f64],
) -> (f64, Vec<f64>) {
    let x = combine(basis, w);
    let Ok((fx, jac)) = model.forward_raw_jacobian(&x) else {
        return (f64::INFINITY, vec![0.0; w.len()]);
    };
    let penalty = bounds.violation(&x).exp();
    // gradient with respect to x, then chained through x(w)
    let mut gx = vec![0.0; x.len()];
    for (row, (zj, fj)) in z.iter().zip(&fx).enumerate() {
        let coef = -2.0 * (zj - fj);
        for (m, g) in gx.iter_mut().enumerate() {
            *g += coef * jac[(row, m)];
        }
    }
    for (m, g) in gx.iter_mut().enumerate() {
        if x[m] < bounds.lower()[m] {
            *g -= penalty;
        } else if x[m] > bounds.upper()[m] {
            *g += penalty;
        }
    }
    let gw = basis
        .iter()
        .map(|p| p.iter().zip(&gx).map(|(a, b)| a * b).sum())
        .collect();
    (squared_residual(z, &fx) + penalty, gw)
}

pub fn backward<R: Rng + ?Sized>(
    model: &KpcaModel,
    z: &[f64],
    archive: &[Vec<f64>],
    bounds: &Bounds,
    rng: &mut R,
) -> Result<PreimageResult> {
    let d = bounds.dim();
    if z.len() != model.r() {
        return Err(Error::DimensionMismatch {
            expected: model.r(),
            got: z.len(),
        });
    }
    if archive.len() < d {
        return Err(Error::TooFewPoints {
            needed: d,
            got: archive.len(),
        });
    }
    for p in archive {
        bounds.check_dim(p)?;
    }
    let basis_indices = index::sample(rng, archive.len(), d).into_vec();
    let basis: Vec<&[f64]> = basis_indices.iter().map(|&i| archive[i].as_slice()).collect();

    let value = |w: &[f64]| cone_value(model, z, &basis, bounds, w);
    let value_and_gradient = |w: &[f64]| cone_value_and_gradient(model, z, &basis, bounds, w);
    let weight_box = Bounds::uniform(d, 0.0, WEIGHT_MAX)?;
    let problem = BoundedProblem::new(value, weight_box, ITERS_PER_DIM * d).with_gradient(value_and_gradient);
    let opt = localopt::minimize(&problem, &vec![0.0; d])?;

    let raw = combine(&basis, &opt.x);
    let residual = squared_residual(z, &model.forward_raw(&raw)?);
    let clipped = !bounds.contains(&raw);
    Ok(PreimageResult {
        x: bounds.clip(&raw),
        weights: opt.x,
        residual,
        clipped,
        basis_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kpca::{fit_kpca, rescale};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn archive(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let y = x.iter().map(|p| p.iter().map(|v| (v - 1.0).powi(2)).sum()).collect();
        (x, y)
    }

    #[test]
    fn needs_d_archive_points() {
        let (x, y) = archive(6, 3, 1);
        let m = fit_kpca(&rescale(&x, &y).unwrap(), 0.5, 0.9).unwrap();
        let b = Bounds::uniform(3, -5.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = vec![0.0; m.r()];
        let err = backward(&m, &z, &x[..2], &b, &mut rng).unwrap_err();
        assert_eq!(err, Error::TooFewPoints { needed: 3, got: 2 });
        assert!(backward(&m, &[0.0; 7], &x, &b, &mut rng).is_err());
    }

    #[test]
    fn result_is_inside_and_flag_matches() {
        let (x, y) = archive(20, 4, 2);
        let m = fit_kpca(&rescale(&x, &y).unwrap(), 0.3, 0.9).unwrap();
        let b = Bounds::uniform(4, -5.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let z: Vec<f64> = (0..m.r()).map(|_| rng.random_range(-0.5..0.5)).collect();
            let res = backward(&m, &z, &x, &b, &mut rng).unwrap();
            assert!(b.contains(&res.x), "trial {trial}");
            let raw = combine(
                &res.basis_indices.iter().map(|&i| x[i].as_slice()).collect::<Vec<_>>(),
                &res.weights,
            );
            assert_eq!(res.clipped, !b.contains(&raw));
            assert!(res.weights.iter().all(|&w| (0.0..=WEIGHT_MAX).contains(&w)));
            let mut idx = res.basis_indices.clone();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 4);
        }
    }

    #[test]
    fn recovers_image_of_a_cone_point() {
        let (x, y) = archive(15, 3, 3);
        let m = fit_kpca(&rescale(&x, &y).unwrap(), 0.2, 0.9).unwrap();
        let b = Bounds::uniform(3, -5.0, 5.0).unwrap();
        // replay the basis draw so the target lies inside the sampled cone
        let picked = index::sample(&mut ChaCha8Rng::seed_from_u64(11), 15, 3).into_vec();
        let basis: Vec<&[f64]> = picked.iter().map(|&i| x[i].as_slice()).collect();
        let target = combine(&basis, &[0.3, 0.5, 0.2]);
        let z = m.forward_raw(&target).unwrap();
        let res = backward(&m, &z, &x, &b, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(picked, res.basis_indices);
        assert!(res.residual < 1e-8, "{}", res.residual);
    }

    #[test]
    fn analytic_gradient_agrees_with_differences() {
        let (x, y) = archive(12, 3, 4);
        let m = fit_kpca(&rescale(&x, &y).unwrap(), 1.0, 0.99).unwrap();
        // a tight box so the penalty term is active
        let b = Bounds::uniform(3, -1.0, 1.0).unwrap();
        let basis: Vec<&[f64]> = x[..3].iter().map(|p| p.as_slice()).collect();
        let z = vec![0.1; m.r()];
        for w in [[0.4, 0.7, 0.2], [0.01, 0.02, 0.03], [2.0, 0.0, 1.5]] {
            let (v, g) = cone_value_and_gradient(&m, &z, &basis, &b, &w);
            assert_eq!(v, cone_value(&m, &z, &basis, &b, &w));
            let h = 1e-6;
            for k in 0..3 {
                let mut up = w;
                let mut down = w;
                up[k] += h;
                down[k] -= h;
                let numeric = (cone_value(&m, &z, &basis, &b, &up) - cone_value(&m, &z, &basis, &b, &down)) / (2.0 * h);
                assert!(
                    (numeric - g[k]).abs() < 1e-5 * (1.0 + numeric.abs()),
                    "{numeric} vs {}",
                    g[k]
                );
            }
        }
    }
}
