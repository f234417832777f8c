//! Latin hypercube designs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::Bounds;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub points: Vec<Vec<f64>>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Plain Latin hypercube sample of `n0` points seeded by `rng_seed`.
pub fn lhs(n0: usize, bounds: &Bounds, rng_seed: u64) -> Result<Design> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    lhs_with_rng(n0, bounds, &mut rng)
}

/// Each coordinate is split into `n0` equal strata; a random permutation assigns
/// strata to points and the value is drawn uniformly inside the stratum.
pub fn lhs_with_rng<R: Rng + ?Sized>(n0: usize, bounds: &Bounds, rng: &mut R) -> Result<Design> {
    if n0 == 0 {
        return Err(Error::InvalidArgument("design size must be positive".into()));
    }
    bounds.check_nondegenerate()?;
    let d = bounds.dim();
    let mut points = vec![vec![0.0; d]; n0];
    let mut strata: Vec<usize> = (0..n0).collect();
    for j in 0..d {
        strata.shuffle(rng);
        let (l, u) = (bounds.lower()[j], bounds.upper()[j]);
        let step = (u - l) / n0 as f64;
        for (point, &s) in points.iter_mut().zip(&strata) {
            let offset: f64 = rng.random();
            // guards the top stratum against rounding past u
            point[j] = (l + (s as f64 + offset) * step).min(u);
        }
    }
    Ok(Design { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stratum_counts(design: &Design, bounds: &Bounds, coord: usize) -> Vec<usize> {
        let n = design.len();
        let mut counts = vec![0; n];
        let (l, w) = (bounds.lower()[coord], bounds.width(coord));
        for p in &design.points {
            let s = (((p[coord] - l) / w) * n as f64).floor() as usize;
            counts[s.min(n - 1)] += 1;
        }
        counts
    }

    #[test]
    fn single_point_in_unit_square() {
        let b = Bounds::uniform(2, 0.0, 1.0).unwrap();
        let d = lhs(1, &b, 3).unwrap();
        assert_eq!(d.len(), 1);
        assert!(d.points[0].iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn four_points_one_per_quarter() {
        let b = Bounds::uniform(1, 0.0, 1.0).unwrap();
        let d = lhs(4, &b, 0).unwrap();
        let mut v: Vec<f64> = d.points.iter().map(|p| p[0]).collect();
        v.sort_by(f64::total_cmp);
        for (k, x) in v.iter().enumerate() {
            assert!(*x >= k as f64 * 0.25 && *x <= (k + 1) as f64 * 0.25, "{v:?}");
        }
    }

    #[test]
    fn sixty_by_twenty_histogram_is_all_ones() {
        let b = Bounds::uniform(20, -5.0, 5.0).unwrap();
        let d = lhs(60, &b, 7).unwrap();
        for j in 0..20 {
            assert!(stratum_counts(&d, &b, j).iter().all(|&c| c == 1));
        }
        assert!(d.points.iter().all(|p| b.contains(p)));
    }

    #[test]
    fn reproducible_per_seed() {
        let b = Bounds::new(vec![-1.0, 0.0, 10.0], vec![1.0, 3.0, 11.0]).unwrap();
        assert_eq!(lhs(9, &b, 5).unwrap(), lhs(9, &b, 5).unwrap());
        assert_ne!(lhs(9, &b, 5).unwrap(), lhs(9, &b, 6).unwrap());
    }

    #[test]
    fn errors() {
        let flat = Bounds::new(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            lhs(3, &flat, 0),
            Err(Error::DegenerateBounds { coord: 1, .. })
        ));
        let b = Bounds::uniform(2, 0.0, 1.0).unwrap();
        assert!(lhs(0, &b, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn stratification_holds(n in 1usize..40, d in 1usize..6, seed in 0u64..1000) {
            let b = Bounds::new(
                (0..d).map(|j| -(j as f64) - 1.0).collect(),
                (0..d).map(|j| 2.0 * j as f64 + 0.5).collect(),
            ).unwrap();
            let design = lhs(n, &b, seed).unwrap();
            for j in 0..d {
                proptest::prop_assert!(stratum_counts(&design, &b, j).iter().all(|&c| c == 1));
            }
        }
    }
}
