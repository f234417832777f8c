//! Expected improvement and its multi-restart maximization.

use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::backmap::{self, PreimageResult};
use crate::bounds::Bounds;
use crate::error::{Error, Result};
use crate::gpr::GprModel;
use crate::kpca::{KpcaModel, ReducedDomain};
use crate::localopt::{self, BoundedProblem};

pub const DEFAULT_RESTARTS: usize = 10;
/// Predictive standard deviations below this give zero improvement.
pub const SD_FLOOR: f64 = 1e-12;
/// Iteration cap of each local EI maximization.
pub const MAX_ITERS: usize = 200;

fn standard_normal() -> Normal {
    Normal::standard()
}

/// `(EI, dEI/dmean, dEI/dsd)` for a Gaussian predictive distribution.
fn ei_and_partials(mean: f64, sd: f64, y_best: f64) -> (f64, f64, f64) {
    if !(sd >= SD_FLOOR) {
        return (0.0, 0.0, 0.0);
    }
    let n = standard_normal();
    let u = (y_best - mean) / sd;
    let cdf = n.cdf(u);
    let pdf = n.pdf(u);
    let ei = (sd * (u * cdf + pdf)).max(0.0);
    (ei, -cdf, pdf)
}

/// `s (u Phi(u) + phi(u))` with `u = (y_best - mean) / s`; zero when `s < 1e-12`.
pub fn ei_from_moments(mean: f64, sd: f64, y_best: f64) -> f64 {
    ei_and_partials(mean, sd, y_best).0
}

pub fn expected_improvement(m: &GprModel, z: &[f64], y_best: f64) -> Result<f64> {
    let (mean, var) = m.predict(z)?;
    Ok(ei_from_moments(mean, var.sqrt(), y_best))
}

pub fn expected_improvement_with_gradient(m: &GprModel, z: &[f64], y_best: f64) -> Result<(f64, Vec<f64>)> {
    let p = m.predict_with_gradient(z)?;
    let sd = p.variance.sqrt();
    let (ei, d_mean, d_sd) = ei_and_partials(p.mean, sd, y_best);
    if ei == 0.0 && d_mean == 0.0 {
        return Ok((0.0, vec![0.0; z.len()]));
    }
    let grad = p
        .mean_gradient
        .iter()
        .zip(&p.variance_gradient)
        .map(|(gm, gv)| d_mean * gm + d_sd * gv / (2.0 * sd))
        .collect();
    Ok((ei, grad))
}

/// Below this standardized improvement `ln(u Phi(u) + phi(u))` is evaluated through
/// a continued fraction, since the direct form underflows.
const LOG_EI_SWITCH: f64 = -5.0;
/// Terms of the continued fraction; ample for `|u| >= 5`.
const CONTINUED_FRACTION_TERMS: usize = 40;
/// Stand-in for `-ln EI` where EI is exactly zero, so local searches still start.
const NEG_LOG_EI_CEILING: f64 = 1e300;

/// `(ln h(u), Phi(u) / h(u), phi(u) / h(u))` with `h(u) = u Phi(u) + phi(u)`.
fn log_h(u: f64) -> (f64, f64, f64) {
    if u > LOG_EI_SWITCH {
        let n = standard_normal();
        let (cdf, pdf) = (n.cdf(u), n.pdf(u));
        let h = u * cdf + pdf;
        return (h.ln(), cdf / h, pdf / h);
    }
    // with t = -u, h = phi(t) c / (t + c) where c = 1 / (t + 2 / (t + 3 / (t + ...)))
    let t = -u;
    let mut tail = t;
    for k in (2..=CONTINUED_FRACTION_TERMS).rev() {
        tail = t + k as f64 / tail;
    }
    let c = 1.0 / tail;
    let ln_pdf = -0.5 * t * t - 0.5 * (2.0 * std::f64::consts::PI).ln();
    (ln_pdf + c.ln() - (t + c).ln(), 1.0 / c, (t + c) / c)
}

/// `(ln EI, d ln EI / dmean, d ln EI / dsd)`; the log is `-inf` when `sd < 1e-12`.
fn log_ei_and_partials(mean: f64, sd: f64, y_best: f64) -> (f64, f64, f64) {
    if !(sd >= SD_FLOOR) {
        return (f64::NEG_INFINITY, 0.0, 0.0);
    }
    let u = (y_best - mean) / sd;
    let (ln_h, cdf_ratio, pdf_ratio) = log_h(u);
    (sd.ln() + ln_h, -cdf_ratio / sd, pdf_ratio / sd)
}

/// Natural log of EI, finite wherever the predictive deviation is at least 1e-12,
/// including where EI itself underflows.
pub fn log_ei_from_moments(mean: f64, sd: f64, y_best: f64) -> f64 {
    log_ei_and_partials(mean, sd, y_best).0
}

pub fn log_expected_improvement(m: &GprModel, z: &[f64], y_best: f64) -> Result<f64> {
    let (mean, var) = m.predict(z)?;
    Ok(log_ei_from_moments(mean, var.sqrt(), y_best))
}

pub fn log_expected_improvement_with_gradient(m: &GprModel, z: &[f64], y_best: f64) -> Result<(f64, Vec<f64>)> {
    let p = m.predict_with_gradient(z)?;
    let sd = p.variance.sqrt();
    let (value, d_mean, d_sd) = log_ei_and_partials(p.mean, sd, y_best);
    if value == f64::NEG_INFINITY {
        return Ok((value, vec![0.0; z.len()]));
    }
    let grad = p
        .mean_gradient
        .iter()
        .zip(&p.variance_gradient)
        .map(|(gm, gv)| d_mean * gm + d_sd * gv / (2.0 * sd))
        .collect();
    Ok((value, grad))
}

/// A local EI maximum found from one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub z: Vec<f64>,
    pub ei: f64,
    pub log_ei: f64,
    pub restart_index: usize,
}

/// Maximizes EI from `restarts` uniform starting points in `bounds`, returning one
/// candidate per restart in restart order. The local searches run on `-ln EI`,
/// which has the same maximizers but keeps useful gradients far from the incumbent.
pub fn maximize_ei<R: Rng + ?Sized>(
    m: &GprModel,
    bounds: &Bounds,
    y_best: f64,
    restarts: usize,
    rng: &mut R,
) -> Result<Vec<Candidate>> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    if bounds.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: bounds.dim(),
        });
    }
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|_| {
            bounds
                .lower()
                .iter()
                .zip(bounds.upper())
                .map(|(&l, &u)| if u > l { rng.random_range(l..=u) } else { l })
                .collect()
        })
        .collect();
    let neg_log = |v: f64| (-v).min(NEG_LOG_EI_CEILING);
    let problem = BoundedProblem::new(
        |z: &[f64]| log_expected_improvement(m, z, y_best).map_or(f64::INFINITY, neg_log),
        bounds.clone(),
        MAX_ITERS,
    )
    .with_gradient(|z: &[f64]| match log_expected_improvement_with_gradient(m, z, y_best) {
        Ok((v, g)) => (neg_log(v), g.into_iter().map(|x| -x).collect()),
        Err(_) => (f64::INFINITY, vec![0.0; z.len()]),
    });
    starts
        .iter()
        .enumerate()
        .map(|(restart_index, start)| {
            let res = localopt::minimize(&problem, start)?;
            let ei = expected_improvement(m, &res.x, y_best)?;
            Ok(Candidate {
                ei,
                log_ei: log_expected_improvement(m, &res.x, y_best)?,
                z: res.x,
                restart_index,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Point in the space where EI was maximized.
    pub z: Vec<f64>,
    /// Point to evaluate, inside the original bounds.
    pub x: Vec<f64>,
    pub ei: f64,
    /// `ln ei`, which still orders proposals whose EI underflows.
    pub log_ei: f64,
    pub restart_index: usize,
    /// False when the mapped point had to be clipped into the domain.
    pub feasible: bool,
    /// Pre-image details, present for the kernel PCA back-map.
    pub preimage: Option<PreimageResult>,
}

/// Index of the proposal to keep: feasible ones first, then the highest EI, then the
/// lowest restart index.
pub fn select_proposal(proposals: &[Proposal]) -> Option<usize> {
    let better = |a: &Proposal, b: &Proposal| {
        (a.feasible && !b.feasible)
            || (a.feasible == b.feasible
                && (a.log_ei > b.log_ei || (a.log_ei == b.log_ei && a.restart_index < b.restart_index)))
    };
    let mut best: Option<usize> = None;
    for (i, p) in proposals.iter().enumerate() {
        if best.is_none_or(|b| better(p, &proposals[b])) {
            best = Some(i);
        }
    }
    best
}

/// Maximizes EI in `search` and maps every local optimum back to the domain with
/// `back`, which returns the domain point, its feasibility and optional pre-image
/// details.
pub fn propose_with<R, B>(
    m: &GprModel,
    search: &Bounds,
    y_best: f64,
    restarts: usize,
    rng: &mut R,
    mut back: B,
) -> Result<Proposal>
where
    R: Rng + ?Sized,
    B: FnMut(&[f64], &mut R) -> Result<(Vec<f64>, bool, Option<PreimageResult>)>,
{
    let candidates = maximize_ei(m, search, y_best, restarts, rng)?;
    let mut proposals = Vec::with_capacity(candidates.len());
    for c in candidates {
        let (x, feasible, preimage) = back(&c.z, rng)?;
        proposals.push(Proposal {
            z: c.z,
            x,
            ei: c.ei,
            log_ei: c.log_ei,
            restart_index: c.restart_index,
            feasible,
            preimage,
        });
    }
    let best = select_proposal(&proposals).expect("at least one restart");
    Ok(proposals.swap_remove(best))
}

/// EI maximization in the kernel PCA reduced domain with conical pre-images.
/// `y_best` is the smallest archive value.
#[allow(clippy::too_many_arguments)]
pub fn propose<R: Rng + ?Sized>(
    m: &GprModel,
    domain: &ReducedDomain,
    model: &KpcaModel,
    archive: &[Vec<f64>],
    bounds: &Bounds,
    y_best: f64,
    restarts: usize,
    rng: &mut R,
) -> Result<Proposal> {
    propose_with(m, &domain.bounds, y_best, restarts, rng, |z, rng| {
        let pre = backmap::backward(model, z, archive, bounds, rng)?;
        Ok((pre.x.clone(), !pre.clipped, Some(pre)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_values() {
        assert!((ei_from_moments(2.0, 1.0, 2.0) - 0.398_942_280_4).abs() < 1e-9);
        assert!((ei_from_moments(1.0, 1.0, 2.0) - 1.083_315_5).abs() < 1e-6);
        assert_eq!(ei_from_moments(1.0, 0.0, 2.0), 0.0);
        assert_eq!(ei_from_moments(1.0, 1e-13, 2.0), 0.0);
    }

    #[test]
    fn nonnegative_and_increasing_in_sd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let mean = rng.random_range(-100.0..100.0);
            let sd = rng.random_range(0.0..50.0);
            let best = rng.random_range(-100.0..100.0);
            assert!(ei_from_moments(mean, sd, best) >= 0.0);
        }
        // strictly increasing once the mean is no better than the incumbent
        for mean in [0.0, 0.5, 3.0] {
            let mut last = 0.0;
            for k in 1..200 {
                let ei = ei_from_moments(mean, k as f64 * 0.05, 0.0);
                assert!(
                    ei > last || (ei == last && ei == 0.0),
                    "mean {mean} k {k}: {ei:e} after {last:e}"
                );
                last = ei;
            }
        }
        let mut last = 0.0;
        for k in 1..200 {
            let ei = ei_from_moments(-1.0, k as f64 * 0.05, 0.0);
            assert!(ei >= last);
            last = ei;
        }
    }

    fn fitted_2d() -> GprModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = z.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
        gpr::fit(&z, &y, &mut rng).unwrap()
    }

    #[test]
    fn gradient_matches_differences() {
        let m = fitted_2d();
        for q in [[0.1, 0.2], [-0.7, 0.9], [0.95, -0.3]] {
            let (ei, g) = expected_improvement_with_gradient(&m, &q, -0.5).unwrap();
            assert!((ei - expected_improvement(&m, &q, -0.5).unwrap()).abs() < 1e-12);
            for j in 0..2 {
                let h = 1e-6;
                let mut up = q;
                let mut down = q;
                up[j] += h;
                down[j] -= h;
                let numeric = (expected_improvement(&m, &up, -0.5).unwrap()
                    - expected_improvement(&m, &down, -0.5).unwrap())
                    / (2.0 * h);
                assert!((numeric - g[j]).abs() < 1e-5 * (1.0 + numeric.abs()));
            }
        }
    }

    #[test]
    fn log_ei_agrees_with_direct_evaluation() {
        // the direct form is accurate while EI stays well above underflow
        for k in 0..=400 {
            let u = -35.0 + k as f64 * 0.1;
            let direct = ei_from_moments(-u, 1.0, 0.0);
            let logged = log_ei_from_moments(-u, 1.0, 0.0);
            assert!(
                (logged - direct.ln()).abs() < 1e-9 * direct.ln().abs().max(1.0),
                "u {u}: {logged} vs {}",
                direct.ln()
            );
        }
        let at = |u: f64| log_ei_from_moments(-u, 2.0, 0.0);
        assert!((at(LOG_EI_SWITCH - 1e-12) - at(LOG_EI_SWITCH + 1e-12)).abs() < 1e-9);
        let far = log_ei_from_moments(60.0, 1.0, 0.0);
        assert_eq!(ei_from_moments(60.0, 1.0, 0.0), 0.0);
        assert!(far.is_finite() && far < -1500.0);
        assert_eq!(log_ei_from_moments(0.0, 0.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn log_ei_partials_match_differences() {
        for (mean, sd) in [(0.3, 1.0), (4.0, 0.5), (12.0, 1.5), (-1.0, 0.2), (30.0, 1.0)] {
            let (_, d_mean, d_sd) = log_ei_and_partials(mean, sd, 0.0);
            let h = 1e-6;
            let nm = (log_ei_from_moments(mean + h, sd, 0.0) - log_ei_from_moments(mean - h, sd, 0.0)) / (2.0 * h);
            let ns = (log_ei_from_moments(mean, sd + h, 0.0) - log_ei_from_moments(mean, sd - h, 0.0)) / (2.0 * h);
            assert!(
                (nm - d_mean).abs() < 1e-5 * (1.0 + nm.abs()),
                "{mean} {sd}: {nm} vs {d_mean}"
            );
            assert!(
                (ns - d_sd).abs() < 1e-5 * (1.0 + ns.abs()),
                "{mean} {sd}: {ns} vs {d_sd}"
            );
        }
        let m = fitted_2d();
        for q in [[0.1, 0.2], [-0.7, 0.9], [0.95, -0.3]] {
            let (v, g) = log_expected_improvement_with_gradient(&m, &q, -2.5).unwrap();
            let direct = log_expected_improvement(&m, &q, -2.5).unwrap();
            assert!((v - direct).abs() < 1e-9 * v.abs().max(1.0), "{v} vs {direct}");
            for j in 0..2 {
                let h = 1e-6;
                let mut up = q;
                let mut down = q;
                up[j] += h;
                down[j] -= h;
                let numeric = (log_expected_improvement(&m, &up, -2.5).unwrap()
                    - log_expected_improvement(&m, &down, -2.5).unwrap())
                    / (2.0 * h);
                assert!(
                    (numeric - g[j]).abs() < 1e-4 * (1.0 + numeric.abs()),
                    "{numeric} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn multistart_beats_dense_scan() {
        let m = fitted_2d();
        let b = Bounds::uniform(2, -1.0, 1.0).unwrap();
        let y_best = -0.6;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let found = maximize_ei(&m, &b, y_best, 10, &mut rng)
            .unwrap()
            .into_iter()
            .map(|c| c.ei)
            .fold(0.0, f64::max);
        let mut scan = 0.0f64;
        for _ in 0..10_000 {
            let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            scan = scan.max(expected_improvement(&m, &q, y_best).unwrap());
        }
        assert!(found >= 0.99 * scan, "{found} vs {scan}");
    }

    #[test]
    fn candidates_stay_in_bounds_and_are_reproducible() {
        let m = fitted_2d();
        let b = Bounds::new(vec![-0.5, 0.0], vec![0.5, 1.0]).unwrap();
        let a = maximize_ei(&m, &b, 0.0, 5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let c = maximize_ei(&m, &b, 0.0, 5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, c);
        assert!(a.iter().all(|c| b.contains(&c.z) && c.ei >= 0.0));
        assert!(maximize_ei(&m, &b, 0.0, 0, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    fn proposal(ei: f64, feasible: bool, restart_index: usize) -> Proposal {
        Proposal {
            z: vec![0.0],
            x: vec![0.0],
            ei,
            log_ei: ei.ln(),
            restart_index,
            feasible,
            preimage: None,
        }
    }

    #[test]
    fn selection_prefers_feasible() {
        let ps = [proposal(0.5, false, 0), proposal(0.3, true, 1)];
        assert_eq!(select_proposal(&ps), Some(1));
        let ps = [proposal(0.5, false, 0), proposal(0.7, false, 1)];
        assert_eq!(select_proposal(&ps), Some(1));
        let ps = [proposal(0.2, true, 0), proposal(0.2, true, 1), proposal(0.1, true, 2)];
        assert_eq!(select_proposal(&ps), Some(0));
        assert_eq!(select_proposal(&ps[..1]), Some(0));
        assert_eq!(select_proposal(&[]), None);
    }

    #[test]
    fn single_restart_returns_its_candidate() {
        let m = fitted_2d();
        let b = Bounds::uniform(2, -1.0, 1.0).unwrap();
        let p = propose_with(&m, &b, -0.5, 1, &mut ChaCha8Rng::seed_from_u64(2), |z, _| {
            Ok((z.to_vec(), true, None))
        })
        .unwrap();
        let c = maximize_ei(&m, &b, -0.5, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(p.z, c[0].z);
        assert_eq!(p.restart_index, 0);
        assert!(p.feasible);
    }
}
