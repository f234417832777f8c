//! Shifted and rotated benchmark functions on `[-5, 5]^d`.
//!
//! Every function is evaluated as `f(x) = base(R (x - x_opt)) + f_opt`, where `base`
//! has its global minimum 0 at the origin, `x_opt` is drawn uniformly from the
//! central 80% of the box, and `R` is a random orthogonal matrix. All instance data
//! is derived from `(id, dim, instance_seed)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::Bounds;
use crate::error::{Error, Result};

pub const DOMAIN_LOWER: f64 = -5.0;
pub const DOMAIN_UPPER: f64 = 5.0;
/// Fraction of the box the random optimum is drawn from.
const SHIFT_FRACTION: f64 = 0.8;

const SCHWEFEL_ARGMAX: f64 = 420.968_746_359_982_03;
const SCHWEFEL_SCALE: f64 = 100.0;
const SCHWEFEL_LIMIT: f64 = 500.0;
const WEIERSTRASS_TERMS: i32 = 12;
const KATSUURA_TERMS: i32 = 32;
const GALLAGHER_PEAKS: usize = 21;
const LUNACEK_MU0: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FunctionId {
    Rastrigin,
    Weierstrass,
    Schaffers,
    Schwefel,
    GriewankRosenbrock,
    Gallagher21,
    Katsuura,
    Lunacek,
    Sphere,
    Ellipsoid,
}

impl FunctionId {
    pub const ALL: [FunctionId; 10] = [
        FunctionId::Rastrigin,
        FunctionId::Weierstrass,
        FunctionId::Schaffers,
        FunctionId::Schwefel,
        FunctionId::GriewankRosenbrock,
        FunctionId::Gallagher21,
        FunctionId::Katsuura,
        FunctionId::Lunacek,
        FunctionId::Sphere,
        FunctionId::Ellipsoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionId::Rastrigin => "rastrigin",
            FunctionId::Weierstrass => "weierstrass",
            FunctionId::Schaffers => "schaffers",
            FunctionId::Schwefel => "schwefel",
            FunctionId::GriewankRosenbrock => "griewank-rosenbrock",
            FunctionId::Gallagher21 => "gallagher-21",
            FunctionId::Katsuura => "katsuura",
            FunctionId::Lunacek => "lunacek",
            FunctionId::Sphere => "sphere",
            FunctionId::Ellipsoid => "ellipsoid",
        }
    }

    fn code(self) -> u64 {
        FunctionId::ALL.iter().position(|&f| f == self).unwrap() as u64 + 1
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FunctionId::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFunction(s.to_string()))
    }
}

impl From<FunctionId> for String {
    fn from(id: FunctionId) -> String {
        id.name().to_string()
    }
}

impl TryFrom<String> for FunctionId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone)]
struct GallagherPeak {
    center: Vec<f64>,
    weight: f64,
    /// Diagonal of the peak's precision matrix.
    precision: Vec<f64>,
}

#[derive(Debug)]
pub struct BenchmarkFunction {
    id: FunctionId,
    dim: usize,
    instance_seed: u64,
    bounds: Bounds,
    optimum_value: f64,
    optimum_location: Vec<f64>,
    rotation: DMatrix<f64>,
    peaks: Vec<GallagherPeak>,
    evaluations: AtomicU64,
}

impl Clone for BenchmarkFunction {
    /// The clone gets a fresh evaluation counter.
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            dim: self.dim,
            instance_seed: self.instance_seed,
            bounds: self.bounds.clone(),
            optimum_value: self.optimum_value,
            optimum_location: self.optimum_location.clone(),
            rotation: self.rotation.clone(),
            peaks: self.peaks.clone(),
            evaluations: AtomicU64::new(0),
        }
    }
}

fn instance_rng(id: FunctionId, dim: usize, instance_seed: u64) -> ChaCha8Rng {
    let mixed = instance_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((dim as u64) << 20)
        .wrapping_add(id.code() << 52);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs of
/// `diag(R)` folded into `Q`.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Builds the reproducible instance `(id, dim, instance_seed)`.
pub fn make_function(id: FunctionId, dim: usize, instance_seed: u64) -> Result<BenchmarkFunction> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "benchmark dimension must be at least 2, got {dim}"
        )));
    }
    let mut rng = instance_rng(id, dim, instance_seed);
    let half = SHIFT_FRACTION * (DOMAIN_UPPER - DOMAIN_LOWER) / 2.0;
    let mid = (DOMAIN_UPPER + DOMAIN_LOWER) / 2.0;
    let shift: Vec<f64> = (0..dim).map(|_| mid + rng.random_range(-half..=half)).collect();
    let rotation = random_rotation(dim, &mut rng);
    let optimum_value = (rng.random_range(-100.0..100.0f64) * 100.0).round() / 100.0;
    let mut f = BenchmarkFunction::with_transform(id, dim, shift, rotation, optimum_value)?;
    f.instance_seed = instance_seed;
    if id == FunctionId::Gallagher21 {
        f.peaks = gallagher_peaks(dim, &mut rng);
    }
    Ok(f)
}

/// Parses `id` and builds the instance.
pub fn make_function_by_name(id: &str, dim: usize, instance_seed: u64) -> Result<BenchmarkFunction> {
    make_function(id.parse()?, dim, instance_seed)
}

fn gallagher_peaks<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<GallagherPeak> {
    let others = GALLAGHER_PEAKS - 1;
    let mut exponents: Vec<usize> = (0..others).collect();
    exponents.shuffle(rng);
    let conditioning = |alpha: f64, rng: &mut R| -> Vec<f64> {
        let mut diag: Vec<f64> = (0..dim)
            .map(|k| {
                let t = if dim > 1 { k as f64 / (dim - 1) as f64 } else { 0.0 };
                alpha.powf(0.5 * t) / alpha.powf(0.25)
            })
            .collect();
        diag.shuffle(rng);
        diag
    };
    let mut peaks = Vec::with_capacity(GALLAGHER_PEAKS);
    peaks.push(GallagherPeak {
        center: vec![0.0; dim],
        weight: 10.0,
        precision: conditioning(1000.0, rng),
    });
    for (i, &e) in exponents.iter().enumerate() {
        let alpha = 1000f64.powf(2.0 * e as f64 / (others - 1) as f64);
        peaks.push(GallagherPeak {
            center: (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect(),
            weight: 1.1 + 8.0 * i as f64 / (others - 1) as f64,
            precision: conditioning(alpha, rng),
        });
    }
    peaks
}

impl BenchmarkFunction {
    /// Instance with an explicit shift, rotation and optimum value.
    ///
    /// `gallagher-21` built this way gets peaks drawn from seed 0.
    pub fn with_transform(
        id: FunctionId,
        dim: usize,
        shift: Vec<f64>,
        rotation: DMatrix<f64>,
        optimum_value: f64,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "benchmark dimension must be at least 2, got {dim}"
            )));
        }
        if shift.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: shift.len(),
            });
        }
        if rotation.nrows() != dim || rotation.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: rotation.nrows(),
            });
        }
        let bounds = Bounds::uniform(dim, DOMAIN_LOWER, DOMAIN_UPPER)?;
        if !bounds.contains(&shift) {
            return Err(Error::InvalidArgument(
                "optimum location must lie inside the domain".into(),
            ));
        }
        let peaks = if id == FunctionId::Gallagher21 {
            gallagher_peaks(dim, &mut ChaCha8Rng::seed_from_u64(0))
        } else {
            Vec::new()
        };
        Ok(Self {
            id,
            dim,
            instance_seed: 0,
            bounds,
            optimum_value,
            optimum_location: shift,
            rotation,
            peaks,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn id(&self) -> FunctionId {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn instance_seed(&self) -> u64 {
        self.instance_seed
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn optimum_value(&self) -> f64 {
        self.optimum_value
    }

    pub fn optimum_location(&self) -> &[f64] {
        &self.optimum_location
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Number of [`evaluate`](Self::evaluate) calls so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let diff = DVector::from_iterator(self.dim, x.iter().zip(&self.optimum_location).map(|(a, b)| a - b));
        let z = &self.rotation * diff;
        Ok(self.base(z.as_slice()) + self.optimum_value)
    }

    fn base(&self, z: &[f64]) -> f64 {
        match self.id {
            FunctionId::Sphere => sphere(z),
            FunctionId::Ellipsoid => ellipsoid(z),
            FunctionId::Rastrigin => rastrigin(z),
            FunctionId::Weierstrass => weierstrass(z),
            FunctionId::Schaffers => schaffers(z),
            FunctionId::Schwefel => schwefel(z),
            FunctionId::GriewankRosenbrock => griewank_rosenbrock(z),
            FunctionId::Gallagher21 => gallagher(z, &self.peaks),
            FunctionId::Katsuura => katsuura(z),
            FunctionId::Lunacek => lunacek(z),
        }
    }
}

fn sphere(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

fn ellipsoid(z: &[f64]) -> f64 {
    let d = z.len();
    z.iter()
        .enumerate()
        .map(|(i, v)| 10f64.powf(6.0 * i as f64 / (d - 1) as f64) * v * v)
        .sum()
}

pub(crate) fn rastrigin(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    10.0 * (d - z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>()) + sphere(z)
}

fn weierstrass_term(v: f64) -> f64 {
    (0..WEIERSTRASS_TERMS)
        .map(|k| 0.5f64.powi(k) * (2.0 * PI * 3f64.powi(k) * (v + 0.5)).cos())
        .sum()
}

fn weierstrass(z: &[f64]) -> f64 {
    let floor = weierstrass_term(0.0);
    let mean = z.iter().map(|&v| weierstrass_term(v)).sum::<f64>() / z.len() as f64;
    10.0 * (mean - floor).powi(3)
}

fn schaffers(z: &[f64]) -> f64 {
    let total: f64 = z
        .windows(2)
        .map(|w| {
            let s = (w[0] * w[0] + w[1] * w[1]).sqrt();
            let root = s.sqrt();
            root + root * (50.0 * s.powf(0.2)).sin().powi(2)
        })
        .sum();
    (total / (z.len() - 1) as f64).powi(2)
}

fn schwefel_term(u: f64) -> f64 {
    let peak = SCHWEFEL_ARGMAX * SCHWEFEL_ARGMAX.sqrt().sin();
    let inner = |u: f64| peak - u * u.abs().sqrt().sin();
    if u.abs() <= SCHWEFEL_LIMIT {
        inner(u)
    } else {
        inner(u.clamp(-SCHWEFEL_LIMIT, SCHWEFEL_LIMIT)) + (u.abs() - SCHWEFEL_LIMIT).powi(2)
    }
}

fn schwefel(z: &[f64]) -> f64 {
    z.iter()
        .map(|&v| schwefel_term(SCHWEFEL_ARGMAX + SCHWEFEL_SCALE * v))
        .sum::<f64>()
        / z.len() as f64
}

fn griewank_rosenbrock(z: &[f64]) -> f64 {
    let d = z.len();
    let scale = ((d as f64).sqrt() / 8.0).max(1.0);
    let shifted: Vec<f64> = z.iter().map(|v| scale * v + 1.0).collect();
    let total: f64 = shifted
        .windows(2)
        .map(|w| {
            let s = 100.0 * (w[0] * w[0] - w[1]).powi(2) + (1.0 - w[0]).powi(2);
            s / 4000.0 - s.cos()
        })
        .sum();
    10.0 * (total / (d - 1) as f64) + 10.0
}

fn gallagher(z: &[f64], peaks: &[GallagherPeak]) -> f64 {
    let d = z.len() as f64;
    let best = peaks
        .iter()
        .map(|p| {
            let q: f64 = z
                .iter()
                .zip(&p.center)
                .zip(&p.precision)
                .map(|((v, c), w)| w * (v - c) * (v - c))
                .sum();
            p.weight * (-q / (2.0 * d)).exp()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (10.0 - best).powi(2)
}

fn katsuura(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    let exponent = 10.0 / d.powf(1.2);
    let product: f64 = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s: f64 = (1..=KATSUURA_TERMS)
                .map(|j| {
                    let p = 2f64.powi(j);
                    (p * v - (p * v).round()).abs() / p
                })
                .sum();
            (1.0 + (i + 1) as f64 * s).powf(exponent)
        })
        .product();
    10.0 / (d * d) * (product - 1.0)
}

fn lunacek(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    let s = 1.0 - 1.0 / (2.0 * (d + 20.0).sqrt() - 8.2);
    let mu1 = -((LUNACEK_MU0 * LUNACEK_MU0 - 1.0) / s).sqrt();
    let first: f64 = sphere(z);
    let second: f64 = d + s * z.iter().map(|v| (v + LUNACEK_MU0 - mu1).powi(2)).sum::<f64>();
    let ripple = 10.0 * (d - z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>());
    first.min(second) + ripple
}
