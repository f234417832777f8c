//! Optimization loops: kernel PCA BO, linear PCA BO and plain BO.
//!
//! All three share the Latin hypercube design (drawn from a stream that depends on
//! the run seed only, so runs with equal seeds start from the same design), the
//! Matérn GPR surrogate and the EI restarts.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{self, Proposal};
use crate::bounds::Bounds;
use crate::doe;
use crate::error::{Error, Result};
use crate::gpr;
use crate::kpca::{self, RescaledData};
use crate::pca;
use crate::record::{Algorithm, IterationRow, RunConfig, RunRecord};
use crate::testbed::BenchmarkFunction;

/// Iteration budget of gamma tuning per domain dimension.
pub const GAMMA_TUNING_ITERS_PER_DIM: usize = 200;
/// Share of the archive whose values trigger a gamma re-tune.
pub const RETUNE_QUANTILE: f64 = 0.2;

const DESIGN_STREAM: u64 = 0x5851_f42d_4c95_7f2d;
const LOOP_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Evaluated points and values, append-only.
#[derive(Debug, Clone)]
pub struct Archive {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub bounds: Bounds,
    pub n0: usize,
}

impl Archive {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn best(&self) -> f64 {
        self.y.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// The `ceil(q n)`-th smallest value of `y` (order statistic, no interpolation).
pub fn order_statistic_quantile(y: &[f64], q: f64) -> f64 {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((q * y.len() as f64).ceil() as usize).clamp(1, y.len());
    sorted[k - 1]
}

/// Whether gamma is re-tuned before the next model fit: always on the first
/// iteration, afterwards when the latest value is within the best 20% of `y`.
pub fn retune_due(first_iteration: bool, y: &[f64]) -> bool {
    if first_iteration {
        return true;
    }
    match y.last() {
        Some(&latest) => latest <= order_statistic_quantile(y, RETUNE_QUANTILE),
        None => true,
    }
}

/// Seed of the design stream for a run seed; shared by all algorithms.
pub fn design_seed(run_seed: u64) -> u64 {
    run_seed ^ DESIGN_STREAM
}

/// Model-side details of a proposal, logged with the evaluation.
#[derive(Debug, Clone, Default)]
struct ModelInfo {
    fit_seconds: f64,
    acq_seconds: f64,
    r: Option<usize>,
    gamma: Option<f64>,
    ei: Option<f64>,
    feasible: Option<bool>,
    residual: Option<f64>,
    clipped: Option<bool>,
    radius: Option<f64>,
    explained_ratio: Option<f64>,
}

struct Runner<'a> {
    f: &'a BenchmarkFunction,
    config: RunConfig,
    archive: Archive,
    rows: Vec<IterationRow>,
    rng: ChaCha8Rng,
    started: Instant,
    evaluations_before: u64,
}

impl<'a> Runner<'a> {
    fn start(f: &'a BenchmarkFunction, budget: usize, config: &RunConfig, algorithm: Algorithm) -> Result<Self> {
        let mut config = config.clone();
        config.budget = budget;
        config.algorithm = algorithm;
        config.validate()?;
        if f.dim() != config.dim {
            return Err(Error::DimensionMismatch {
                expected: config.dim,
                got: f.dim(),
            });
        }
        let bounds = f.bounds().clone();
        let mut runner = Self {
            f,
            archive: Archive {
                x: Vec::with_capacity(budget),
                y: Vec::with_capacity(budget),
                bounds: bounds.clone(),
                n0: config.doe_size,
            },
            rows: Vec::with_capacity(budget),
            rng: ChaCha8Rng::seed_from_u64(config.run_seed.wrapping_add(LOOP_STREAM)),
            started: Instant::now(),
            evaluations_before: f.evaluations(),
            config,
        };
        let design = doe::lhs(runner.config.doe_size, &bounds, design_seed(runner.config.run_seed))?;
        for x in design.points {
            runner.evaluate(x, ModelInfo::default())?;
        }
        Ok(runner)
    }

    fn done(&self) -> bool {
        self.archive.len() >= self.config.budget
    }

    fn evaluate(&mut self, x: Vec<f64>, info: ModelInfo) -> Result<()> {
        let y = self.f.evaluate(&x)?;
        let best = self.archive.best().min(y);
        self.archive.x.push(x);
        self.archive.y.push(y);
        self.rows.push(IterationRow {
            eval_count: self.archive.len(),
            y,
            best_so_far: best,
            target_gap: best - self.f.optimum_value(),
            fit_seconds: info.fit_seconds,
            acq_seconds: info.acq_seconds,
            r: info.r,
            gamma: info.gamma,
            ei: info.ei,
            feasible: info.feasible,
            residual: info.residual,
            clipped: info.clipped,
            radius: info.radius,
            explained_ratio: info.explained_ratio,
        });
        Ok(())
    }

    fn finish(self, error: Option<Error>) -> RunRecord {
        RunRecord {
            final_best: self.archive.best(),
            total_seconds: self.started.elapsed().as_secs_f64(),
            evaluations: self.f.evaluations() - self.evaluations_before,
            error: error.map(|e| e.to_string()),
            iterations: self.rows,
            points: self.archive.x,
            config: self.config,
        }
    }
}

fn proposal_info(p: &Proposal, fit_seconds: f64, acq_seconds: f64, r: Option<usize>) -> ModelInfo {
    ModelInfo {
        fit_seconds,
        acq_seconds,
        r,
        gamma: None,
        ei: Some(p.ei),
        feasible: Some(p.feasible),
        residual: p.preimage.as_ref().map(|pre| pre.residual),
        clipped: Some(!p.feasible),
        radius: None,
        explained_ratio: None,
    }
}

/// Runs the configured algorithm.
pub fn run(f: &BenchmarkFunction, config: &RunConfig) -> Result<RunRecord> {
    match config.algorithm {
        Algorithm::Bo => run_vanilla_bo(f, config.budget, config),
        Algorithm::PcaBo => run_pca_bo(f, config.budget, config),
        Algorithm::KpcaBo => run_kpca_bo(f, config.budget, config),
    }
}

/// Kernel PCA-assisted BO. Invalid configurations are errors; failures inside the
/// loop end the run early and are reported in [`RunRecord::error`].
pub fn run_kpca_bo(f: &BenchmarkFunction, budget: usize, config: &RunConfig) -> Result<RunRecord> {
    let mut runner = Runner::start(f, budget, config, Algorithm::KpcaBo)?;
    let mut cache: Option<(RescaledData, f64)> = None;
    let mut first = true;
    while !runner.done() {
        match kpca_step(&mut runner, &mut cache, first) {
            Ok((x, info)) => runner.evaluate(x, info)?,
            Err(e) => return Ok(runner.finish(Some(e))),
        }
        first = false;
    }
    Ok(runner.finish(None))
}

fn kpca_step(
    runner: &mut Runner<'_>,
    cache: &mut Option<(RescaledData, f64)>,
    first: bool,
) -> Result<(Vec<f64>, ModelInfo)> {
    let d = runner.config.dim;
    let eta = runner.config.eta;
    let fit_start = Instant::now();
    if retune_due(first, &runner.archive.y) {
        let data = kpca::rescale(&runner.archive.x, &runner.archive.y)?;
        let gamma = kpca::tune_gamma(&data, eta, GAMMA_TUNING_ITERS_PER_DIM * d)?;
        *cache = Some((data, gamma));
    }
    let (data, gamma) = cache.as_ref().expect("cache filled on the first iteration");
    let model = kpca::fit_kpca(data, *gamma, eta)?;
    // the GP sees every archive point through the same map the back-map inverts
    let scores = runner
        .archive
        .x
        .iter()
        .map(|x| model.forward_raw(x))
        .collect::<Result<Vec<_>>>()?;
    let domain = kpca::reduced_domain(&model, &runner.archive.bounds)?;
    let gp = gpr::fit(&scores, &runner.archive.y, &mut runner.rng)?;
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let acq_start = Instant::now();
    let proposal = acquisition::propose(
        &gp,
        &domain,
        &model,
        &runner.archive.x,
        &runner.archive.bounds,
        runner.archive.best(),
        runner.config.restarts,
        &mut runner.rng,
    )?;
    let acq_seconds = acq_start.elapsed().as_secs_f64();
    let mut info = proposal_info(&proposal, fit_seconds, acq_seconds, Some(model.r()));
    info.gamma = Some(*gamma);
    info.radius = Some(domain.radius);
    info.explained_ratio = Some(model.explained_ratio());
    Ok((proposal.x, info))
}

/// BO in a linear PCA subspace of the rank-weighted archive, with affine
/// reconstruction and clipping as the back-map.
pub fn run_pca_bo(f: &BenchmarkFunction, budget: usize, config: &RunConfig) -> Result<RunRecord> {
    let mut runner = Runner::start(f, budget, config, Algorithm::PcaBo)?;
    while !runner.done() {
        match pca_step(&mut runner) {
            Ok((x, info)) => runner.evaluate(x, info)?,
            Err(e) => return Ok(runner.finish(Some(e))),
        }
    }
    Ok(runner.finish(None))
}

fn pca_step(runner: &mut Runner<'_>) -> Result<(Vec<f64>, ModelInfo)> {
    let fit_start = Instant::now();
    let data = kpca::rescale(&runner.archive.x, &runner.archive.y)?;
    let model = pca::fit_pca(&data, runner.config.eta)?;
    let scores = runner
        .archive
        .x
        .iter()
        .map(|x| model.forward(x))
        .collect::<Result<Vec<_>>>()?;
    let search = model.reduced_bounds(&runner.archive.bounds)?;
    let gp = gpr::fit(&scores, &runner.archive.y, &mut runner.rng)?;
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let acq_start = Instant::now();
    let bounds = runner.archive.bounds.clone();
    let proposal = acquisition::propose_with(
        &gp,
        &search,
        runner.archive.best(),
        runner.config.restarts,
        &mut runner.rng,
        |z, _| {
            let (x, clipped) = model.backward(z, &bounds)?;
            Ok((x, !clipped, None))
        },
    )?;
    let acq_seconds = acq_start.elapsed().as_secs_f64();
    let mut info = proposal_info(&proposal, fit_seconds, acq_seconds, Some(model.r()));
    info.radius = Some(search.upper()[0]);
    info.explained_ratio = Some(model.explained_ratio());
    Ok((proposal.x.clone(), info))
}

/// GPR and EI directly in the full domain.
pub fn run_vanilla_bo(f: &BenchmarkFunction, budget: usize, config: &RunConfig) -> Result<RunRecord> {
    let mut runner = Runner::start(f, budget, config, Algorithm::Bo)?;
    while !runner.done() {
        match vanilla_step(&mut runner) {
            Ok((x, info)) => runner.evaluate(x, info)?,
            Err(e) => return Ok(runner.finish(Some(e))),
        }
    }
    Ok(runner.finish(None))
}

fn vanilla_step(runner: &mut Runner<'_>) -> Result<(Vec<f64>, ModelInfo)> {
    let fit_start = Instant::now();
    let gp = gpr::fit(&runner.archive.x, &runner.archive.y, &mut runner.rng)?;
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let acq_start = Instant::now();
    let bounds = runner.archive.bounds.clone();
    let proposal = acquisition::propose_with(
        &gp,
        &bounds,
        runner.archive.best(),
        runner.config.restarts,
        &mut runner.rng,
        |z, _| Ok((z.to_vec(), true, None)),
    )?;
    let acq_seconds = acq_start.elapsed().as_secs_f64();
    let mut info = proposal_info(&proposal, fit_seconds, acq_seconds, None);
    info.clipped = None;
    Ok((proposal.x.clone(), info))
}
