//! Campaign grids, parallel execution and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use kpcabo_core::acquisition::DEFAULT_RESTARTS;
use kpcabo_core::drivers::run;
use kpcabo_core::kpca::DEFAULT_ETA;
use kpcabo_core::testbed::{make_function, FunctionId};
use kpcabo_core::{Algorithm, RunConfig, RunRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::runfile::{read_run, sidecar_path, write_run};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A campaign grid. Run seeds `0..seeds` are spread over the instances in turn, so
/// the default of 10 seeds on 5 instances gives two runs per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_functions")]
    pub functions: Vec<FunctionId>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    /// Fixed budget. When absent the budget is `budget_per_dim * dim`.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default = "default_budget_per_dim")]
    pub budget_per_dim: usize,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default = "default_instances")]
    pub instances: Vec<u64>,
    /// Design size. When absent it is `3 dim`.
    #[serde(default)]
    pub doe_size: Option<usize>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn all_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn default_functions() -> Vec<FunctionId> {
    vec![
        FunctionId::Rastrigin,
        FunctionId::Weierstrass,
        FunctionId::Schaffers,
        FunctionId::Gallagher21,
        FunctionId::Lunacek,
    ]
}

fn default_dims() -> Vec<usize> {
    vec![10, 20]
}

fn default_budget_per_dim() -> usize {
    5
}

fn default_seeds() -> u64 {
    10
}

fn default_instances() -> Vec<u64> {
    (0..5).collect()
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

impl Default for CampaignSpec {
    /// The desk-scale campaign.
    fn default() -> Self {
        CampaignSpec {
            algorithms: all_algorithms(),
            functions: default_functions(),
            dims: default_dims(),
            budget: None,
            budget_per_dim: default_budget_per_dim(),
            seeds: default_seeds(),
            instances: default_instances(),
            doe_size: None,
            eta: default_eta(),
            restarts: default_restarts(),
            parallelism: None,
            output_dir: None,
        }
    }
}

impl CampaignSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Every configuration of the grid, validated.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        if self.instances.is_empty() {
            return Err(Error::InvalidCampaign("no instances".into()));
        }
        let mut grid = Vec::new();
        for &dim in &self.dims {
            let budget = self.budget.unwrap_or(self.budget_per_dim * dim);
            for &function_id in &self.functions {
                for &algorithm in &self.algorithms {
                    for seed in 0..self.seeds {
                        let instance = self.instances[(seed % self.instances.len() as u64) as usize];
                        let mut config = RunConfig::new(algorithm, function_id, dim, instance, seed, budget);
                        if let Some(n) = self.doe_size {
                            config.doe_size = n;
                        }
                        config.eta = self.eta;
                        config.restarts = self.restarts;
                        config.validate()?;
                        grid.push(config);
                    }
                }
            }
        }
        if grid.is_empty() {
            return Err(Error::InvalidCampaign("the grid is empty".into()));
        }
        Ok(grid)
    }
}

/// Hex SHA-256 of the configuration, ignoring the output directory.
pub fn config_hash(config: &RunConfig) -> String {
    let mut config = config.clone();
    config.output_dir = None;
    let json = serde_json::to_string(&config).expect("configurations serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// File name of a run's CSV.
pub fn run_file_name(config: &RunConfig) -> String {
    format!(
        "{}_{}_d{}_i{}_s{}_{}.csv",
        config.algorithm,
        config.function_id,
        config.dim,
        config.instance_seed,
        config.run_seed,
        &config_hash(config)[..16]
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub hash: String,
    pub status: RunStatus,
    pub csv: Option<PathBuf>,
    /// Present unless the run failed before producing a trace.
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hash: String,
    pub config: RunConfig,
    pub status: RunStatus,
    pub files: Vec<FileEntry>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[derive(Debug)]
pub struct CampaignReport {
    pub outcomes: Vec<RunOutcome>,
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

impl CampaignReport {
    /// Traces of all runs that produced one, in grid order.
    pub fn records(&self) -> Vec<&RunRecord> {
        self.outcomes.iter().filter_map(|o| o.record.as_ref()).collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.outcomes.iter().filter(|o| o.status == RunStatus::Failed)
    }
}

fn existing_complete(path: &Path) -> Option<RunRecord> {
    if !sidecar_path(path).exists() {
        return None;
    }
    read_run(path).ok().filter(RunRecord::is_complete)
}

fn execute(config: &RunConfig, dir: &Path) -> RunOutcome {
    let hash = config_hash(config);
    let csv = dir.join(run_file_name(config));
    let outcome = |status, record, error| RunOutcome {
        config: config.clone(),
        hash: hash.clone(),
        status,
        csv: Some(csv.clone()),
        record,
        error,
    };
    if let Some(record) = existing_complete(&csv) {
        return outcome(RunStatus::Skipped, Some(record), None);
    }
    let record = match make_function(config.function_id, config.dim, config.instance_seed).and_then(|f| run(&f, config))
    {
        Ok(record) => record,
        Err(e) => {
            return RunOutcome {
                csv: None,
                ..outcome(RunStatus::Failed, None, Some(e.to_string()))
            };
        }
    };
    if let Err(e) = write_run(&csv, &record) {
        return RunOutcome {
            csv: None,
            ..outcome(RunStatus::Failed, Some(record), Some(e.to_string()))
        };
    }
    match record.error.clone() {
        Some(message) => outcome(RunStatus::Failed, Some(record), Some(message)),
        None => outcome(RunStatus::Completed, Some(record), None),
    }
}

fn manifest_entry(outcome: &RunOutcome, dir: &Path) -> ManifestEntry {
    let mut files = Vec::new();
    let mut error = outcome.error.clone();
    if let Some(csv) = &outcome.csv {
        for path in [csv.clone(), sidecar_path(csv)] {
            match file_hash(&path) {
                Ok(sha256) => files.push(FileEntry {
                    path: path.strip_prefix(dir).unwrap_or(&path).display().to_string(),
                    sha256,
                }),
                Err(e) => error = Some(e.to_string()),
            }
        }
    }
    ManifestEntry {
        hash: outcome.hash.clone(),
        config: outcome.config.clone(),
        status: outcome.status,
        files,
        error,
    }
}

/// Runs every configuration, at most `parallelism` at a time, writing one CSV per
/// run into `dir` and a manifest at the end. Runs whose complete output already
/// exists are loaded instead of recomputed. Failed runs are reported, not fatal.
pub fn run_campaign(grid: &[RunConfig], parallelism: usize, dir: &Path) -> Result<CampaignReport> {
    if parallelism == 0 {
        return Err(Error::InvalidCampaign("parallelism must be at least 1".into()));
    }
    for config in grid {
        config.validate()?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidCampaign(e.to_string()))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| grid.par_iter().map(|c| execute(c, dir)).collect());
    let runs: Vec<ManifestEntry> = outcomes.iter().map(|o| manifest_entry(o, dir)).collect();
    let count = |s| runs.iter().filter(|r| r.status == s).count();
    let manifest = Manifest {
        completed: count(RunStatus::Completed),
        skipped: count(RunStatus::Skipped),
        failed: count(RunStatus::Failed),
        runs,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(CampaignReport {
        outcomes,
        manifest,
        manifest_path,
    })
}
