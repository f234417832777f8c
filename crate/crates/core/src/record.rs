//! Run configuration and per-iteration logs.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::DEFAULT_RESTARTS;
use crate::error::{Error, Result};
use crate::kpca::DEFAULT_ETA;
use crate::testbed::FunctionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Bo,
    PcaBo,
    KpcaBo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Bo, Algorithm::PcaBo, Algorithm::KpcaBo];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bo => "bo",
            Algorithm::PcaBo => "pca-bo",
            Algorithm::KpcaBo => "kpca-bo",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAlgorithm(s.to_string()))
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> Self {
        a.name().to_string()
    }
}

impl TryFrom<String> for Algorithm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub function_id: FunctionId,
    pub dim: usize,
    pub instance_seed: u64,
    pub run_seed: u64,
    pub budget: usize,
    pub doe_size: usize,
    pub eta: f64,
    pub restarts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Configuration with the default design size `3 dim`, `eta = 0.9` and ten EI
    /// restarts.
    pub fn new(
        algorithm: Algorithm,
        function_id: FunctionId,
        dim: usize,
        instance_seed: u64,
        run_seed: u64,
        budget: usize,
    ) -> Self {
        Self {
            algorithm,
            function_id,
            dim,
            instance_seed,
            run_seed,
            budget,
            doe_size: 3 * dim,
            eta: DEFAULT_ETA,
            restarts: DEFAULT_RESTARTS,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "dim must be at least 2, got {}",
                self.dim
            )));
        }
        if self.doe_size < 2 {
            return Err(Error::InvalidArgument("doe_size must be at least 2".into()));
        }
        if self.budget <= self.doe_size {
            return Err(Error::InvalidArgument(format!(
                "budget {} must exceed doe_size {}",
                self.budget, self.doe_size
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// One evaluation. Design rows leave the model-related fields empty and report zero
/// fit and acquisition time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub eval_count: usize,
    pub y: f64,
    pub best_so_far: f64,
    pub target_gap: f64,
    pub fit_seconds: f64,
    pub acq_seconds: f64,
    pub r: Option<usize>,
    pub gamma: Option<f64>,
    pub ei: Option<f64>,
    pub feasible: Option<bool>,
    pub residual: Option<f64>,
    pub clipped: Option<bool>,
    /// Half-width of the reduced search box.
    pub radius: Option<f64>,
    /// Eigenvalue share of the selected components.
    pub explained_ratio: Option<f64>,
}

impl IterationRow {
    pub fn is_design(&self) -> bool {
        self.ei.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub iterations: Vec<IterationRow>,
    pub final_best: f64,
    pub total_seconds: f64,
    /// Objective evaluations consumed by the run.
    pub evaluations: u64,
    /// Diagnostic of a run that stopped early.
    pub error: Option<String>,
    /// Evaluated points in evaluation order; not persisted.
    #[serde(skip)]
    pub points: Vec<Vec<f64>>,
}

impl RunRecord {
    pub fn is_complete(&self) -> bool {
        self.error.is_none() && self.iterations.len() == self.config.budget
    }

    /// Best value among the design rows.
    pub fn design_best(&self) -> Option<f64> {
        self.iterations
            .iter()
            .filter(|r| r.is_design())
            .map(|r| r.y)
            .min_by(f64::total_cmp)
    }

    /// Target gap after the design phase.
    pub fn design_gap(&self) -> Option<f64> {
        self.iterations
            .iter()
            .take_while(|r| r.is_design())
            .last()
            .map(|r| r.target_gap)
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.target_gap)
    }

    /// Fit plus acquisition seconds of each model-based iteration.
    pub fn iteration_seconds(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .filter(|r| !r.is_design())
            .map(|r| r.fit_seconds + r.acq_seconds)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_roundtrip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("cma".parse::<Algorithm>(), Err(Error::UnknownAlgorithm("cma".into())));
    }

    #[test]
    fn config_validation() {
        let ok = RunConfig::new(Algorithm::KpcaBo, FunctionId::Rastrigin, 4, 0, 0, 13);
        assert_eq!(ok.doe_size, 12);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.budget = 12;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.eta = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.restarts = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let c = RunConfig::new(Algorithm::PcaBo, FunctionId::Gallagher21, 10, 3, 7, 50);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"pca-bo\"") && s.contains("\"gallagher-21\""));
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }
}
