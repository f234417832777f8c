//! Convergence and timing summaries over sets of runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kpcabo_core::testbed::FunctionId;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::runfile::{has_run_header, read_labeled, LabeledRun};

/// Grouping key. `instance_seed` is `None` when instances are pooled.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub label: String,
    pub function_id: FunctionId,
    pub dim: usize,
    pub instance_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub algorithm: String,
    pub function_id: FunctionId,
    pub dim: usize,
    pub instance_seed: Option<u64>,
    pub eval_count: usize,
    pub runs: usize,
    pub mean_gap: f64,
    pub sem_gap: f64,
}

/// Mean per-run totals of fit and acquisition seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub algorithm: String,
    pub function_id: FunctionId,
    pub dim: usize,
    pub instance_seed: Option<u64>,
    pub runs: usize,
    pub mean_fit_seconds: f64,
    pub sem_fit_seconds: f64,
    pub mean_acq_seconds: f64,
    pub sem_acq_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub gaps: Vec<GapRow>,
    pub timing: Vec<TimingRow>,
}

/// Mean and standard error of the mean (sample standard deviation over `sqrt n`).
/// A single value has zero standard error.
pub fn mean_and_sem(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

pub fn group_runs(runs: &[LabeledRun], by_instance: bool) -> BTreeMap<GroupKey, Vec<&LabeledRun>> {
    let mut groups: BTreeMap<GroupKey, Vec<&LabeledRun>> = BTreeMap::new();
    for run in runs {
        let key = GroupKey {
            label: run.label.clone(),
            function_id: run.function_id,
            dim: run.dim,
            instance_seed: by_instance.then_some(run.instance_seed),
        };
        groups.entry(key).or_default().push(run);
    }
    groups
}

/// Mean target gap and its standard error per evaluation count, and mean timing
/// totals per group. Instances are pooled unless `by_instance` is set.
pub fn summarize(runs: &[LabeledRun], by_instance: bool) -> Result<Summary> {
    if runs.is_empty() {
        return Err(Error::EmptyGroup("no runs to summarize".into()));
    }
    let mut summary = Summary::default();
    for (key, members) in group_runs(runs, by_instance) {
        let mut by_count: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for run in &members {
            for row in &run.iterations {
                by_count.entry(row.eval_count).or_default().push(row.target_gap);
            }
        }
        if by_count.is_empty() {
            return Err(Error::EmptyGroup(format!(
                "{} on {} d={} has no rows",
                key.label, key.function_id, key.dim
            )));
        }
        for (eval_count, gaps) in by_count {
            let (mean_gap, sem_gap) = mean_and_sem(&gaps).unwrap();
            summary.gaps.push(GapRow {
                algorithm: key.label.clone(),
                function_id: key.function_id,
                dim: key.dim,
                instance_seed: key.instance_seed,
                eval_count,
                runs: gaps.len(),
                mean_gap,
                sem_gap,
            });
        }
        let (fit, acq): (Vec<f64>, Vec<f64>) = members.iter().map(|r| r.timing_totals()).unzip();
        let (mean_fit_seconds, sem_fit_seconds) = mean_and_sem(&fit).unwrap();
        let (mean_acq_seconds, sem_acq_seconds) = mean_and_sem(&acq).unwrap();
        summary.timing.push(TimingRow {
            algorithm: key.label,
            function_id: key.function_id,
            dim: key.dim,
            instance_seed: key.instance_seed,
            runs: members.len(),
            mean_fit_seconds,
            sem_fit_seconds,
            mean_acq_seconds,
            sem_acq_seconds,
        });
    }
    Ok(summary)
}

/// Loads every run file in `dir`. Other CSV files are ignored.
pub fn load_runs(dir: &Path) -> Result<Vec<LabeledRun>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut runs = Vec::new();
    for path in paths {
        if has_run_header(&path)? {
            runs.push(read_labeled(&path)?);
        }
    }
    Ok(runs)
}

/// `summary.csv` becomes `summary_timing.csv`.
pub fn timing_path(gap_path: &Path) -> PathBuf {
    let stem = gap_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    gap_path.with_file_name(format!("{stem}_timing.csv"))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes the gap table to `path` and the timing table next to it. Returns the
/// timing table's path.
pub fn write_summary(summary: &Summary, path: &Path) -> Result<PathBuf> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_rows(path, &summary.gaps)?;
    let timing = timing_path(path);
    write_rows(&timing, &summary.timing)?;
    Ok(timing)
}
