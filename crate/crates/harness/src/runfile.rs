//! Per-run CSV files and their JSON sidecars.
//!
//! A run file has one row per evaluation. The leading columns repeat the run
//! configuration on every row so that each file can be read on its own; the
//! remaining columns are the iteration log. Floats are written in shortest
//! round-trip form, so reading a file back gives bit-identical values.

use std::fs;
use std::path::{Path, PathBuf};

use kpcabo_core::testbed::FunctionId;
use kpcabo_core::{Algorithm, IterationRow, RunConfig, RunRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_COLUMNS: [&str; 9] = [
    "algorithm",
    "function_id",
    "dim",
    "instance_seed",
    "run_seed",
    "budget",
    "doe_size",
    "eta",
    "restarts",
];

pub const ITERATION_COLUMNS: [&str; 14] = [
    "eval_count",
    "y",
    "best_so_far",
    "target_gap",
    "fit_seconds",
    "acq_seconds",
    "r",
    "gamma",
    "ei",
    "feasible",
    "residual",
    "clipped",
    "radius",
    "explained_ratio",
];

/// Columns that hold wall-clock measurements and differ between otherwise
/// identical runs.
pub const TIMING_COLUMNS: [&str; 2] = ["fit_seconds", "acq_seconds"];

pub fn header() -> Vec<&'static str> {
    CONFIG_COLUMNS.iter().chain(ITERATION_COLUMNS.iter()).copied().collect()
}

/// A trace as stored on disk. The label is an algorithm name for native runs and
/// free text for ingested baselines, which also lack the optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRun {
    pub label: String,
    pub function_id: FunctionId,
    pub dim: usize,
    pub instance_seed: u64,
    pub run_seed: u64,
    pub budget: usize,
    pub doe_size: Option<usize>,
    pub eta: Option<f64>,
    pub restarts: Option<usize>,
    pub iterations: Vec<IterationRow>,
}

impl LabeledRun {
    /// Summed fit and acquisition seconds over the run.
    pub fn timing_totals(&self) -> (f64, f64) {
        self.iterations
            .iter()
            .fold((0.0, 0.0), |(f, a), row| (f + row.fit_seconds, a + row.acq_seconds))
    }

    /// The native configuration, if the label names one of the drivers and the
    /// settings are present.
    pub fn config(&self) -> Option<RunConfig> {
        let algorithm: Algorithm = self.label.parse().ok()?;
        Some(RunConfig {
            algorithm,
            function_id: self.function_id,
            dim: self.dim,
            instance_seed: self.instance_seed,
            run_seed: self.run_seed,
            budget: self.budget,
            doe_size: self.doe_size?,
            eta: self.eta?,
            restarts: self.restarts?,
            output_dir: None,
        })
    }
}

impl From<&RunRecord> for LabeledRun {
    fn from(record: &RunRecord) -> Self {
        let c = &record.config;
        LabeledRun {
            label: c.algorithm.name().to_string(),
            function_id: c.function_id,
            dim: c.dim,
            instance_seed: c.instance_seed,
            run_seed: c.run_seed,
            budget: c.budget,
            doe_size: Some(c.doe_size),
            eta: Some(c.eta),
            restarts: Some(c.restarts),
            iterations: record.iterations.clone(),
        }
    }
}

/// Run-level fields that do not fit the per-row layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: RunConfig,
    pub final_best: f64,
    pub total_seconds: f64,
    pub evaluations: u64,
    pub error: Option<String>,
}

impl From<&RunRecord> for RunMeta {
    fn from(record: &RunRecord) -> Self {
        let mut config = record.config.clone();
        config.output_dir = None;
        RunMeta {
            config,
            final_best: record.final_best,
            total_seconds: record.total_seconds,
            evaluations: record.evaluations,
            error: record.error.clone(),
        }
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn row_fields(run: &LabeledRun, row: &IterationRow) -> Vec<String> {
    vec![
        run.label.clone(),
        run.function_id.name().to_string(),
        run.dim.to_string(),
        run.instance_seed.to_string(),
        run.run_seed.to_string(),
        run.budget.to_string(),
        opt(run.doe_size, |v| v.to_string()),
        opt(run.eta, float),
        opt(run.restarts, |v| v.to_string()),
        row.eval_count.to_string(),
        float(row.y),
        float(row.best_so_far),
        float(row.target_gap),
        float(row.fit_seconds),
        float(row.acq_seconds),
        opt(row.r, |v| v.to_string()),
        opt(row.gamma, float),
        opt(row.ei, float),
        opt(row.feasible, |v| v.to_string()),
        opt(row.residual, float),
        opt(row.clipped, |v| v.to_string()),
        opt(row.radius, float),
        opt(row.explained_ratio, float),
    ]
}

/// Serializes a trace to CSV text.
pub fn to_csv_string(run: &LabeledRun) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    // writing to memory cannot fail
    writer.write_record(header()).unwrap();
    for row in &run.iterations {
        writer.write_record(row_fields(run, row)).unwrap();
    }
    String::from_utf8(writer.into_inner().unwrap()).unwrap()
}

pub fn write_labeled(path: &Path, run: &LabeledRun) -> Result<()> {
    fs::write(path, to_csv_string(run)).map_err(|e| Error::io(path, e))
}

/// Writes the CSV and its JSON sidecar.
pub fn write_run(path: &Path, record: &RunRecord) -> Result<()> {
    write_labeled(path, &LabeledRun::from(record))?;
    let meta = sidecar_path(path);
    let json = serde_json::to_string_pretty(&RunMeta::from(record)).map_err(|e| Error::json(&meta, e))?;
    fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))
}

struct Fields<'a> {
    path: &'a Path,
    row: usize,
    record: &'a csv::StringRecord,
}

impl Fields<'_> {
    fn text(&self, col: usize) -> &str {
        self.record.get(col).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, col: usize) -> Result<T> {
        let s = self.text(col);
        s.parse().map_err(|_| {
            Error::schema(
                self.path,
                self.row,
                format!("cannot parse {} from `{s}`", header()[col]),
            )
        })
    }

    fn optional<T: std::str::FromStr>(&self, col: usize) -> Result<Option<T>> {
        if self.text(col).is_empty() {
            Ok(None)
        } else {
            self.parse(col).map(Some)
        }
    }
}

/// True if the CSV header is the run-file header.
pub fn has_run_header(path: &Path) -> Result<bool> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let found = reader.headers().map_err(|e| Error::csv(path, e))?;
    Ok(found.iter().eq(header()))
}

pub fn read_labeled(path: &Path) -> Result<LabeledRun> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let found = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if !found.iter().eq(header()) {
        return Err(Error::schema(path, 0, "header does not match the run-file layout"));
    }
    let mut run: Option<LabeledRun> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let f = Fields {
            path,
            row: i + 1,
            record: &record,
        };
        let c = CONFIG_COLUMNS.len();
        let row = IterationRow {
            eval_count: f.parse(c)?,
            y: f.parse(c + 1)?,
            best_so_far: f.parse(c + 2)?,
            target_gap: f.parse(c + 3)?,
            fit_seconds: f.parse(c + 4)?,
            acq_seconds: f.parse(c + 5)?,
            r: f.optional(c + 6)?,
            gamma: f.optional(c + 7)?,
            ei: f.optional(c + 8)?,
            feasible: f.optional(c + 9)?,
            residual: f.optional(c + 10)?,
            clipped: f.optional(c + 11)?,
            radius: f.optional(c + 12)?,
            explained_ratio: f.optional(c + 13)?,
        };
        match run.as_mut() {
            None => {
                let function_id = f
                    .text(1)
                    .parse()
                    .map_err(|_| Error::schema(path, i + 1, format!("unknown function_id `{}`", f.text(1))))?;
                run = Some(LabeledRun {
                    label: f.text(0).to_string(),
                    function_id,
                    dim: f.parse(2)?,
                    instance_seed: f.parse(3)?,
                    run_seed: f.parse(4)?,
                    budget: f.parse(5)?,
                    doe_size: f.optional(6)?,
                    eta: f.optional(7)?,
                    restarts: f.optional(8)?,
                    iterations: vec![row],
                });
            }
            Some(run) => {
                let first = run.iterations.first().map_or(0, |r| r.eval_count);
                let last = run.iterations.last().map_or(first, |r| r.eval_count);
                if f.text(0) != run.label || f.text(1) != run.function_id.name() {
                    return Err(Error::schema(
                        path,
                        i + 1,
                        "configuration columns change within the file",
                    ));
                }
                if row.eval_count <= last {
                    return Err(Error::schema(path, i + 1, "eval_count is not strictly increasing"));
                }
                run.iterations.push(row);
            }
        }
    }
    run.ok_or_else(|| Error::schema(path, 0, "file has no rows"))
}

/// Reads a native run. Run-level fields come from the sidecar when present and
/// are otherwise reconstructed from the rows.
pub fn read_run(path: &Path) -> Result<RunRecord> {
    let run = read_labeled(path)?;
    let config = run
        .config()
        .ok_or_else(|| Error::schema(path, 1, format!("`{}` is not a native run", run.label)))?;
    let meta_path = sidecar_path(path);
    let meta = match fs::read_to_string(&meta_path) {
        Ok(text) => Some(serde_json::from_str::<RunMeta>(&text).map_err(|e| Error::json(&meta_path, e))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&meta_path, e)),
    };
    let (fit, acq) = run.timing_totals();
    let last_best = run.iterations.last().map_or(f64::INFINITY, |r| r.best_so_far);
    Ok(RunRecord {
        config,
        final_best: meta.as_ref().map_or(last_best, |m| m.final_best),
        total_seconds: meta.as_ref().map_or(fit + acq, |m| m.total_seconds),
        evaluations: meta.as_ref().map_or(run.iterations.len() as u64, |m| m.evaluations),
        error: meta.and_then(|m| m.error),
        iterations: run.iterations,
        points: Vec::new(),
    })
}

/// Drops the timing columns from CSV text, leaving everything that must be
/// reproducible.
pub fn without_timing(csv_text: &str) -> String {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(csv_text.as_bytes());
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut keep: Option<Vec<bool>> = None;
    for record in reader.records() {
        let Ok(record) = record else { break };
        let keep = keep.get_or_insert_with(|| record.iter().map(|h| !TIMING_COLUMNS.contains(&h)).collect());
        let kept: Vec<&str> = record
            .iter()
            .zip(keep.iter())
            .filter(|(_, &k)| k)
            .map(|(v, _)| v)
            .collect();
        writer.write_record(kept).unwrap();
    }
    String::from_utf8(writer.into_inner().unwrap()).unwrap()
}
