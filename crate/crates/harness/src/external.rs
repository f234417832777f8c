//! Best-so-far traces exchanged with other optimizers.
//!
//! The external layout has the columns `function_id, dim, instance_seed,
//! run_seed, eval_count, best_so_far`, one row per logged evaluation, any number
//! of runs per file. Extra columns are ignored.

use std::collections::HashMap;
use std::path::Path;

use kpcabo_core::testbed::{make_function, FunctionId};
use kpcabo_core::IterationRow;

use crate::error::{Error, Result};
use crate::runfile::LabeledRun;

pub const EXTERNAL_COLUMNS: [&str; 6] = [
    "function_id",
    "dim",
    "instance_seed",
    "run_seed",
    "eval_count",
    "best_so_far",
];

/// Reads an external trace file into one run per (function, dim, instance, seed),
/// in order of first appearance. Target gaps use the testbed optimum; `y` repeats
/// the best-so-far value since only that is logged, and timings are zero.
pub fn ingest_external(path: &Path, label: &str) -> Result<Vec<LabeledRun>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let mut columns = [0usize; 6];
    for (slot, name) in columns.iter_mut().zip(EXTERNAL_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::schema(path, 0, format!("missing column `{name}`")))?;
    }
    let mut runs: Vec<LabeledRun> = Vec::new();
    let mut index: HashMap<(FunctionId, usize, u64, u64), usize> = HashMap::new();
    let mut optima: HashMap<(FunctionId, usize, u64), f64> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let field = |k: usize| record.get(columns[k]).unwrap_or("").trim();
        let number = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|_| {
                Error::schema(
                    path,
                    row,
                    format!("cannot parse {} from `{}`", EXTERNAL_COLUMNS[k], field(k)),
                )
            })
        };
        let integer = |k: usize| -> Result<u64> {
            field(k).parse().map_err(|_| {
                Error::schema(
                    path,
                    row,
                    format!("cannot parse {} from `{}`", EXTERNAL_COLUMNS[k], field(k)),
                )
            })
        };
        let function_id: FunctionId = field(0)
            .parse()
            .map_err(|_| Error::schema(path, row, format!("unknown function_id `{}`", field(0))))?;
        let dim = integer(1)? as usize;
        let instance_seed = integer(2)?;
        let run_seed = integer(3)?;
        let eval_count = integer(4)? as usize;
        let best = number(5)?;
        let optimum = match optima.get(&(function_id, dim, instance_seed)) {
            Some(&v) => v,
            None => {
                let f = make_function(function_id, dim, instance_seed)
                    .map_err(|e| Error::schema(path, row, e.to_string()))?;
                optima.insert((function_id, dim, instance_seed), f.optimum_value());
                f.optimum_value()
            }
        };
        let slot = *index
            .entry((function_id, dim, instance_seed, run_seed))
            .or_insert_with(|| {
                runs.push(LabeledRun {
                    label: label.to_string(),
                    function_id,
                    dim,
                    instance_seed,
                    run_seed,
                    budget: 0,
                    doe_size: None,
                    eta: None,
                    restarts: None,
                    iterations: Vec::new(),
                });
                runs.len() - 1
            });
        let run = &mut runs[slot];
        if run.iterations.last().is_some_and(|r| r.eval_count >= eval_count) {
            return Err(Error::schema(
                path,
                row,
                "eval_count is not strictly increasing within the run",
            ));
        }
        run.budget = eval_count;
        run.iterations.push(IterationRow {
            eval_count,
            y: best,
            best_so_far: best,
            target_gap: best - optimum,
            fit_seconds: 0.0,
            acq_seconds: 0.0,
            r: None,
            gamma: None,
            ei: None,
            feasible: None,
            residual: None,
            clipped: None,
            radius: None,
            explained_ratio: None,
        });
    }
    Ok(runs)
}

/// Writes traces in the external layout.
pub fn export_external(path: &Path, runs: &[LabeledRun]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    writer.write_record(EXTERNAL_COLUMNS).map_err(|e| Error::csv(path, e))?;
    for run in runs {
        for row in &run.iterations {
            writer
                .write_record([
                    run.function_id.name().to_string(),
                    run.dim.to_string(),
                    run.instance_seed.to_string(),
                    run.run_seed.to_string(),
                    row.eval_count.to_string(),
                    format!("{:?}", row.best_so_far),
                ])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
