//! Benchmark campaigns for `kpcabo-core`: parallel execution with skip-by-hash,
//! per-run CSV files with a JSON manifest, convergence and timing summaries, and
//! exchange of best-so-far traces with external optimizers.

pub mod campaign;
pub mod error;
pub mod external;
pub mod runfile;
pub mod summary;

pub use campaign::{config_hash, run_campaign, CampaignReport, CampaignSpec, Manifest, RunStatus};
pub use error::{Error, Result};
pub use external::{export_external, ingest_external};
pub use runfile::{read_labeled, read_run, write_labeled, write_run, LabeledRun};
pub use summary::{load_runs, mean_and_sem, summarize, write_summary, Summary};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "KPCABO_OUTPUT_DIR";
