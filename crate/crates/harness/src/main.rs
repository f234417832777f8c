use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use kpcabo_core::testbed::FunctionId;
use kpcabo_core::{Algorithm, RunConfig};
use kpcabo_harness::runfile::write_labeled;
use kpcabo_harness::{
    ingest_external, load_runs, run_campaign, summarize, write_summary, CampaignReport, CampaignSpec, OUTPUT_DIR_ENV,
};

#[derive(Parser)]
#[command(
    name = "kpcabo",
    version,
    about = "Run and summarize BO / PCA-BO / KPCA-BO benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on one function for several seeds.
    Run(RunArgs),
    /// Run a grid described by a JSON file.
    Campaign(CampaignArgs),
    /// Aggregate run files into mean target gap and timing tables.
    Summarize(SummarizeArgs),
    /// Convert an external best-so-far CSV into run files.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct OutDir {
    /// Output directory [default: $KPCABO_OUTPUT_DIR, else ./runs]
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out: Option<PathBuf>,
}

impl OutDir {
    fn resolve(&self, fallback: Option<&Path>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| fallback.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    algo: Algorithm,
    #[arg(long = "fn")]
    function: FunctionId,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    budget: usize,
    /// Run seeds 0..k.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    instance: u64,
    /// Design size [default: 3 dim]
    #[arg(long)]
    doe_size: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct CampaignArgs {
    /// Campaign JSON; omitted fields take the desk-scale defaults.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    parallelism: Option<usize>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Directory of run files [default: the output directory]
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Gap table; the timing table goes next to it with a `_timing` suffix.
    #[arg(long)]
    out: PathBuf,
    /// Keep instances apart instead of pooling them.
    #[arg(long)]
    by_instance: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    label: String,
    #[command(flatten)]
    out: OutDir,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn report(report: &CampaignReport) -> anyhow::Result<()> {
    let m = &report.manifest;
    println!(
        "{} completed, {} skipped, {} failed; manifest {}",
        m.completed,
        m.skipped,
        m.failed,
        report.manifest_path.display()
    );
    if let Some(first) = report.failures().next() {
        bail!(
            "{} run(s) failed, first: {} on {} seed {}: {}",
            m.failed,
            first.config.algorithm,
            first.config.function_id,
            first.config.run_seed,
            first.error.as_deref().unwrap_or("unknown error")
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let grid = (0..args.seeds)
                .map(|seed| {
                    let mut c = RunConfig::new(args.algo, args.function, args.dim, args.instance, seed, args.budget);
                    c.doe_size = args.doe_size.unwrap_or(c.doe_size);
                    c.eta = args.eta.unwrap_or(c.eta);
                    c.restarts = args.restarts.unwrap_or(c.restarts);
                    c
                })
                .collect::<Vec<_>>();
            let dir = args.out.resolve(None);
            let parallelism = args.parallelism.unwrap_or_else(default_parallelism);
            report(&run_campaign(&grid, parallelism, &dir)?)
        }
        Command::Campaign(args) => {
            let spec = CampaignSpec::from_json_file(&args.config)?;
            let grid = spec.expand()?;
            let dir = args.out.resolve(spec.output_dir.as_deref());
            let parallelism = args
                .parallelism
                .or(spec.parallelism)
                .unwrap_or_else(default_parallelism);
            report(&run_campaign(&grid, parallelism, &dir)?)
        }
        Command::Summarize(args) => {
            let input = args
                .input
                .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let runs = load_runs(&input)?;
            if runs.is_empty() {
                bail!("no run files in {}", input.display());
            }
            let summary = summarize(&runs, args.by_instance)?;
            let timing = write_summary(&summary, &args.out)?;
            println!(
                "{} runs summarized into {} and {}",
                runs.len(),
                args.out.display(),
                timing.display()
            );
            Ok(())
        }
        Command::Ingest(args) => {
            let runs = ingest_external(&args.csv, &args.label)?;
            let dir = args.out.resolve(None);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for run in &runs {
                let name = format!(
                    "{}_{}_d{}_i{}_s{}_external.csv",
                    run.label, run.function_id, run.dim, run.instance_seed, run.run_seed
                );
                write_labeled(&dir.join(name), run)?;
            }
            println!("{} runs ingested into {}", runs.len(), dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("kpcabo: error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("kpcabo: error: {message}");
            ExitCode::FAILURE
        }
    }
}
