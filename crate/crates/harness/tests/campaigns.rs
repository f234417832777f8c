use std::path::Path;

use kpcabo_core::testbed::FunctionId;
use kpcabo_core::{Algorithm, RunConfig};
use kpcabo_harness::campaign::{file_hash, run_file_name, MANIFEST_FILE};
use kpcabo_harness::summary::{group_runs, timing_path};
use kpcabo_harness::{
    config_hash, load_runs, mean_and_sem, read_labeled, run_campaign, summarize, write_summary, CampaignSpec,
    LabeledRun, Manifest, RunStatus,
};

fn run_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
}

#[test]
fn single_config_campaign_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let grid = vec![RunConfig::new(Algorithm::Bo, FunctionId::Sphere, 2, 0, 0, 8)];
    let report = run_campaign(&grid, 1, dir.path()).unwrap();
    assert_eq!(report.manifest.completed, 1);
    assert_eq!(run_files(dir.path()).len(), 1);

    let manifest = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.runs.len(), 1);
    assert_eq!(manifest.runs[0].status, RunStatus::Completed);
    assert_eq!(manifest.runs[0].hash, config_hash(&grid[0]));
    for file in &manifest.runs[0].files {
        assert_eq!(file.sha256, file_hash(&dir.path().join(&file.path)).unwrap());
    }
    assert!(manifest.runs[0].files[0].path.ends_with(&run_file_name(&grid[0])));

    let before = std::fs::read(&run_files(dir.path())[0]).unwrap();
    let again = run_campaign(&grid, 1, dir.path()).unwrap();
    assert_eq!(again.manifest.completed, 0);
    assert_eq!(again.manifest.skipped, 1);
    assert_eq!(std::fs::read(&run_files(dir.path())[0]).unwrap(), before);
    assert_eq!(again.records()[0].iterations, report.records()[0].iterations);
}

#[test]
fn three_algorithms_two_seeds_give_monotone_files() {
    let dir = tempfile::tempdir().unwrap();
    let grid: Vec<RunConfig> = Algorithm::ALL
        .into_iter()
        .flat_map(|a| (0..2).map(move |s| RunConfig::new(a, FunctionId::Sphere, 5, 0, s, 30)))
        .collect();
    let report = run_campaign(&grid, 2, dir.path()).unwrap();
    assert_eq!(
        report.manifest.completed,
        6,
        "{:?}",
        report.failures().map(|f| &f.error).collect::<Vec<_>>()
    );
    let files = run_files(dir.path());
    assert_eq!(files.len(), 6);
    for path in files {
        let text = std::fs::read_to_string(&path).unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let col = reader
            .headers()
            .unwrap()
            .iter()
            .position(|h| h == "best_so_far")
            .unwrap();
        let best: Vec<f64> = reader.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
        assert_eq!(best.len(), 30);
        assert!(best.windows(2).all(|w| w[1] <= w[0]), "{}", path.display());
    }
}

#[test]
fn failed_runs_are_reported_and_the_campaign_continues() {
    let dir = tempfile::tempdir().unwrap();
    let good = RunConfig::new(Algorithm::PcaBo, FunctionId::Sphere, 2, 0, 0, 8);
    let mut blocked = RunConfig::new(Algorithm::Bo, FunctionId::Sphere, 2, 0, 1, 8);
    blocked.restarts = 3;
    // a directory where the CSV should go makes the write fail
    std::fs::create_dir(dir.path().join(run_file_name(&blocked))).unwrap();
    let report = run_campaign(&[good, blocked], 1, dir.path()).unwrap();
    assert_eq!(report.manifest.completed, 1);
    assert_eq!(report.manifest.failed, 1);
    let failed = report
        .manifest
        .runs
        .iter()
        .find(|r| r.status == RunStatus::Failed)
        .unwrap();
    assert!(failed.error.is_some());
    assert!(failed.files.is_empty());
}

#[test]
fn invalid_grids_are_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let bad = RunConfig::new(Algorithm::Bo, FunctionId::Sphere, 2, 0, 0, 6);
    assert!(run_campaign(&[bad], 1, dir.path()).is_err());
    let ok = RunConfig::new(Algorithm::Bo, FunctionId::Sphere, 2, 0, 0, 8);
    assert!(run_campaign(&[ok], 0, dir.path()).is_err());
}

#[test]
fn default_campaign_is_desk_scale() {
    let grid = CampaignSpec::default().expand().unwrap();
    assert_eq!(grid.len(), 3 * 5 * 2 * 10);
    assert!(grid
        .iter()
        .all(|c| c.budget == 5 * c.dim && c.doe_size == 3 * c.dim && c.eta == 0.9));
    let per_instance = grid.iter().filter(|c| c.instance_seed == 0).count();
    assert_eq!(per_instance * 5, grid.len());

    let spec: CampaignSpec =
        serde_json::from_str(r#"{"algorithms":["bo"],"functions":["sphere"],"dims":[4],"budget":20,"seeds":3}"#)
            .unwrap();
    let grid = spec.expand().unwrap();
    assert_eq!(grid.len(), 3);
    assert!(grid.iter().all(|c| c.budget == 20));
    assert!(serde_json::from_str::<CampaignSpec>(r#"{"dimz":[4]}"#).is_err());
}

fn gap_run(label: &str, gaps: &[f64], instance: u64) -> LabeledRun {
    LabeledRun {
        label: label.into(),
        function_id: FunctionId::Rastrigin,
        dim: 4,
        instance_seed: instance,
        run_seed: 0,
        budget: gaps.len(),
        doe_size: None,
        eta: None,
        restarts: None,
        iterations: gaps
            .iter()
            .enumerate()
            .map(|(k, &g)| kpcabo_core::IterationRow {
                eval_count: k + 1,
                y: g,
                best_so_far: g,
                target_gap: g,
                fit_seconds: 0.5,
                acq_seconds: 0.25 * (instance + 1) as f64,
                r: None,
                gamma: None,
                ei: None,
                feasible: None,
                residual: None,
                clipped: None,
                radius: None,
                explained_ratio: None,
            })
            .collect(),
    }
}

#[test]
fn summary_statistics() {
    assert_eq!(mean_and_sem(&[]), None);
    assert_eq!(mean_and_sem(&[4.0]), Some((4.0, 0.0)));
    let (mean, sem) = mean_and_sem(&[1.0, 3.0]).unwrap();
    assert!((mean - 2.0).abs() < 1e-15 && (sem - 1.0).abs() < 1e-15);

    let single = summarize(&[gap_run("a", &[3.0, 2.0], 0)], false).unwrap();
    assert_eq!(single.gaps.len(), 2);
    assert!(single.gaps.iter().all(|g| g.sem_gap == 0.0 && g.runs == 1));
    assert_eq!(single.gaps[1].mean_gap, 2.0);

    let runs = vec![
        gap_run("a", &[1.0], 0),
        gap_run("a", &[3.0], 1),
        gap_run("b", &[5.0], 0),
    ];
    let pooled = summarize(&runs, false).unwrap();
    assert_eq!(pooled.gaps[0].mean_gap, 2.0);
    assert!((pooled.gaps[0].sem_gap - 1.0).abs() < 1e-15);
    assert_eq!(pooled.timing[0].mean_fit_seconds, 0.5);
    assert_eq!(pooled.timing[0].mean_acq_seconds, 0.375);
    let split = summarize(&runs, true).unwrap();
    assert_eq!(split.gaps.len(), 3);
    for by_instance in [false, true] {
        let sizes: usize = group_runs(&runs, by_instance).values().map(Vec::len).sum();
        assert_eq!(sizes, runs.len());
    }
    assert!(summarize(&[], false).is_err());
}

#[test]
fn summaries_are_written_and_foreign_csvs_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let runs = vec![gap_run("a", &[1.0, 0.5], 0), gap_run("a", &[3.0, 1.5], 1)];
    for (k, run) in runs.iter().enumerate() {
        kpcabo_harness::write_labeled(&dir.path().join(format!("r{k}.csv")), run).unwrap();
    }
    let out = dir.path().join("summary.csv");
    let timing = write_summary(&summarize(&runs, false).unwrap(), &out).unwrap();
    assert_eq!(timing, timing_path(&out));
    let loaded = load_runs(dir.path()).unwrap();
    assert_eq!(loaded, runs);
    assert_eq!(read_labeled(&dir.path().join("r1.csv")).unwrap(), runs[1]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("algorithm,function_id,dim,instance_seed,eval_count,runs,mean_gap,sem_gap"));
    assert!(text.contains("a,rastrigin,4,,2,2,1.0,0.5"));
}
