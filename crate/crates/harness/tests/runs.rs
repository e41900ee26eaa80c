use std::fs;

use swarmlimit::benchmarks::{gaussian_benchmark, gaussian_sweep};
use swarmlimit::config::{Channel, Reference};
use swarmlimit::manifest::{read_manifest, verify, RunStatus};
use swarmlimit::run::run;
use swarmlimit::sweep::{run_sweep, sweep};
use swarmlimit::with_workers;
use swarmlimit_core::kernels::KernelSpec;

#[test]
fn zero_horizon_writes_one_snapshot_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = gaussian_benchmark(16, 0.1, 0.0, 0.01);
    cfg.output = dir.path().to_path_buf();
    let manifest = run(&cfg).unwrap();
    assert_eq!(manifest.status, RunStatus::Ok);
    let snapshots: Vec<_> = fs::read_dir(dir.path().join("snapshots")).unwrap().collect();
    assert_eq!(snapshots.len(), 1);
    assert!(dir.path().join("snapshots/step_000000.csv").exists());
    assert_eq!(read_manifest(dir.path()).unwrap(), manifest);
    assert!(verify(dir.path(), &manifest).is_empty());
}

#[test]
fn outputs_are_identical_across_runs_and_worker_counts() {
    let mut cfg = gaussian_benchmark(40, 0.1, 0.2, 0.01);
    cfg.diagnostics.channels = vec![Channel::Alignment, Channel::FreeEnergy, Channel::SecondMoment, Channel::SupportRadius];
    cfg.diagnostics.snapshot_every = 5;
    let dir = tempfile::tempdir().unwrap();
    cfg.output = dir.path().join("run");
    let checksums = |workers: usize| {
        let _ = fs::remove_dir_all(&cfg.output);
        let manifest = with_workers(workers, || run(&cfg)).unwrap();
        manifest.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect::<Vec<_>>()
    };
    let one = checksums(1);
    assert!(one.iter().any(|(p, _)| p == "diagnostics.csv"));
    assert_eq!(one.iter().filter(|(p, _)| p.starts_with("snapshots/")).count(), 5);
    assert_eq!(one, checksums(1));
    assert_eq!(one, checksums(4));
}

#[test]
fn tampered_outputs_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = gaussian_benchmark(8, 0.1, 0.05, 0.01);
    cfg.output = dir.path().to_path_buf();
    let manifest = run(&cfg).unwrap();
    fs::write(dir.path().join("config.json"), b"{}").unwrap();
    let problems = verify(dir.path(), &read_manifest(dir.path()).unwrap());
    assert_eq!(problems.len(), 1, "{problems:?}");
    assert!(problems[0].contains("config.json"));
    assert_eq!(manifest.config_hash, cfg.hash());
}

#[test]
fn synthetic_sweep_recovers_unit_slope() {
    let mut cfg = gaussian_sweep(4, 0.1, 0.01);
    cfg.synthetic = Some(3.0);
    let outcome = sweep(&cfg).unwrap();
    assert!(!outcome.degenerate);
    assert!((outcome.slope.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_kernels_against_free_motion_are_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = gaussian_sweep(6, 0.2, 0.01);
    cfg.base.kernels = vec![vec![KernelSpec::Zero; 2]; 2];
    cfg.base.output = dir.path().to_path_buf();
    cfg.reference = Reference::Analytic;
    let (outcome, manifest) = run_sweep(&cfg).unwrap();
    assert!(outcome.degenerate);
    assert_eq!(outcome.slope, None);
    assert!(outcome.final_metric().iter().all(|(_, w)| *w < 1e-12));
    assert!(verify(dir.path(), &manifest).is_empty());
    let table = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(table.starts_with("param,t,w1,I_1,I_2,E_K\n"));
}
