//! Single simulation runs: snapshots, diagnostics series and a manifest.

use std::time::Instant;

use serde::Serialize;
use swarmlimit_core::diagnostics::{free_energy, second_moment_energy, velocity_alignment, DiagnosticsSeries};
use swarmlimit_core::ensemble::{
    step_first_order, support_radius, write_snapshot, IntegratorConfig, MultiSpeciesState, SecondOrderStepper,
};
use swarmlimit_core::kernels::{KernelMatrix, SelfPairPolicy};
use swarmlimit_core::kinetic::{picard_solve, time_grid, PicardConfig};
use swarmlimit_core::Result;

use crate::config::{Channel, Dynamics, ExperimentConfig};
use crate::error::HarnessError;
use crate::manifest::{OutputDir, RunManifest, RunStatus};
use crate::sampler::initial_state;

/// Column names and units of the selected channels for `n` species.
pub fn channel_layout(channels: &[Channel], n: usize) -> Vec<(String, &'static str)> {
    let mut out = Vec::new();
    for c in channels {
        match c {
            Channel::Alignment => out.extend((1..=n).map(|i| (format!("I_{i}"), "velocity"))),
            Channel::FreeEnergy => out.push(("free_energy".to_string(), "energy")),
            Channel::SecondMoment => out.extend((1..=n).map(|i| (format!("second_moment_{i}"), "energy"))),
            Channel::SupportRadius => out.push(("support_radius".to_string(), "length")),
        }
    }
    out
}

/// Values of the selected channels at one state.
pub fn channel_values(channels: &[Channel], state: &MultiSpeciesState, kernels: &KernelMatrix) -> Result<Vec<f64>> {
    let mut row = Vec::new();
    for c in channels {
        match c {
            Channel::Alignment => row.extend(velocity_alignment(state, kernels)?),
            Channel::FreeEnergy => row.push(free_energy(state, kernels, SelfPairPolicy::Skip)?),
            Channel::SecondMoment => row.extend(second_moment_energy(state)?),
            Channel::SupportRadius => row.push(support_radius(state)),
        }
    }
    Ok(row)
}

fn snapshot_bytes(state: &MultiSpeciesState) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_snapshot(state, &mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct PicardReport {
    windows: Vec<PicardWindowReport>,
}

#[derive(Serialize)]
struct PicardWindowReport {
    start: f64,
    end: f64,
    distances: Vec<f64>,
}

/// Trajectory of the configured dynamics, handed to `visit` step by step.
fn simulate(
    cfg: &ExperimentConfig,
    kernels: &KernelMatrix,
    out: &mut OutputDir,
    mut visit: impl FnMut(usize, bool, &MultiSpeciesState, &mut OutputDir) -> std::result::Result<(), HarnessError>,
) -> std::result::Result<(), HarnessError> {
    let state0 = initial_state(cfg, kernels)?;
    let times = time_grid(0.0, cfg.horizon, cfg.integrator.dt)?;
    let last = times.len() - 1;
    match cfg.dynamics {
        Dynamics::FirstOrder | Dynamics::SecondOrder { .. } => {
            let mut stepper = cfg
                .dynamics
                .epsilon()
                .map(|eps| SecondOrderStepper::new(kernels, IntegratorConfig::second_order(cfg.integrator.scheme, cfg.integrator.dt, eps)));
            let mut state = state0;
            visit(0, last == 0, &state, out)?;
            for (n, w) in times.windows(2).enumerate() {
                let h = w[1] - w[0];
                state = match stepper.as_mut() {
                    Some(s) => s.step_by(&state, h)?,
                    None => step_first_order(&state, kernels, &IntegratorConfig::first_order(cfg.integrator.scheme, h))?,
                }
                .with_time(w[1]);
                visit(n + 1, n + 1 == last, &state, out)?;
            }
        }
        Dynamics::KineticPicard { epsilon, tol, max_iter, window, samples, metric } => {
            let picard = PicardConfig {
                tol,
                max_iter,
                dt: cfg.integrator.dt,
                horizon: cfg.horizon,
                window: window.unwrap_or(cfg.horizon).max(f64::MIN_POSITIVE),
                samples,
                metric,
            };
            let solution = picard_solve(&state0, kernels, epsilon, &picard)?;
            let report = PicardReport {
                windows: solution
                    .windows
                    .iter()
                    .map(|w| PicardWindowReport { start: w.start, end: w.end, distances: w.distances.clone() })
                    .collect(),
            };
            out.write("picard.json", serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
            let last = solution.states.len() - 1;
            for (n, s) in solution.states.iter().enumerate() {
                visit(n, n == last, s, out)?;
            }
        }
    }
    Ok(())
}

/// Runs one experiment into `cfg.output`; numerical failures are recorded in
/// the manifest before being returned.
pub fn run(cfg: &ExperimentConfig) -> std::result::Result<RunManifest, HarnessError> {
    let started = Instant::now();
    cfg.validate()?;
    let kernels = cfg.kernel_matrix()?;
    let mut out = OutputDir::create(&cfg.output)?;
    out.write("config.json", cfg.to_json().as_bytes())?;
    let n = cfg.species.len();
    let layout = channel_layout(&cfg.diagnostics.channels, n);
    let names: Vec<(&str, &str)> = layout.iter().map(|(a, b)| (a.as_str(), *b)).collect();
    let mut series = DiagnosticsSeries::new(&names);
    let every = cfg.diagnostics.every;
    let snap_every = cfg.diagnostics.snapshot_every;
    let result = simulate(cfg, &kernels, &mut out, |n, last, state, out| {
        if n == 0 || last || (snap_every > 0 && n % snap_every == 0) {
            out.write(&format!("snapshots/step_{n:06}.csv"), &snapshot_bytes(state)?)?;
        }
        if !names.is_empty() && (n % every == 0 || last) {
            series.push(state.time(), &channel_values(&cfg.diagnostics.channels, state, &kernels)?)?;
        }
        Ok(())
    });
    if !names.is_empty() {
        let mut csv = Vec::new();
        series.write_csv(&mut csv)?;
        out.write("diagnostics.csv", &csv)?;
        out.write("diagnostics.json", series.sidecar_json(&cfg.hash()).as_bytes())?;
    }
    let elapsed = started.elapsed().as_secs_f64();
    match result {
        Ok(()) => out.finish(cfg.hash(), cfg.seed, elapsed, RunStatus::Ok),
        Err(e) => {
            let status = RunStatus::Failed { message: e.to_string() };
            out.finish(cfg.hash(), cfg.seed, elapsed, status)?;
            Err(e)
        }
    }
}
