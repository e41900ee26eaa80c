//! Paired kinetic and macroscopic runs from shared initial data.

use serde::Serialize;
use swarmlimit_core::diagnostics::{modulated_energy, second_moment_energy, velocity_alignment, DiagnosticsSeries, ModulatedEnergy};
use swarmlimit_core::ensemble::{IntegratorConfig, MultiSpeciesState, Scheme, SecondOrderStepper};
use swarmlimit_core::kernels::{KernelMatrix, KernelSpec};
use swarmlimit_core::kinetic::time_grid;
use swarmlimit_core::macroscopic::{grid_solve_1d, interpolate, macro_particle_solve, DensityGrid1D, GridFrame};
use swarmlimit_core::transport::{measures_of, w1_multispecies, w1_to_cell_density, Mollifier};
use swarmlimit_core::{Error, Result};

use crate::config::{Dynamics, ExperimentConfig, Metric, Reference};
use crate::sampler::{initial_positions, initial_state, VelocitySpec};

/// Cells of the automatic grid reference.
pub const DEFAULT_GRID_CELLS: usize = 512;

/// Kinetic-versus-reference quantities at one sampled time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub t: f64,
    /// Sum over species of `W1` between position marginals.
    pub w1: f64,
    pub alignment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub modulated: Option<ModulatedEnergy>,
}

/// `samples` step indices spread evenly over `0..=last`, endpoints included.
pub fn sample_steps(last: usize, samples: usize) -> Vec<usize> {
    if last == 0 {
        return vec![0];
    }
    let mut idx: Vec<usize> =
        (0..samples).map(|s| ((s as f64) * last as f64 / (samples - 1) as f64).round() as usize).collect();
    idx.dedup();
    idx
}

/// Damped free motion `x0 + ε v0 (1 - e^{-t/ε})` of every particle.
fn free_motion(initial: &MultiSpeciesState, eps: f64, t: f64) -> Result<MultiSpeciesState> {
    let gain = -(-t / eps).exp_m1();
    let species = initial
        .species()
        .iter()
        .map(|s| {
            let v = s.velocities().ok_or(Error::MissingVelocities)?;
            let x = s.positions().iter().zip(v).map(|(x, v)| x + eps * gain * v).collect();
            s.with_coordinates(x, None)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiSpeciesState::new(t, species)
}

enum Track {
    Analytic,
    Particles(Vec<MultiSpeciesState>),
    Grid(Vec<GridFrame>),
}

/// Runs the second-order system of `cfg` with `kinetic` kernels next to the
/// chosen reference computed with `macro_kernels`, sampling `samples` times.
/// With a grid reference, well-prepared velocities follow the grid field.
pub fn compare(
    cfg: &ExperimentConfig,
    kinetic: &KernelMatrix,
    macro_kernels: &KernelMatrix,
    reference: Reference,
    metric: Metric,
    samples: usize,
) -> Result<Vec<ComparisonRow>> {
    let eps = cfg
        .dynamics
        .epsilon()
        .ok_or_else(|| Error::InvalidParameter("comparison needs inertial dynamics".into()))?;
    let dt = cfg.integrator.dt;
    let times = time_grid(0.0, cfg.horizon, dt)?;
    let last = times.len() - 1;
    let steps = sample_steps(last, samples);
    let positions = initial_positions(cfg)?;
    let track = match reference {
        Reference::Analytic => Track::Analytic,
        Reference::MacroParticle { scheme } => {
            let all = macro_particle_solve(&positions, macro_kernels, cfg.horizon, dt, scheme)?;
            Track::Particles(steps.iter().map(|&n| all[n].clone()).collect())
        }
        Reference::Grid1d { lower, upper, cells, substeps } => {
            let dx = (upper - lower) / cells as f64;
            let moll = Mollifier::with_scale(0.5 / dx, 1)?;
            let rho0 = DensityGrid1D::from_state(&positions, &moll, lower, dx, cells)?;
            let frames = if last == 0 {
                grid_solve_1d(&rho0, macro_kernels, 0.0, dt, 1)?
            } else {
                grid_solve_1d(&rho0, macro_kernels, cfg.horizon, dt / substeps as f64, substeps)?
            };
            Track::Grid(steps.iter().map(|&n| frames[n].clone()).collect())
        }
    };
    let mut state = initial_state(cfg, kinetic)?;
    if let Track::Grid(frames) = &track {
        let f0 = &frames[0];
        let velocities = state
            .species()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if cfg.species[i].velocity == VelocitySpec::WellPrepared {
                    s.positions().iter().map(|z| -interpolate(f0.rho.x_min, f0.rho.dx, &f0.u[i], *z)).collect()
                } else {
                    s.velocities().unwrap().to_vec()
                }
            })
            .collect();
        state = state.with_velocities(velocities)?;
    }
    let mut stepper = SecondOrderStepper::new(kinetic, IntegratorConfig::second_order(cfg.integrator.scheme, dt, eps));
    let method = metric.method();
    let mut rows = Vec::with_capacity(steps.len());
    let mut next_sample = 0;
    for n in 0..=last {
        if n > 0 {
            state = stepper.step_by(&state, times[n] - times[n - 1])?.with_time(times[n]);
        }
        if steps.get(next_sample) != Some(&n) {
            continue;
        }
        let t = times[n];
        let (w1, modulated) = match &track {
            Track::Analytic => {
                let reference = free_motion(&initial_state(cfg, kinetic)?, eps, t)?;
                (w1_multispecies(&measures_of(&state, false)?, &measures_of(&reference, false)?, method)?, None)
            }
            Track::Particles(states) => {
                let reference = &states[next_sample];
                (w1_multispecies(&measures_of(&state, false)?, &measures_of(reference, false)?, method)?, None)
            }
            Track::Grid(frames) => {
                let frame = &frames[next_sample];
                let rho = &frame.rho;
                let mut w1 = 0.0;
                for (mu, values) in measures_of(&state, false)?.iter().zip(&rho.values) {
                    w1 += w1_to_cell_density(mu, rho.x_min, rho.dx, values)?;
                }
                (w1, Some(modulated_energy(&state, frame, eps, macro_kernels)?))
            }
        };
        rows.push(ComparisonRow {
            t,
            w1,
            alignment: velocity_alignment(&state, kinetic)?,
            second_moment: second_moment_energy(&state)?,
            modulated,
        });
        next_sample += 1;
    }
    Ok(rows)
}

/// Reference used when none is given: the 1-D grid for Riesz-type kernels in
/// one dimension, first-order particles otherwise.
pub fn default_reference(cfg: &ExperimentConfig) -> Result<Reference> {
    let singular = cfg
        .kernels
        .iter()
        .flatten()
        .any(|k| matches!(k, KernelSpec::Riesz { .. } | KernelSpec::RegularizedRiesz { .. }));
    if cfg.dim == 1 && singular {
        let positions = initial_positions(cfg)?;
        let (lo, hi) = positions
            .species()
            .iter()
            .flat_map(|s| s.positions().iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let pad = 0.5 * (hi - lo) + 1.0;
        Ok(Reference::Grid1d { lower: lo - pad, upper: hi + pad, cells: DEFAULT_GRID_CELLS, substeps: 1 })
    } else {
        Ok(Reference::MacroParticle { scheme: Scheme::Euler })
    }
}

/// Kinetic run at `epsilon` against its default macroscopic reference, as a
/// series of `w1`, modulated-energy parts, `I_i` and second moments.
pub fn compare_to_macro(cfg: &ExperimentConfig, epsilon: f64) -> Result<DiagnosticsSeries> {
    let mut cfg = cfg.clone();
    cfg.dynamics = Dynamics::SecondOrder { epsilon };
    if matches!(cfg.integrator.scheme, Scheme::Euler | Scheme::Rk4) {
        cfg.integrator.scheme = Scheme::ExpStrang;
    }
    let kernels = KernelMatrix::new(cfg.dim, cfg.kernels.clone())?;
    let reference = default_reference(&cfg)?;
    let metric = if cfg.dim == 1 { Metric::W1OneD } else { Metric::W1Exact };
    let steps = (cfg.horizon / cfg.integrator.dt).ceil() as usize;
    let rows = compare(&cfg, &kernels, &kernels, reference, metric, (steps + 1).min(101))?;
    let n = cfg.species.len();
    let grid = matches!(reference, Reference::Grid1d { .. });
    let mut names: Vec<(String, &str)> = vec![("w1".into(), "length")];
    if grid {
        names.push(("E_K_kinetic".into(), "energy"));
        names.push(("E_K_interaction".into(), "energy"));
        names.push(("E_K".into(), "energy"));
    }
    names.extend((1..=n).map(|i| (format!("I_{i}"), "velocity")));
    names.extend((1..=n).map(|i| (format!("second_moment_{i}"), "energy")));
    let refs: Vec<(&str, &str)> = names.iter().map(|(a, b)| (a.as_str(), *b)).collect();
    let mut series = DiagnosticsSeries::new(&refs);
    for r in rows {
        let mut v = vec![r.w1];
        if let Some(m) = r.modulated {
            v.extend([m.kinetic_part, m.interaction_part, m.total]);
        }
        v.extend(r.alignment);
        v.extend(r.second_moment);
        series.push(r.t, &v)?;
    }
    Ok(series)
}
