//! The two shipped benchmarks: a smooth two-species Gaussian model and a
//! single-species regularized Riesz model on the line.

use std::path::PathBuf;

use swarmlimit_core::ensemble::Scheme;
use swarmlimit_core::kernels::KernelSpec;

use crate::config::{
    DiagnosticsSelection, Dynamics, ExperimentConfig, IntegratorSettings, Metric, Reference, SpeciesConfig,
    SweepConfig, SweepParameter,
};
use crate::sampler::{SamplerSpec, SamplingMode, VelocitySpec};

pub const GAUSSIAN_EPSILONS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
pub const RIESZ_EPSILONS: [f64; 3] = [0.1, 0.05, 0.025];

/// Self-attraction within each species, species 1 chasing species 2 which flees.
pub fn gaussian_kernels() -> Vec<Vec<KernelSpec>> {
    let own = KernelSpec::GaussianCombo { c_a: 0.2, l_a: 1.0, c_r: 0.0, l_r: 1.0 };
    let chase = KernelSpec::GaussianCombo { c_a: 0.05, l_a: 1.0, c_r: 0.0, l_r: 1.0 };
    let flee = KernelSpec::GaussianCombo { c_a: 0.0, l_a: 1.0, c_r: 0.05, l_r: 1.0 };
    vec![vec![own, chase], vec![flee, own]]
}

fn gaussian_species(center: f64, count: usize) -> SpeciesConfig {
    SpeciesConfig {
        count,
        sampler: SamplerSpec::Gaussian { mean: vec![center], sigma: 0.3 },
        sampling: SamplingMode::Quantile,
        velocity: VelocitySpec::WellPrepared,
    }
}

/// Two Gaussian clouds at ∓1/2 on the line with well-prepared velocities.
pub fn gaussian_benchmark(count: usize, epsilon: f64, horizon: f64, dt: f64) -> ExperimentConfig {
    ExperimentConfig {
        dim: 1,
        species: vec![gaussian_species(-0.5, count), gaussian_species(0.5, count)],
        kernels: gaussian_kernels(),
        dynamics: Dynamics::SecondOrder { epsilon },
        integrator: IntegratorSettings { scheme: Scheme::ExpStrang, dt },
        horizon,
        diagnostics: DiagnosticsSelection::default(),
        output: PathBuf::from("output/gaussian"),
        seed: 0,
    }
}

/// ε-sweep of the Gaussian benchmark against first-order particles.
pub fn gaussian_sweep(count: usize, horizon: f64, dt: f64) -> SweepConfig {
    SweepConfig {
        base: gaussian_benchmark(count, GAUSSIAN_EPSILONS[0], horizon, dt),
        parameter: SweepParameter::Epsilon,
        values: GAUSSIAN_EPSILONS.to_vec(),
        reference: Reference::MacroParticle { scheme: Scheme::Euler },
        metric: Metric::W1OneD,
        samples: 11,
        synthetic: None,
    }
}

pub const RIESZ_ALPHA: f64 = 0.5;
pub const RIESZ_DELTA: f64 = 1e-3;

pub fn riesz_kernels() -> Vec<Vec<KernelSpec>> {
    vec![vec![KernelSpec::RegularizedRiesz { c: 1.0, alpha: RIESZ_ALPHA, delta: RIESZ_DELTA }]]
}

/// One repulsive Gaussian cloud on the line with well-prepared velocities.
pub fn riesz_benchmark(count: usize, epsilon: f64, horizon: f64, dt: f64) -> ExperimentConfig {
    ExperimentConfig {
        dim: 1,
        species: vec![SpeciesConfig {
            count,
            sampler: SamplerSpec::Gaussian { mean: vec![0.0], sigma: 0.3 },
            sampling: SamplingMode::Quantile,
            velocity: VelocitySpec::WellPrepared,
        }],
        kernels: riesz_kernels(),
        dynamics: Dynamics::SecondOrder { epsilon },
        integrator: IntegratorSettings { scheme: Scheme::ExpStrang, dt },
        horizon,
        diagnostics: DiagnosticsSelection::default(),
        output: PathBuf::from("output/riesz"),
        seed: 0,
    }
}

/// ε-sweep of the Riesz benchmark against the 1-D grid solver.
pub fn riesz_sweep(count: usize, cells: usize, horizon: f64, dt: f64) -> SweepConfig {
    SweepConfig {
        base: riesz_benchmark(count, RIESZ_EPSILONS[0], horizon, dt),
        parameter: SweepParameter::Epsilon,
        values: RIESZ_EPSILONS.to_vec(),
        reference: Reference::Grid1d { lower: -2.0, upper: 2.0, cells, substeps: 1 },
        metric: Metric::W1OneD,
        samples: 11,
        synthetic: None,
    }
}
