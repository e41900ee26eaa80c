//! Initial particle clouds: deterministic quantile / Halton points or seeded
//! i.i.d. draws from a few named densities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use swarmlimit_core::ensemble::{MultiSpeciesState, SpeciesEnsemble};
use swarmlimit_core::kernels::{species_fields, KernelMatrix, SelfPairPolicy};
use swarmlimit_core::Result;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// Uniform on the box `lower..upper`.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    UniformBall { center: Vec<f64>, radius: f64 },
    /// Isotropic normal.
    Gaussian { mean: Vec<f64>, sigma: f64 },
    /// Mixture `w N(left, σ²) + (1 - w) N(right, σ²)`.
    TwoBump {
        left: Vec<f64>,
        right: Vec<f64>,
        sigma: f64,
        #[serde(default = "half")]
        weight: f64,
    },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Midpoint quantiles on the line, Halton points in higher dimensions.
    #[default]
    Quantile,
    Iid,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// Velocities equal to the initial field at each particle.
    WellPrepared,
    Gaussian { sigma: f64 },
}

fn check_len(name: &str, v: &[f64], dim: usize) -> std::result::Result<(), String> {
    if v.len() != dim {
        return Err(format!("{name} has {} components, expected {dim}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(format!("{name} must be finite"));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> std::result::Result<(), String> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

impl SamplerSpec {
    pub fn validate(&self, dim: usize) -> std::result::Result<(), String> {
        match self {
            SamplerSpec::UniformBox { lower, upper } => {
                check_len("lower", lower, dim)?;
                check_len("upper", upper, dim)?;
                if lower.iter().zip(upper).any(|(a, b)| b <= a) {
                    return Err("upper must exceed lower on every axis".into());
                }
                Ok(())
            }
            SamplerSpec::UniformBall { center, radius } => {
                check_len("center", center, dim)?;
                check_positive("radius", *radius)
            }
            SamplerSpec::Gaussian { mean, sigma } => {
                check_len("mean", mean, dim)?;
                check_positive("sigma", *sigma)
            }
            SamplerSpec::TwoBump { left, right, sigma, weight } => {
                check_len("left", left, dim)?;
                check_len("right", right, dim)?;
                check_positive("sigma", *sigma)?;
                if !(0.0..=1.0).contains(weight) {
                    return Err(format!("weight must lie in [0, 1], got {weight}"));
                }
                Ok(())
            }
        }
    }

    /// `count` points, flattened.
    pub fn sample(&self, dim: usize, count: usize, mode: SamplingMode, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match mode {
            SamplingMode::Quantile if dim == 1 => {
                (0..count).map(|k| self.quantile_1d((k as f64 + 0.5) / count as f64)).collect()
            }
            SamplingMode::Quantile => {
                let extra = usize::from(matches!(self, SamplerSpec::UniformBall { .. }));
                let cube: Vec<Vec<f64>> = (0..count).map(|k| halton(k + 1, dim + extra)).collect();
                self.map_cube(dim, &cube)
            }
            SamplingMode::Iid => {
                let cube: Vec<Vec<f64>> = (0..count).map(|_| (0..dim + 1).map(|_| rng.random::<f64>()).collect()).collect();
                self.map_cube(dim, &cube)
            }
        }
    }

    fn quantile_1d(&self, u: f64) -> f64 {
        let std = Normal::new(0.0, 1.0).unwrap();
        match self {
            SamplerSpec::UniformBox { lower, upper } => lower[0] + u * (upper[0] - lower[0]),
            SamplerSpec::UniformBall { center, radius } => center[0] + radius * (2.0 * u - 1.0),
            SamplerSpec::Gaussian { mean, sigma } => mean[0] + sigma * std.inverse_cdf(u),
            SamplerSpec::TwoBump { left, right, sigma, weight } => {
                let cdf = |x: f64| {
                    weight * std.cdf((x - left[0]) / sigma) + (1.0 - weight) * std.cdf((x - right[0]) / sigma)
                };
                let (mut a, mut b) = (left[0].min(right[0]) - 40.0 * sigma, left[0].max(right[0]) + 40.0 * sigma);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if cdf(m) < u {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                0.5 * (a + b)
            }
        }
    }

    /// Maps points of the unit cube (one extra coordinate for balls) to samples.
    fn map_cube(&self, dim: usize, cube: &[Vec<f64>]) -> Vec<f64> {
        let std = Normal::new(0.0, 1.0).unwrap();
        let gauss = |u: f64| std.inverse_cdf(u.clamp(1e-15, 1.0 - 1e-15));
        let count = cube.len();
        let mut out = Vec::with_capacity(count * dim);
        match self {
            SamplerSpec::UniformBox { lower, upper } => {
                for p in cube {
                    out.extend((0..dim).map(|a| lower[a] + p[a] * (upper[a] - lower[a])));
                }
            }
            SamplerSpec::UniformBall { center, radius } => {
                for p in cube {
                    let g: Vec<f64> = (0..dim).map(|a| gauss(p[a])).collect();
                    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    let r = radius * p[dim].powf(1.0 / dim as f64);
                    out.extend((0..dim).map(|a| center[a] + r * g[a] / norm));
                }
            }
            SamplerSpec::Gaussian { mean, sigma } => {
                for p in cube {
                    out.extend((0..dim).map(|a| mean[a] + sigma * gauss(p[a])));
                }
            }
            SamplerSpec::TwoBump { left, right, sigma, weight } => {
                let n_left = (weight * count as f64).round() as usize;
                for (k, p) in cube.iter().enumerate() {
                    let c = if k < n_left { left } else { right };
                    out.extend((0..dim).map(|a| c[a] + sigma * gauss(p[a])));
                }
            }
        }
        out
    }
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Point `index` of the Halton sequence in `dim` coordinates.
fn halton(index: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|a| {
            let base = PRIMES[a % PRIMES.len()];
            let (mut f, mut r, mut i) = (1.0, 0.0, index);
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

impl VelocitySpec {
    pub fn validate(&self, dim: usize) -> std::result::Result<(), String> {
        match self {
            VelocitySpec::Constant { value } => check_len("value", value, dim),
            VelocitySpec::Gaussian { sigma } => check_positive("sigma", *sigma),
            _ => Ok(()),
        }
    }
}

/// Random stream of species `i` for positions (`offset = 0`) or velocities.
fn stream(seed: u64, species: usize, offset: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * species as u64 + offset);
    rng
}

/// Initial positions of every species, without velocities.
pub fn initial_positions(cfg: &ExperimentConfig) -> Result<MultiSpeciesState> {
    let species = cfg
        .species
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream(cfg.seed, i, 0);
            SpeciesEnsemble::uniform(cfg.dim, s.sampler.sample(cfg.dim, s.count, s.sampling, &mut rng), None)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiSpeciesState::new(0.0, species)
}

/// Initial state; velocities are attached when the dynamics carry them.
pub fn initial_state(cfg: &ExperimentConfig, kernels: &KernelMatrix) -> Result<MultiSpeciesState> {
    let positions = initial_positions(cfg)?;
    if !cfg.dynamics.has_velocities() {
        return Ok(positions);
    }
    let needs_field = cfg.species.iter().any(|s| s.velocity == VelocitySpec::WellPrepared);
    let fields = if needs_field { Some(species_fields(kernels, &positions, SelfPairPolicy::Skip)?) } else { None };
    let d = cfg.dim;
    let velocities = cfg
        .species
        .iter()
        .enumerate()
        .map(|(i, s)| match &s.velocity {
            VelocitySpec::Zero => vec![0.0; s.count * d],
            VelocitySpec::Constant { value } => value.iter().copied().cycle().take(s.count * d).collect(),
            VelocitySpec::WellPrepared => fields.as_ref().unwrap()[i].clone(),
            VelocitySpec::Gaussian { sigma } => {
                let mut rng = stream(cfg.seed, i, 1);
                (0..s.count * d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
            }
        })
        .collect();
    positions.with_velocities(velocities)
}
