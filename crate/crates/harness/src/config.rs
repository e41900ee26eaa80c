//! Experiment and sweep configuration, read from TOML or its JSON mirror.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swarmlimit_core::ensemble::Scheme;
use swarmlimit_core::kernels::{KernelMatrix, KernelSpec};
use swarmlimit_core::transport::W1Method;

use crate::sampler::{SamplerSpec, SamplingMode, VelocitySpec};

/// A configuration problem, located by the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub count: usize,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub velocity: VelocitySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    FirstOrder,
    SecondOrder {
        epsilon: f64,
    },
    KineticPicard {
        epsilon: f64,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        /// Restart window; the whole horizon when absent.
        #[serde(default)]
        window: Option<f64>,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        metric: W1Method,
    },
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    50
}

fn default_samples() -> usize {
    32
}

impl Dynamics {
    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Dynamics::FirstOrder => None,
            Dynamics::SecondOrder { epsilon } | Dynamics::KineticPicard { epsilon, .. } => Some(epsilon),
        }
    }

    pub fn has_velocities(&self) -> bool {
        !matches!(self, Dynamics::FirstOrder)
    }

    pub fn with_epsilon(self, eps: f64) -> Self {
        match self {
            Dynamics::FirstOrder => self,
            Dynamics::SecondOrder { .. } => Dynamics::SecondOrder { epsilon: eps },
            Dynamics::KineticPicard { tol, max_iter, window, samples, metric, .. } => {
                Dynamics::KineticPicard { epsilon: eps, tol, max_iter, window, samples, metric }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    pub scheme: Scheme,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// `I_i` per species.
    Alignment,
    FreeEnergy,
    /// Phase-space second moment per species.
    SecondMoment,
    SupportRadius,
}

impl Channel {
    pub fn needs_velocities(&self) -> bool {
        matches!(self, Channel::Alignment | Channel::SecondMoment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSelection {
    #[serde(default)]
    pub channels: Vec<Channel>,
    /// Steps between diagnostics samples.
    #[serde(default = "default_every")]
    pub every: usize,
    /// Steps between snapshots; 0 keeps only the first and last.
    #[serde(default)]
    pub snapshot_every: usize,
}

fn default_every() -> usize {
    1
}

impl Default for DiagnosticsSelection {
    fn default() -> Self {
        Self { channels: Vec::new(), every: 1, snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub species: Vec<SpeciesConfig>,
    /// Row `i` lists `K_i1 .. K_iN`.
    pub kernels: Vec<Vec<KernelSpec>>,
    pub dynamics: Dynamics,
    pub integrator: IntegratorSettings,
    pub horizon: f64,
    #[serde(default)]
    pub diagnostics: DiagnosticsSelection,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

/// Parses TOML, or JSON when `json` is set, reporting the failing field path.
fn parse<T: DeserializeOwned>(text: &str, json: bool) -> Result<T, ConfigError> {
    if json {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| ConfigError::new(e.path().to_string(), e.inner().to_string()))
    } else {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let msg = e.inner().message().to_string();
            ConfigError::new(e.path().to_string(), msg)
        })
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse(text, false)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse(text, true)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        if is_json(path) {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes to JSON")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serializes to JSON");
        hex(&Sha256::digest(canonical))
    }

    pub fn kernel_matrix(&self) -> Result<KernelMatrix, ConfigError> {
        KernelMatrix::new(self.dim, self.kernels.clone()).map_err(|e| ConfigError::new("kernels", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dim == 0 {
            return Err(ConfigError::new("dim", "must be at least 1"));
        }
        if self.species.is_empty() {
            return Err(ConfigError::new("species", "at least one species is required"));
        }
        let n = self.species.len();
        if self.kernels.len() != n {
            return Err(ConfigError::new("kernels", format!("{} rows for {n} species", self.kernels.len())));
        }
        for (i, row) in self.kernels.iter().enumerate() {
            if row.len() != n {
                return Err(ConfigError::new(format!("kernels[{i}]"), format!("{} entries for {n} species", row.len())));
            }
            for (j, spec) in row.iter().enumerate() {
                spec.validate(self.dim).map_err(|e| ConfigError::new(format!("kernels[{i}][{j}]"), e.to_string()))?;
            }
        }
        self.kernel_matrix()?;
        for (i, s) in self.species.iter().enumerate() {
            if s.count == 0 {
                return Err(ConfigError::new(format!("species[{i}].count"), "must be at least 1"));
            }
            s.sampler.validate(self.dim).map_err(|m| ConfigError::new(format!("species[{i}].sampler"), m))?;
            s.velocity.validate(self.dim).map_err(|m| ConfigError::new(format!("species[{i}].velocity"), m))?;
        }
        positive("integrator.dt", self.integrator.dt)?;
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(ConfigError::new("horizon", format!("must be nonnegative, got {}", self.horizon)));
        }
        let scheme = self.integrator.scheme;
        match self.dynamics {
            Dynamics::FirstOrder => {
                if matches!(scheme, Scheme::ExpEuler | Scheme::ExpStrang) {
                    return Err(ConfigError::new(
                        "integrator.scheme",
                        format!("{} needs inertial dynamics", scheme.name()),
                    ));
                }
                if let Some(c) = self.diagnostics.channels.iter().find(|c| c.needs_velocities()) {
                    return Err(ConfigError::new(
                        "diagnostics.channels",
                        format!("{c:?} needs velocities, which first-order dynamics do not carry"),
                    ));
                }
            }
            Dynamics::SecondOrder { epsilon } => positive("dynamics.epsilon", epsilon)?,
            Dynamics::KineticPicard { epsilon, tol, max_iter, window, samples, .. } => {
                positive("dynamics.epsilon", epsilon)?;
                positive("dynamics.tol", tol)?;
                if max_iter == 0 {
                    return Err(ConfigError::new("dynamics.max_iter", "must be at least 1"));
                }
                if let Some(w) = window {
                    positive("dynamics.window", w)?;
                }
                if samples < 2 {
                    return Err(ConfigError::new("dynamics.samples", "must be at least 2"));
                }
                if self.kernels.iter().flatten().any(KernelSpec::is_singular) {
                    return Err(ConfigError::new("kernels", "the Picard iteration needs smooth kernels"));
                }
            }
        }
        if self.diagnostics.every == 0 {
            return Err(ConfigError::new("diagnostics.every", "must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Epsilon,
    /// Regularization scale of singular diagonal kernels.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// Damped free motion; zero kernels only.
    Analytic,
    MacroParticle {
        #[serde(default = "default_reference_scheme")]
        scheme: Scheme,
    },
    #[serde(rename = "grid_1d")]
    Grid1d {
        lower: f64,
        upper: f64,
        cells: usize,
        /// Grid steps per particle step.
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
}

fn default_reference_scheme() -> Scheme {
    Scheme::Euler
}

fn default_substeps() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Metric {
    W1Exact,
    #[serde(rename = "w1_1d")]
    W1OneD,
    W1Sliced {
        #[serde(rename = "L")]
        directions: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl Metric {
    pub fn method(&self) -> W1Method {
        match *self {
            Metric::W1Exact => W1Method::default(),
            Metric::W1OneD => W1Method::OneD,
            Metric::W1Sliced { directions, seed } => W1Method::Sliced { directions, seed },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub reference: Reference,
    pub metric: Metric,
    /// Sampled times per run, endpoints included.
    #[serde(default = "default_sweep_samples")]
    pub samples: usize,
    /// Replace each run's metric by `c · param` (fitter check).
    #[serde(default)]
    pub synthetic: Option<f64>,
}

fn default_sweep_samples() -> usize {
    11
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse(text, false)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse(text, true)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        if is_json(path) {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("sweep configuration serializes")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.base.validate().map_err(|e| ConfigError::new(format!("base.{}", e.path), e.message))?;
        if self.values.len() < 3 {
            return Err(ConfigError::new("values", format!("at least 3 values are needed, got {}", self.values.len())));
        }
        for (k, v) in self.values.iter().enumerate() {
            positive(&format!("values[{k}]"), *v)?;
        }
        if self.values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ConfigError::new("values", "must be strictly decreasing"));
        }
        if self.samples < 2 {
            return Err(ConfigError::new("samples", "must be at least 2"));
        }
        if !matches!(self.base.dynamics, Dynamics::SecondOrder { .. }) {
            return Err(ConfigError::new("base.dynamics", "sweeps run second-order dynamics"));
        }
        match self.reference {
            Reference::Analytic => {
                if self.base.kernels.iter().flatten().any(|k| !k.is_zero()) {
                    return Err(ConfigError::new("reference", "the analytic reference needs zero kernels"));
                }
            }
            Reference::MacroParticle { scheme } => {
                if matches!(scheme, Scheme::ExpEuler | Scheme::ExpStrang) {
                    return Err(ConfigError::new("reference.scheme", "first-order reference needs euler or rk4"));
                }
            }
            Reference::Grid1d { lower, upper, cells, substeps } => {
                if self.base.dim != 1 {
                    return Err(ConfigError::new("reference", "grid_1d needs dim = 1"));
                }
                if !(lower.is_finite() && upper.is_finite() && upper > lower) {
                    return Err(ConfigError::new("reference.upper", "must exceed reference.lower"));
                }
                if cells < 2 {
                    return Err(ConfigError::new("reference.cells", "must be at least 2"));
                }
                if substeps == 0 {
                    return Err(ConfigError::new("reference.substeps", "must be at least 1"));
                }
            }
        }
        if let Metric::W1Sliced { directions: 0, .. } = self.metric {
            return Err(ConfigError::new("metric.L", "must be at least 1"));
        }
        if self.metric == Metric::W1OneD && self.base.dim != 1 {
            return Err(ConfigError::new("metric", "w1_1d needs dim = 1"));
        }
        if self.parameter == SweepParameter::Delta
            && !(0..self.base.species.len()).any(|i| self.base.kernels[i][i].is_singular())
        {
            return Err(ConfigError::new("parameter", "delta sweeps need a singular diagonal kernel"));
        }
        Ok(())
    }
}

/// Whether a configuration document describes a sweep (it has a `base` table).
pub fn looks_like_sweep(path: &Path) -> Result<bool, ConfigError> {
    let text = read(path)?;
    Ok(if is_json(path) {
        serde_json::from_str::<serde_json::Value>(&text)
            .map_err(|e| ConfigError::new("", e.to_string()))?
            .get("base")
            .is_some()
    } else {
        toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::new("", e.message().to_string()))?.contains_key("base")
    })
}
