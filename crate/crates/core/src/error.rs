use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("singular kernel evaluated at a coincident point")]
    SingularEvaluation,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel entry ({i}, {j}) is singular; regularize it first")]
    SingularEntry { i: usize, j: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("scheme `{0}` cannot be used for this system")]
    SchemeMismatch(String),

    #[error("velocities are required for second-order dynamics")]
    MissingVelocities,

    #[error("combined support size {size} exceeds the exact solver cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("species count mismatch: {left} vs {right}")]
    SpeciesCountMismatch { left: usize, right: usize },

    #[error("grid does not cover the mollified support: {0}")]
    GridTooSmall(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid quadrature diverges for Riesz exponent alpha = {alpha} in d = 1")]
    QuadratureDivergence { alpha: f64 },

    #[error("time step {dt} exceeds the CFL limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("Picard iteration did not converge; distances {distances:?}")]
    NoConvergence { distances: Vec<f64> },

    #[error("initial distance {0} is too small to form a stability ratio")]
    DegenerateInitialDistance(f64),

    #[error("field evaluation failed: {0}")]
    FieldEvaluationFailure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("snapshot format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
