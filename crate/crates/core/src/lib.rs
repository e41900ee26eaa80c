//! Numerical core for multi-species swarming models with small inertia.
//!
//! The crate covers interaction kernels and the nonlocal field they generate,
//! particle integrators for first- and second-order dynamics, kinetic
//! push-forwards along damped characteristics with a Picard solver,
//! macroscopic reference solvers, Wasserstein metrics and energy diagnostics.

pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod kernels;
pub mod quadrature;
pub mod kinetic;
pub mod macroscopic;
pub mod transport;

pub use error::{Error, Result};
