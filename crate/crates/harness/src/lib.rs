//! Configuration, orchestration and file output for multi-species swarm
//! experiments built on `swarmlimit-core`.

pub mod benchmarks;
pub mod compare;
pub mod config;
pub mod error;
pub mod manifest;
pub mod run;
pub mod sampler;
pub mod sweep;

pub use config::{ConfigError, ExperimentConfig, SweepConfig};
pub use error::HarnessError;

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "SWARMLIMIT_WORKERS";

/// Worker cap from the environment, if set to a positive integer.
pub fn worker_cap() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}
