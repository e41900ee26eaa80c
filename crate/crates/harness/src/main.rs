use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use swarmlimit::config::looks_like_sweep;
use swarmlimit::manifest::RunStatus;
use swarmlimit::run::run;
use swarmlimit::sweep::run_sweep;
use swarmlimit::{with_workers, worker_cap, ExperimentConfig, HarnessError, SweepConfig};
use swarmlimit_core::ensemble::read_snapshot;
use swarmlimit_core::transport::{measures_of, w1_multispecies, W1Method, DEFAULT_EXACT_CAP};

#[derive(Parser)]
#[command(name = "swarmlimit", version, about = "Multi-species swarm simulations and small-inertia sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    #[value(name = "1d")]
    OneD,
    Sliced,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    Simulate { config: PathBuf },
    /// Run a parameter sweep.
    Sweep { config: PathBuf },
    /// W1 distance between the position marginals of two snapshots.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        method: Method,
        /// Number of sliced directions.
        #[arg(long = "L", default_value_t = 64)]
        directions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check an experiment or sweep configuration.
    ValidateConfig { path: PathBuf },
}

fn snapshot(path: &Path) -> Result<swarmlimit_core::ensemble::MultiSpeciesState, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(read_snapshot(file, 0.0)?)
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Simulate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let manifest = run(&cfg)?;
            println!("{} files written to {}", manifest.files.len(), cfg.output.display());
        }
        Command::Sweep { config } => {
            let cfg = SweepConfig::load(&config)?;
            let (outcome, manifest) = run_sweep(&cfg)?;
            for (p, w) in outcome.final_metric() {
                println!("{p:.16e} {w:.16e}");
            }
            match outcome.slope {
                Some(s) => println!("slope {s:.16e}"),
                None => println!("slope undefined (degenerate metrics)"),
            }
            if let RunStatus::Failed { message } = manifest.status {
                eprintln!("sweep incomplete: {message}");
            }
        }
        Command::Metrics { a, b, method, directions, seed } => {
            let (sa, sb) = (snapshot(&a)?, snapshot(&b)?);
            let method = match method {
                Method::Exact => W1Method::Exact { cap: DEFAULT_EXACT_CAP },
                Method::OneD => W1Method::OneD,
                Method::Sliced => W1Method::Sliced { directions, seed },
            };
            let d = w1_multispecies(&measures_of(&sa, false)?, &measures_of(&sb, false)?, method)?;
            println!("{d:.16e}");
        }
        Command::ValidateConfig { path } => {
            if looks_like_sweep(&path)? {
                SweepConfig::load(&path)?;
                println!("valid sweep configuration");
            } else {
                ExperimentConfig::load(&path)?;
                println!("valid experiment configuration");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match worker_cap() {
        Some(n) => with_workers(n, || execute(cli.command)),
        None => execute(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
