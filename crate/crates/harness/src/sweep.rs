//! ε- and δ-sweeps against a fixed reference, with a log-log rate fit.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use swarmlimit_core::diagnostics::power_law_fit;
use swarmlimit_core::Result;

use crate::compare::{compare, ComparisonRow};
use crate::config::{Dynamics, SweepConfig, SweepParameter};
use crate::error::HarnessError;
use crate::manifest::{OutputDir, RunManifest, RunStatus};

/// Final metrics closer than this relative spread count as identical.
const FLAT_SPREAD: f64 = 1e-9;

/// Rows of one parameter value, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: f64,
    pub rows: Vec<ComparisonRow>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub parameter: SweepParameter,
    pub species: usize,
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `ln w1(T)` against `ln param`.
    pub slope: Option<f64>,
    /// Set when the slope is undefined (identical, zero or missing metrics).
    pub degenerate: bool,
}

impl SweepOutcome {
    /// Metric at the last sampled time of each completed point.
    pub fn final_metric(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.rows.last().filter(|_| p.error.is_none()).map(|r| (p.param, r.w1)))
            .collect()
    }

    pub fn failed(&self) -> Option<&str> {
        self.points.iter().find_map(|p| p.error.as_deref())
    }

    /// `param,t,w1,I_1..I_N,E_K`, 17 significant digits; `E_K` empty without a grid reference.
    pub fn table_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["param".to_string(), "t".into(), "w1".into()];
        header.extend((1..=self.species).map(|i| format!("I_{i}")));
        header.push("E_K".into());
        w.write_record(&header).expect("in-memory write");
        let f = |x: f64| format!("{x:.16e}");
        for p in &self.points {
            for r in &p.rows {
                let mut row = vec![f(p.param), f(r.t), f(r.w1)];
                row.extend(r.alignment.iter().map(|v| f(*v)));
                row.push(r.modulated.map(|m| f(m.total)).unwrap_or_default());
                w.write_record(&row).expect("in-memory write");
            }
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Slope of the final metrics, or `None` when it is undefined.
pub fn fit_rate(finals: &[(f64, f64)]) -> Option<f64> {
    if finals.len() < 2 {
        return None;
    }
    let y: Vec<f64> = finals.iter().map(|p| p.1).collect();
    let (lo, hi) = y.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(lo > 0.0) || hi - lo <= FLAT_SPREAD * hi {
        return None;
    }
    let x: Vec<f64> = finals.iter().map(|p| p.0).collect();
    power_law_fit(&x, &y).map(|f| f.slope)
}

fn run_point(cfg: &SweepConfig, param: f64) -> Result<Vec<ComparisonRow>> {
    if let Some(c) = cfg.synthetic {
        let n = cfg.base.species.len();
        return Ok(vec![ComparisonRow {
            t: cfg.base.horizon,
            w1: c * param,
            alignment: vec![f64::NAN; n],
            second_moment: vec![f64::NAN; n],
            modulated: None,
        }]);
    }
    let mut base = cfg.base.clone();
    let macro_kernels = base.kernel_matrix().map_err(|e| swarmlimit_core::Error::InvalidKernel(e.to_string()))?;
    let kinetic = match cfg.parameter {
        SweepParameter::Epsilon => {
            base.dynamics = Dynamics::SecondOrder { epsilon: param };
            macro_kernels.clone()
        }
        SweepParameter::Delta => macro_kernels.regularize_diagonal(param)?,
    };
    compare(&base, &kinetic, &macro_kernels, cfg.reference, cfg.metric, cfg.samples)
}

/// Runs every parameter value (concurrently within the current worker pool).
pub fn sweep(cfg: &SweepConfig) -> std::result::Result<SweepOutcome, HarnessError> {
    cfg.validate()?;
    let points: Vec<SweepPoint> = cfg
        .values
        .par_iter()
        .map(|&param| match run_point(cfg, param) {
            Ok(rows) => SweepPoint { param, rows, error: None },
            Err(e) => SweepPoint { param, rows: Vec::new(), error: Some(e.to_string()) },
        })
        .collect();
    let mut outcome = SweepOutcome {
        parameter: cfg.parameter,
        species: cfg.base.species.len(),
        points,
        slope: None,
        degenerate: true,
    };
    if outcome.failed().is_none() {
        outcome.slope = fit_rate(&outcome.final_metric());
        outcome.degenerate = outcome.slope.is_none();
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    parameter: SweepParameter,
    values: &'a [f64],
    final_w1: Vec<f64>,
    slope: Option<f64>,
    degenerate: bool,
    failed: Option<&'a str>,
}

/// Sweep written to `cfg.base.output`: `sweep.csv`, `sweep.json` and the manifest.
pub fn run_sweep(cfg: &SweepConfig) -> std::result::Result<(SweepOutcome, RunManifest), HarnessError> {
    let started = Instant::now();
    let outcome = sweep(cfg)?;
    let mut out = OutputDir::create(&cfg.base.output)?;
    out.write("sweep_config.json", serde_json::to_string_pretty(cfg).expect("config serializes").as_bytes())?;
    out.write("sweep.csv", &outcome.table_csv())?;
    let summary = SweepSummary {
        parameter: cfg.parameter,
        values: &cfg.values,
        final_w1: outcome.final_metric().iter().map(|p| p.1).collect(),
        slope: outcome.slope,
        degenerate: outcome.degenerate,
        failed: outcome.failed(),
    };
    out.write("sweep.json", serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes())?;
    let status = match outcome.failed() {
        None => RunStatus::Ok,
        Some(m) => RunStatus::Failed { message: m.to_string() },
    };
    let failed = outcome.failed().map(str::to_string);
    let manifest = out.finish(cfg.hash(), cfg.base.seed, started.elapsed().as_secs_f64(), status)?;
    match failed {
        None => Ok((outcome, manifest)),
        Some(m) => Err(HarnessError::Numerical(swarmlimit_core::Error::FieldEvaluationFailure(m))),
    }
}
