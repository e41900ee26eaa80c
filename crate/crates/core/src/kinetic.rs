//! Kinetic measure solutions as push-forwards along the damped characteristics
//! `dX/dt = V`, `dV/dt = (-V + E(t, X))/ε`, and their Picard construction.

use rayon::prelude::*;

use crate::ensemble::{relax, support_radius, MultiSpeciesState, SpeciesEnsemble};
use crate::error::{Error, Result};
use crate::kernels::{check_compatible, field_at, kernel_bounds, KernelBounds, KernelMatrix, SelfPairPolicy};
use crate::transport::{measures_of, w1_multispecies, EmpiricalMeasure, W1Method};

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: v.len() });
        }
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return Err(Error::InvalidState("phase point has non-finite coordinates".into()));
        }
        Ok(Self { x, v })
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.v.iter().zip(&other.v))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Time-dependent force field acting on each species.
pub trait FieldFn: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, species: usize, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Declared bound `|E(t, x)| ≤ C (1 + |x|)`, when known.
    fn growth_bound(&self) -> Option<f64> {
        None
    }

    /// Declared Lipschitz constant in `x`, when known.
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }
}

/// The same constant vector for every species and time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    pub value: Vec<f64>,
}

impl FieldFn for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eval(&self, _species: usize, _t: f64, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.value);
        Ok(())
    }

    fn growth_bound(&self) -> Option<f64> {
        Some(self.value.iter().map(|c| c * c).sum::<f64>().sqrt())
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Field generated by a fixed configuration, constant in time.
pub struct MeasureField<'a> {
    pub kernels: &'a KernelMatrix,
    pub state: &'a MultiSpeciesState,
}

impl FieldFn for MeasureField<'_> {
    fn dim(&self) -> usize {
        self.kernels.dim()
    }

    fn eval(&self, species: usize, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        field_at(self.kernels, self.state, species, x, SelfPairPolicy::Skip, out)
    }
}

/// Field generated by a sampled trajectory, piecewise constant in time: at
/// `t` the latest state with time `≤ t` is used.
pub struct TrajectoryField<'a> {
    pub kernels: &'a KernelMatrix,
    pub states: &'a [MultiSpeciesState],
}

impl FieldFn for TrajectoryField<'_> {
    fn dim(&self) -> usize {
        self.kernels.dim()
    }

    fn eval(&self, species: usize, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let slack = 1e-12 * (1.0 + t.abs());
        let idx = self
            .states
            .partition_point(|s| s.time() <= t + slack)
            .saturating_sub(1);
        field_at(self.kernels, &self.states[idx], species, x, SelfPairPolicy::Skip, out)
    }
}

/// Adapter for closures `(species, t, x, out)`.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> FieldFn for FnField<F>
where
    F: Fn(usize, f64, &[f64], &mut [f64]) -> Result<()> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, species: usize, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(species, t, x, out)
    }
}

/// Grid `t0, t0 + dt, ...` ending exactly at `t1` with a shortened last step.
pub fn time_grid(t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(t1 >= t0) {
        return Err(Error::InvalidParameter(format!("time interval [{t0}, {t1}] is empty")));
    }
    let steps = ((t1 - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut times: Vec<f64> = (0..steps).map(|n| t0 + n as f64 * dt).collect();
    times.push(t1);
    Ok(times)
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")))
    }
}

fn field_failure(e: Error) -> Error {
    match e {
        Error::FieldEvaluationFailure(_) => e,
        other => Error::FieldEvaluationFailure(other.to_string()),
    }
}

/// Characteristic flow from time `t_start` over a duration `t`, exp-euler steps of `dt`.
pub fn flow_map_from(
    field: &dyn FieldFn,
    species: usize,
    eps: f64,
    p0: &PhasePoint,
    t_start: f64,
    t: f64,
    dt: f64,
) -> Result<PhasePoint> {
    check_epsilon(eps)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("flow time must be nonnegative, got {t}")));
    }
    if p0.x.len() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: p0.x.len() });
    }
    let times = time_grid(t_start, t_start + t, dt)?;
    let mut p = p0.clone();
    let mut e = vec![0.0; p.x.len()];
    for w in times.windows(2) {
        field.eval(species, w[0], &p.x, &mut e).map_err(field_failure)?;
        let h = w[1] - w[0];
        for c in 0..p.x.len() {
            (p.x[c], p.v[c]) = relax(p.x[c], p.v[c], e[c], h, eps);
        }
    }
    Ok(p)
}

/// `T^t_E(P0)` starting at time zero.
pub fn flow_map(field: &dyn FieldFn, species: usize, eps: f64, p0: &PhasePoint, t: f64, dt: f64) -> Result<PhasePoint> {
    flow_map_from(field, species, eps, p0, 0.0, t, dt)
}

/// Push-forward of a phase-space measure of species `species`; weights unchanged.
pub fn pushforward(
    field: &dyn FieldFn,
    species: usize,
    eps: f64,
    f0: &EmpiricalMeasure,
    t: f64,
    dt: f64,
) -> Result<EmpiricalMeasure> {
    let d = field.dim();
    if f0.dim() != 2 * d {
        return Err(Error::DimensionMismatch { expected: 2 * d, got: f0.dim() });
    }
    let mut points = vec![0.0; f0.points().len()];
    points
        .par_chunks_mut(2 * d)
        .zip(f0.points().par_chunks(2 * d))
        .try_for_each(|(out, p)| -> Result<()> {
            let p0 = PhasePoint { x: p[..d].to_vec(), v: p[d..].to_vec() };
            let p1 = flow_map(field, species, eps, &p0, t, dt)?;
            out[..d].copy_from_slice(&p1.x);
            out[d..].copy_from_slice(&p1.v);
            Ok(())
        })?;
    EmpiricalMeasure::new(f0.dim(), points, f0.weights().to_vec())
}

/// Phase-space state assembled from per-species measures on `R^{2d}`.
pub fn state_from_phase_measures(time: f64, measures: &[EmpiricalMeasure]) -> Result<MultiSpeciesState> {
    let species = measures
        .iter()
        .map(|m| {
            if m.dim() % 2 != 0 {
                return Err(Error::DimensionMismatch { expected: m.dim() + 1, got: m.dim() });
            }
            let d = m.dim() / 2;
            let mut x = Vec::with_capacity(d * m.len());
            let mut v = Vec::with_capacity(d * m.len());
            for k in 0..m.len() {
                x.extend_from_slice(&m.point(k)[..d]);
                v.extend_from_slice(&m.point(k)[d..]);
            }
            SpeciesEnsemble::new(d, x, Some(v), m.weights().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    MultiSpeciesState::new(time, species)
}

/// Pushes every particle of `start` along `field` over the grid `times`,
/// returning the state at each grid time.
pub fn push_states(
    field: &dyn FieldFn,
    eps: f64,
    start: &MultiSpeciesState,
    times: &[f64],
) -> Result<Vec<MultiSpeciesState>> {
    check_epsilon(eps)?;
    if !start.has_velocities() {
        return Err(Error::MissingVelocities);
    }
    let d = start.dim();
    let mut states = vec![start.with_time(times[0])];
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let current = states.last().unwrap();
        let mut next = Vec::with_capacity(current.species().len());
        for (i, s) in current.species().iter().enumerate() {
            let mut x = s.positions().to_vec();
            let mut v = s.velocities().unwrap().to_vec();
            x.par_chunks_mut(d)
                .zip(v.par_chunks_mut(d))
                .try_for_each(|(x, v)| -> Result<()> {
                    let mut e = vec![0.0; d];
                    field.eval(i, t, x, &mut e).map_err(field_failure)?;
                    for c in 0..d {
                        (x[c], v[c]) = relax(x[c], v[c], e[c], h, eps);
                    }
                    Ok(())
                })?;
            next.push(s.with_coordinates(x, Some(v))?);
        }
        states.push(MultiSpeciesState::new(w[1], next)?);
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    /// Stopping threshold on the sup over sample times of the iterate distance.
    pub tol: f64,
    pub max_iter: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Length of the restart windows; the iteration restarts from the converged
    /// state at each window end.
    pub window: f64,
    /// Number of sample times per window for the sup-distance.
    pub samples: usize,
    pub metric: W1Method,
}

impl PicardConfig {
    pub fn new(horizon: f64, dt: f64) -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            dt,
            horizon,
            window: horizon,
            samples: 32,
            metric: W1Method::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be nonnegative, got {}", self.horizon));
        }
        if !(self.window > 0.0) {
            return bad(format!("window must be positive, got {}", self.window));
        }
        if self.samples < 2 {
            return bad("at least two sample times are needed".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardWindow {
    pub start: f64,
    pub end: f64,
    /// `d_k = sup_t 𝒲1(f^(k+1)(t), f^(k)(t))` for each iteration.
    pub distances: Vec<f64>,
    /// Support radius over the window, for bound constants.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardSolution {
    pub states: Vec<MultiSpeciesState>,
    pub windows: Vec<PicardWindow>,
}

impl PicardSolution {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(MultiSpeciesState::time).collect()
    }

    /// Distance sequences of all windows, concatenated.
    pub fn distances(&self) -> Vec<f64> {
        self.windows.iter().flat_map(|w| w.distances.iter().copied()).collect()
    }
}

/// Indices of `samples` evenly spread grid points in `0..=last`.
fn sample_indices(last: usize, samples: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples)
        .map(|s| ((s as f64) * last as f64 / (samples - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// `𝒲1` between two phase-space states.
pub fn phase_distance(a: &MultiSpeciesState, b: &MultiSpeciesState, metric: W1Method) -> Result<f64> {
    w1_multispecies(&measures_of(a, true)?, &measures_of(b, true)?, metric)
}

fn sup_distance(a: &[MultiSpeciesState], b: &[MultiSpeciesState], idx: &[usize], metric: W1Method) -> Result<f64> {
    let d = idx
        .par_iter()
        .map(|&k| phase_distance(&a[k], &b[k], metric))
        .collect::<Result<Vec<f64>>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// Fixed point of `Γ[f](t) = T^t_{E[f]} # f0`, restarted on windows.
pub fn picard_solve(
    f0: &MultiSpeciesState,
    kernels: &KernelMatrix,
    eps: f64,
    cfg: &PicardConfig,
) -> Result<PicardSolution> {
    cfg.validate()?;
    check_epsilon(eps)?;
    check_compatible(kernels, f0)?;
    if !kernels.is_smooth() {
        let n = kernels.species();
        let (i, j) = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| kernels.get(i, j).is_singular())
            .unwrap();
        return Err(Error::SingularEntry { i, j });
    }
    if !f0.has_velocities() {
        return Err(Error::MissingVelocities);
    }
    let t_end = f0.time() + cfg.horizon;
    let mut states = vec![f0.clone()];
    let mut windows = Vec::new();
    let mut start = f0.time();
    while start < t_end - 1e-12 * (1.0 + t_end.abs()) {
        let end = (start + cfg.window).min(t_end);
        let end = if t_end - end < 1e-9 * cfg.window { t_end } else { end };
        let initial = states.last().unwrap().clone();
        let times = time_grid(start, end, cfg.dt)?;
        let idx = sample_indices(times.len() - 1, cfg.samples);
        let frozen = MeasureField { kernels, state: &initial };
        let mut current = push_states(&frozen, eps, &initial, &times)?;
        let mut distances = Vec::new();
        loop {
            let next = {
                let field = TrajectoryField { kernels, states: &current };
                push_states(&field, eps, &initial, &times)?
            };
            let d = sup_distance(&next, &current, &idx, cfg.metric)?;
            distances.push(d);
            current = next;
            log::debug!("picard window [{start}, {end}] iteration {}: {d:.3e}", distances.len());
            if d <= cfg.tol {
                break;
            }
            if distances.len() >= cfg.max_iter {
                return Err(Error::NoConvergence { distances });
            }
        }
        let radius = current.iter().map(support_radius).fold(0.0, f64::max);
        windows.push(PicardWindow { start, end, distances, radius });
        states.extend(current.into_iter().skip(1));
        start = end;
    }
    Ok(PicardSolution { states, windows })
}

/// Contraction factor `C(T) Υ` of the Picard map over a window of length `t`,
/// with `C(T) = (e^{C2 T} - 1)/(ε C2)` and `C2 = max(0, 1 - 1/ε) + Υ/ε`.
pub fn contraction_factor(bounds: &KernelBounds, eps: f64, t: f64) -> f64 {
    let c2 = (1.0 - 1.0 / eps).max(0.0) + bounds.upsilon / eps;
    let c_t = if c2 > 0.0 { (c2 * t).exp_m1() / (eps * c2) } else { t / eps };
    c_t * bounds.upsilon
}

/// Contraction factor of a solved window, with bounds on its support radius.
pub fn window_contraction_factor(kernels: &KernelMatrix, window: &PicardWindow, eps: f64) -> Result<f64> {
    let bounds = kernel_bounds(kernels, window.radius.max(f64::MIN_POSITIVE))?;
    Ok(contraction_factor(&bounds, eps, window.end - window.start))
}

/// `r(t) = 𝒲1(f(t), g(t)) / 𝒲1(f0, g0)` on the solution grid.
pub fn stability_ratio(
    f0: &MultiSpeciesState,
    g0: &MultiSpeciesState,
    kernels: &KernelMatrix,
    eps: f64,
    cfg: &PicardConfig,
) -> Result<Vec<(f64, f64)>> {
    let initial = phase_distance(f0, g0, cfg.metric)?;
    if initial < 1e-14 {
        return Err(Error::DegenerateInitialDistance(initial));
    }
    let (f, g) = rayon::join(
        || picard_solve(f0, kernels, eps, cfg),
        || picard_solve(g0, kernels, eps, cfg),
    );
    let (f, g) = (f?, g?);
    f.states
        .par_iter()
        .zip(&g.states)
        .map(|(a, b)| Ok((a.time(), phase_distance(a, b, cfg.metric)? / initial)))
        .collect()
}
