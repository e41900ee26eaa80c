//! Particle ensembles and time integrators for the first-order system
//! `dz/dt = E_i(z)` and the inertial system `dz/dt = u`, `ε du/dt = -u + E_i(z)`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_compatible, species_fields, KernelMatrix, SelfPairPolicy};

/// Tolerance on the total mass of a weight vector.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidWeights(format!("weights must be positive, found {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::InvalidWeights(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Particles of one species. Coordinates are stored row-major, `d` per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesEnsemble {
    dim: usize,
    positions: Vec<f64>,
    velocities: Option<Vec<f64>>,
    weights: Vec<f64>,
}

impl SpeciesEnsemble {
    pub fn new(
        dim: usize,
        positions: Vec<f64>,
        velocities: Option<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidState("dimension must be at least 1".into()));
        }
        if positions.len() != dim * weights.len() {
            return Err(Error::InvalidState(format!(
                "{} position coordinates for {} particles in d = {dim}",
                positions.len(),
                weights.len()
            )));
        }
        if let Some(v) = &velocities {
            if v.len() != positions.len() {
                return Err(Error::InvalidState("velocity array does not match positions".into()));
            }
        }
        let all_finite = positions
            .iter()
            .chain(velocities.iter().flatten())
            .all(|c| c.is_finite());
        if !all_finite {
            return Err(Error::InvalidState("non-finite coordinate".into()));
        }
        check_weights(&weights)?;
        Ok(Self { dim, positions, velocities, weights })
    }

    /// Equal weights `1/M`.
    pub fn uniform(dim: usize, positions: Vec<f64>, velocities: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 || !positions.len().is_multiple_of(dim) || positions.is_empty() {
            return Err(Error::InvalidState(format!(
                "{} coordinates cannot form particles in d = {dim}",
                positions.len()
            )));
        }
        let m = positions.len() / dim;
        Self::new(dim, positions, velocities, vec![1.0 / m as f64; m])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> Option<&[f64]> {
        self.velocities.as_deref()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn velocity(&self, k: usize) -> Option<&[f64]> {
        self.velocities.as_ref().map(|v| &v[k * self.dim..(k + 1) * self.dim])
    }

    /// Same particles with new coordinates; weights carried over unchanged.
    pub fn with_coordinates(&self, positions: Vec<f64>, velocities: Option<Vec<f64>>) -> Result<Self> {
        if positions.len() != self.positions.len() {
            return Err(Error::InvalidState("particle count changed".into()));
        }
        Self::new(self.dim, positions, velocities, self.weights.clone())
    }

    pub fn without_velocities(&self) -> Self {
        Self { velocities: None, ..self.clone() }
    }
}

/// Ensembles of all species at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSpeciesState {
    time: f64,
    dim: usize,
    species: Vec<SpeciesEnsemble>,
}

impl MultiSpeciesState {
    pub fn new(time: f64, species: Vec<SpeciesEnsemble>) -> Result<Self> {
        let dim = species.first().map_or(0, SpeciesEnsemble::dim);
        if let Some(s) = species.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: s.dim() });
        }
        let with_v = species.iter().filter(|s| s.velocities.is_some()).count();
        if with_v != 0 && with_v != species.len() {
            return Err(Error::InvalidState(
                "velocities must be present for all species or none".into(),
            ));
        }
        if !time.is_finite() {
            return Err(Error::InvalidState(format!("time must be finite, got {time}")));
        }
        Ok(Self { time, dim, species })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn species(&self) -> &[SpeciesEnsemble] {
        &self.species
    }

    pub fn has_velocities(&self) -> bool {
        self.species.first().is_some_and(|s| s.velocities.is_some())
    }

    pub fn with_time(&self, time: f64) -> Self {
        Self { time, ..self.clone() }
    }

    pub fn without_velocities(&self) -> Self {
        Self {
            species: self.species.iter().map(SpeciesEnsemble::without_velocities).collect(),
            ..self.clone()
        }
    }

    /// Attaches per-species velocity arrays.
    pub fn with_velocities(&self, velocities: Vec<Vec<f64>>) -> Result<Self> {
        if velocities.len() != self.species.len() {
            return Err(Error::SpeciesCountMismatch { left: self.species.len(), right: velocities.len() });
        }
        let species = self
            .species
            .iter()
            .zip(velocities)
            .map(|(s, v)| s.with_coordinates(s.positions.clone(), Some(v)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.time, species)
    }

    fn replace(&self, time: f64, coords: Vec<(Vec<f64>, Option<Vec<f64>>)>) -> Result<Self> {
        let species = self
            .species
            .iter()
            .zip(coords)
            .map(|(s, (x, v))| s.with_coordinates(x, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(time, species)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "euler")]
    Euler,
    #[serde(rename = "rk4")]
    Rk4,
    /// Exact damping with the field frozen over the step.
    #[serde(rename = "exp-euler")]
    ExpEuler,
    /// Half relaxation, full drift, half relaxation.
    #[serde(rename = "exp-strang")]
    ExpStrang,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
            Scheme::ExpEuler => "exp-euler",
            Scheme::ExpStrang => "exp-strang",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl IntegratorConfig {
    pub fn first_order(scheme: Scheme, dt: f64) -> Self {
        Self { scheme, dt, epsilon: None }
    }

    pub fn second_order(scheme: Scheme, dt: f64, epsilon: f64) -> Self {
        Self { scheme, dt, epsilon: Some(epsilon) }
    }

    fn check_dt(&self) -> Result<()> {
        if self.dt.is_finite() && self.dt > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)))
        }
    }

    fn epsilon(&self) -> Result<f64> {
        match self.epsilon {
            Some(e) if e.is_finite() && e > 0.0 => Ok(e),
            other => Err(Error::InvalidParameter(format!("epsilon must be positive, got {other:?}"))),
        }
    }
}

fn fields(kernels: &KernelMatrix, state: &MultiSpeciesState) -> Result<Vec<Vec<f64>>> {
    species_fields(kernels, state, SelfPairPolicy::Skip)
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| xi + a * yi).collect()
}

/// One step of `dz/dt = E_i(z)`.
pub fn step_first_order(
    state: &MultiSpeciesState,
    kernels: &KernelMatrix,
    cfg: &IntegratorConfig,
) -> Result<MultiSpeciesState> {
    check_compatible(kernels, state)?;
    cfg.check_dt()?;
    let dt = cfg.dt;
    let base = state.without_velocities();
    let positions: Vec<&[f64]> = base.species.iter().map(|s| s.positions()).collect();
    let shifted = |k: &[Vec<f64>], a: f64| -> Result<MultiSpeciesState> {
        base.replace(
            base.time,
            positions.iter().zip(k).map(|(x, e)| (axpy(x, a, e), None)).collect(),
        )
    };
    let next: Vec<Vec<f64>> = match cfg.scheme {
        Scheme::Euler => {
            let k1 = fields(kernels, &base)?;
            positions.iter().zip(&k1).map(|(x, e)| axpy(x, dt, e)).collect()
        }
        Scheme::Rk4 => {
            let k1 = fields(kernels, &base)?;
            let k2 = fields(kernels, &shifted(&k1, 0.5 * dt)?)?;
            let k3 = fields(kernels, &shifted(&k2, 0.5 * dt)?)?;
            let k4 = fields(kernels, &shifted(&k3, dt)?)?;
            (0..positions.len())
                .map(|i| {
                    positions[i]
                        .iter()
                        .enumerate()
                        .map(|(c, x)| {
                            x + dt / 6.0 * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c])
                        })
                        .collect()
                })
                .collect()
        }
        Scheme::ExpEuler | Scheme::ExpStrang => {
            return Err(Error::SchemeMismatch(cfg.scheme.name().into()))
        }
    };
    let velocities = state.has_velocities();
    let out = base.replace(state.time + dt, next.into_iter().map(|x| (x, None)).collect())?;
    if velocities {
        let v = state.species.iter().map(|s| s.velocities.clone().unwrap()).collect();
        out.with_velocities(v)
    } else {
        Ok(out)
    }
}

/// Exact relaxation of `(z, u)` under `ε du/dt = -u + E` with `E` frozen.
pub fn relax(z: f64, u: f64, e: f64, dt: f64, epsilon: f64) -> (f64, f64) {
    let decay = (-dt / epsilon).exp();
    let gain = -(-dt / epsilon).exp_m1();
    let z_next = z + epsilon * gain * u + (dt - epsilon * gain) * e;
    let u_next = decay * u + gain * e;
    (z_next, u_next)
}

type PhaseFields = Vec<(Vec<f64>, Vec<f64>)>;

/// One step of `dz/dt = u`, `ε du/dt = -u + E_i(z)`.
pub fn step_second_order(
    state: &MultiSpeciesState,
    kernels: &KernelMatrix,
    cfg: &IntegratorConfig,
) -> Result<MultiSpeciesState> {
    check_compatible(kernels, state)?;
    if !state.has_velocities() {
        return Err(Error::MissingVelocities);
    }
    cfg.check_dt()?;
    let eps = cfg.epsilon()?;
    let dt = cfg.dt;
    let current: Vec<(Vec<f64>, Vec<f64>)> = state
        .species
        .iter()
        .map(|s| (s.positions.clone(), s.velocities.clone().unwrap()))
        .collect();
    let at = |c: &[(Vec<f64>, Vec<f64>)]| -> Result<MultiSpeciesState> {
        state.replace(state.time, c.iter().map(|(x, v)| (x.clone(), Some(v.clone()))).collect())
    };
    // Right-hand side (dz/dt, du/dt) of the inertial system.
    let rhs = |c: &[(Vec<f64>, Vec<f64>)]| -> Result<PhaseFields> {
        let e = fields(kernels, &at(c)?)?;
        Ok(c.iter()
            .zip(e)
            .map(|((_, v), e)| {
                let dv = v.iter().zip(&e).map(|(v, e)| (e - v) / eps).collect();
                (v.clone(), dv)
            })
            .collect())
    };
    let advance = |c: &[(Vec<f64>, Vec<f64>)], a: f64, k: &PhaseFields| -> Vec<(Vec<f64>, Vec<f64>)> {
        c.iter()
            .zip(k)
            .map(|((x, v), (dx, dv))| (axpy(x, a, dx), axpy(v, a, dv)))
            .collect()
    };
    let next: Vec<(Vec<f64>, Vec<f64>)> = match cfg.scheme {
        Scheme::Euler => {
            let k1 = rhs(&current)?;
            advance(&current, dt, &k1)
        }
        Scheme::Rk4 => {
            let k1 = rhs(&current)?;
            let k2 = rhs(&advance(&current, 0.5 * dt, &k1))?;
            let k3 = rhs(&advance(&current, 0.5 * dt, &k2))?;
            let k4 = rhs(&advance(&current, dt, &k3))?;
            let combined: PhaseFields = (0..current.len())
                .map(|i| {
                    let mix = |sel: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
                        (0..sel(&k1[i]).len())
                            .map(|c| {
                                (sel(&k1[i])[c] + 2.0 * sel(&k2[i])[c] + 2.0 * sel(&k3[i])[c] + sel(&k4[i])[c])
                                    / 6.0
                            })
                            .collect()
                    };
                    (mix(|p| &p.0), mix(|p| &p.1))
                })
                .collect();
            advance(&current, dt, &combined)
        }
        Scheme::ExpEuler => {
            let e = fields(kernels, state)?;
            current
                .iter()
                .zip(&e)
                .map(|((x, v), e)| {
                    let mut xn = Vec::with_capacity(x.len());
                    let mut vn = Vec::with_capacity(x.len());
                    for c in 0..x.len() {
                        let (z, u) = relax(x[c], v[c], e[c], dt, eps);
                        xn.push(z);
                        vn.push(u);
                    }
                    (xn, vn)
                })
                .collect()
        }
        Scheme::ExpStrang => {
            let start = fields(kernels, state)?;
            return strang_step(state, kernels, dt, eps, &start).map(|(next, _)| next);
        }
    };
    state.replace(state.time + dt, next.into_iter().map(|(x, v)| (x, Some(v))).collect())
}

/// Half relaxation toward `start`, drift, half relaxation toward the new field.
/// Returns the new state and the field it was relaxed toward.
fn strang_step(
    state: &MultiSpeciesState,
    kernels: &KernelMatrix,
    dt: f64,
    eps: f64,
    start: &[Vec<f64>],
) -> Result<(MultiSpeciesState, Vec<Vec<f64>>)> {
    let half = 0.5 * dt;
    let decay = (-half / eps).exp();
    let gain = -(-half / eps).exp_m1();
    let kick = |c: &mut Vec<(Vec<f64>, Vec<f64>)>, e: &[Vec<f64>]| {
        for ((_, v), e) in c.iter_mut().zip(e) {
            for (v, e) in v.iter_mut().zip(e) {
                *v = decay * *v + gain * e;
            }
        }
    };
    let mut c: Vec<(Vec<f64>, Vec<f64>)> = state
        .species
        .iter()
        .map(|s| (s.positions.clone(), s.velocities.clone().unwrap()))
        .collect();
    kick(&mut c, start);
    for (x, v) in c.iter_mut() {
        for (x, v) in x.iter_mut().zip(v.iter()) {
            *x += dt * v;
        }
    }
    let drifted = state.replace(state.time, c.iter().map(|(x, v)| (x.clone(), Some(v.clone()))).collect())?;
    let e = fields(kernels, &drifted)?;
    kick(&mut c, &e);
    let next = state.replace(state.time + dt, c.into_iter().map(|(x, v)| (x, Some(v))).collect())?;
    Ok((next, e))
}

/// Repeated second-order steps; `exp-strang` reuses the field computed at the
/// end of the previous step when called on that step's output.
pub struct SecondOrderStepper<'a> {
    kernels: &'a KernelMatrix,
    cfg: IntegratorConfig,
    cached: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl<'a> SecondOrderStepper<'a> {
    pub fn new(kernels: &'a KernelMatrix, cfg: IntegratorConfig) -> Self {
        Self { kernels, cfg, cached: None }
    }

    pub fn step(&mut self, state: &MultiSpeciesState) -> Result<MultiSpeciesState> {
        self.step_by(state, self.cfg.dt)
    }

    /// Step of length `dt` instead of the configured one.
    pub fn step_by(&mut self, state: &MultiSpeciesState, dt: f64) -> Result<MultiSpeciesState> {
        let cfg = IntegratorConfig { dt, ..self.cfg };
        if cfg.scheme != Scheme::ExpStrang {
            return step_second_order(state, self.kernels, &cfg);
        }
        check_compatible(self.kernels, state)?;
        if !state.has_velocities() {
            return Err(Error::MissingVelocities);
        }
        cfg.check_dt()?;
        let eps = cfg.epsilon()?;
        let start = match self.cached.take() {
            Some((pos, e)) if state.species.iter().zip(&pos).all(|(s, p)| s.positions == *p) => e,
            _ => fields(self.kernels, state)?,
        };
        let (next, e) = strang_step(state, self.kernels, dt, eps, &start)?;
        self.cached = Some((next.species.iter().map(|s| s.positions.clone()).collect(), e));
        Ok(next)
    }
}

/// Largest phase-space norm `|(x, v)|` over all particles, or `|x|` without velocities.
pub fn support_radius(state: &MultiSpeciesState) -> f64 {
    let mut r2_max: f64 = 0.0;
    for s in &state.species {
        for k in 0..s.len() {
            let mut r2: f64 = s.position(k).iter().map(|c| c * c).sum();
            if let Some(v) = s.velocity(k) {
                r2 += v.iter().map(|c| c * c).sum::<f64>();
            }
            r2_max = r2_max.max(r2);
        }
    }
    r2_max.sqrt()
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `species,index,weight,x0..[,v0..]` rows with 17 significant digits.
pub fn write_snapshot<W: Write>(state: &MultiSpeciesState, writer: W) -> Result<()> {
    let io = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let d = state.dim;
    let mut header = vec!["species".to_string(), "index".into(), "weight".into()];
    header.extend((0..d).map(|c| format!("x{c}")));
    if state.has_velocities() {
        header.extend((0..d).map(|c| format!("v{c}")));
    }
    w.write_record(&header).map_err(io)?;
    for (i, s) in state.species.iter().enumerate() {
        for k in 0..s.len() {
            let mut row = vec![i.to_string(), k.to_string(), fmt(s.weights[k])];
            row.extend(s.position(k).iter().map(|c| fmt(*c)));
            if let Some(v) = s.velocity(k) {
                row.extend(v.iter().map(|c| fmt(*c)));
            }
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`]; the time is supplied by the caller.
pub fn read_snapshot<R: Read>(reader: R, time: f64) -> Result<MultiSpeciesState> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let d = header.iter().filter(|h| h.starts_with('x')).count();
    let nv = header.iter().filter(|h| h.starts_with('v')).count();
    if d == 0 || (nv != 0 && nv != d) || header.len() != 3 + d + nv {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut groups: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let num = |idx: usize| -> Result<f64> {
            rec[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))
        };
        let species: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))?;
        if species > groups.len() {
            return Err(Error::Format(format!("row {}: species out of order", line + 1)));
        }
        if species == groups.len() {
            groups.push(Default::default());
        }
        let g = &mut groups[species];
        g.0.push(num(2)?);
        for c in 0..d {
            g.1.push(num(3 + c)?);
        }
        for c in 0..nv {
            g.2.push(num(3 + d + c)?);
        }
    }
    let species = groups
        .into_iter()
        .map(|(w, x, v)| SpeciesEnsemble::new(d, x, (nv > 0).then_some(v), w))
        .collect::<Result<Vec<_>>>()?;
    MultiSpeciesState::new(time, species)
}
