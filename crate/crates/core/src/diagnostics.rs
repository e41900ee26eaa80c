//! Functionals evaluated along trajectories, and the time-series container
//! they are recorded into.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::MultiSpeciesState;
use crate::error::{Error, Result};
use crate::kernels::{check_compatible, species_fields, KernelMatrix, KernelSpec, SelfPairPolicy, REDUCTION_BLOCK};
use crate::macroscopic::{interpolate, DensityGrid1D, GridFrame};
use crate::quadrature::{gauss_legendre, integrate};
use crate::transport::{mollify_to_grid, EmpiricalMeasure, Mollifier, UniformGrid};

/// `I_i = Σ_k w_k |v_k - E_i(z_k)|` per species.
pub fn velocity_alignment(state: &MultiSpeciesState, kernels: &KernelMatrix) -> Result<Vec<f64>> {
    if !state.has_velocities() {
        return Err(Error::MissingVelocities);
    }
    let fields = species_fields(kernels, state, SelfPairPolicy::Skip)?;
    let d = state.dim();
    Ok(state
        .species()
        .iter()
        .zip(&fields)
        .map(|(s, e)| {
            let v = s.velocities().unwrap();
            s.weights()
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let n2: f64 = (0..d).map(|c| (v[k * d + c] - e[k * d + c]).powi(2)).sum();
                    w * n2.sqrt()
                })
                .sum()
        })
        .collect())
}

/// `Σ_k Σ_h w_k w'_h K(z_k - z'_h)` between two point sets; `same` marks a self block.
fn pair_sum(
    spec: &KernelSpec,
    d: usize,
    (za, wa): (&[f64], &[f64]),
    (zb, wb): (&[f64], &[f64]),
    same: bool,
    policy: SelfPairPolicy,
) -> Result<f64> {
    if spec.is_zero() {
        return Ok(0.0);
    }
    let rows: Vec<f64> = (0..wa.len())
        .into_par_iter()
        .map(|k| {
            let x = &za[k * d..(k + 1) * d];
            let mut row = 0.0;
            for block in (0..wb.len()).step_by(REDUCTION_BLOCK) {
                let mut partial = 0.0;
                for h in block..(block + REDUCTION_BLOCK).min(wb.len()) {
                    let r2: f64 = (0..d).map(|c| (x[c] - zb[h * d + c]).powi(2)).sum();
                    if r2 == 0.0 && spec.is_singular() {
                        if same && policy == SelfPairPolicy::Skip {
                            continue;
                        }
                        return Err(Error::SingularEvaluation);
                    }
                    partial += wb[h] * spec.radial(r2.sqrt())?;
                }
                row += partial;
            }
            Ok(wa[k] * row)
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().sum())
}

/// `Σ_{i,j} Σ_{k,h} w w K_ij(z_{i,k} - z_{j,h})`, self pairs included.
pub fn free_energy(state: &MultiSpeciesState, kernels: &KernelMatrix, policy: SelfPairPolicy) -> Result<f64> {
    check_compatible(kernels, state)?;
    let d = state.dim();
    let sp = state.species();
    if policy == SelfPairPolicy::Skip && (0..sp.len()).any(|i| kernels.get(i, i).is_singular()) {
        log::warn!("free energy skips coincident pairs of singular diagonal kernels");
    }
    let mut total = 0.0;
    for i in 0..sp.len() {
        for j in 0..sp.len() {
            total += pair_sum(
                kernels.get(i, j),
                d,
                (sp[i].positions(), sp[i].weights()),
                (sp[j].positions(), sp[j].weights()),
                i == j,
                policy,
            )?;
        }
    }
    Ok(total)
}

/// `∬ K(x - y) dρ_i dρ_i` for species `i` of the state.
pub fn interaction_energy(state: &MultiSpeciesState, i: usize, kernel: &KernelSpec, policy: SelfPairPolicy) -> Result<f64> {
    let s = state
        .species()
        .get(i)
        .ok_or_else(|| Error::InvalidParameter(format!("species index {i} out of range")))?;
    let z = (s.positions(), s.weights());
    pair_sum(kernel, s.dim(), z, z, true, policy)
}

/// `Σ_k w_k (|z_k|² + |v_k|²)/2` per species.
pub fn second_moment_energy(state: &MultiSpeciesState) -> Result<Vec<f64>> {
    if !state.has_velocities() {
        return Err(Error::MissingVelocities);
    }
    let d = state.dim();
    Ok(state
        .species()
        .iter()
        .map(|s| {
            let z = s.positions();
            let v = s.velocities().unwrap();
            s.weights()
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let e: f64 = (0..d).map(|c| z[k * d + c].powi(2) + v[k * d + c].powi(2)).sum();
                    0.5 * w * e
                })
                .sum()
        })
        .collect())
}

/// Discrete `L^p` norm of cell averages; `p = ∞` gives the largest magnitude.
pub fn lp_norm(values: &[f64], cell_volume: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * cell_volume).powf(1.0 / p)
}

/// Double integrals `W(m) = ∫_{-h}^{h} (h - |τ|) K(mh + τ) dτ` of a 1-D kernel
/// over pairs of cells `m` apart.
#[derive(Debug, Clone)]
pub struct CellGram {
    table: Vec<f64>,
}

const GRADED_LEVELS: usize = 60;

/// `∫_a^b f` with panels refined geometrically toward `a`.
fn graded(f: &impl Fn(f64) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let mut total = 0.0;
    let mut hi = b;
    for _ in 0..GRADED_LEVELS {
        let lo = a + 0.5 * (hi - a);
        total += integrate(f, lo, hi, rule);
        hi = lo;
    }
    total + integrate(f, a, hi, rule)
}

impl CellGram {
    pub fn new(spec: &KernelSpec, cells: usize, h: f64) -> Result<Self> {
        let rule = gauss_legendre(20);
        let mut table = vec![0.0; cells];
        if spec.is_zero() {
            return Ok(Self { table });
        }
        let k = |r: f64| spec.radial(r.abs()).unwrap_or(f64::NAN);
        for (m, slot) in table.iter_mut().enumerate() {
            let c = m as f64 * h;
            *slot = match (*spec, m) {
                (KernelSpec::Riesz { c: amp, alpha }, 0 | 1) => {
                    if alpha >= 1.0 {
                        return Err(Error::QuadratureDivergence { alpha });
                    }
                    let k2 = |x: f64| amp * x.abs().powf(2.0 - alpha) / ((1.0 - alpha) * (2.0 - alpha));
                    k2(c + h) - 2.0 * k2(c) + k2(c - h)
                }
                (KernelSpec::Riesz { alpha, .. }, _) if alpha >= 1.0 => {
                    return Err(Error::QuadratureDivergence { alpha });
                }
                (_, 0) => 2.0 * graded(&|s| (h - s) * k(s), 0.0, h, &rule),
                (_, 1) => {
                    graded(&|s| s * k(s), 0.0, h, &rule) + integrate(|s| (2.0 * h - s) * k(s), h, 2.0 * h, &rule)
                }
                _ => {
                    integrate(|s| (h - (s - c).abs()) * k(s), c - h, c, &rule)
                        + integrate(|s| (h - (s - c).abs()) * k(s), c, c + h, &rule)
                }
            };
            if !slot.is_finite() {
                return Err(Error::FieldEvaluationFailure(format!("cell integral {m} is not finite")));
            }
        }
        Ok(Self { table })
    }

    pub fn entry(&self, m: usize) -> f64 {
        self.table[m]
    }

    /// `Σ_c Σ_c' a_c b_c' W(c - c')`, i.e. `∫∫ a(x) K(x - y) b(y)` for piecewise-constant `a`, `b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let n = self.table.len();
        if a.len() != n || b.len() != n {
            return Err(Error::GridMismatch(format!("{} / {} values on a {n}-cell table", a.len(), b.len())));
        }
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|c| {
                if a[c] == 0.0 {
                    return 0.0;
                }
                let s: f64 = b.iter().enumerate().map(|(cp, v)| v * self.table[c.abs_diff(cp)]).sum();
                a[c] * s
            })
            .collect();
        Ok(rows.iter().sum())
    }
}

/// `Σ_{i,j} ∫∫ ρ_i K_ij ρ_j` for piecewise-constant densities.
pub fn grid_free_energy(rho: &DensityGrid1D, kernels: &KernelMatrix) -> Result<f64> {
    if kernels.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: kernels.dim() });
    }
    if kernels.species() != rho.species() {
        return Err(Error::SpeciesCountMismatch { left: kernels.species(), right: rho.species() });
    }
    let mut total = 0.0;
    for i in 0..rho.species() {
        for j in 0..rho.species() {
            let gram = CellGram::new(kernels.get(i, j), rho.cells, rho.dx)?;
            total += gram.bilinear(&rho.values[i], &rho.values[j])?;
        }
    }
    Ok(total)
}

/// Components of the modulated energy between a kinetic state and a grid reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModulatedEnergy {
    pub kinetic_part: f64,
    pub interaction_part: f64,
    pub total: f64,
}

/// Mollified particle densities on the reference grid at scale `1/n = 2dx`.
pub fn kinetic_density_on_grid(kinetic: &MultiSpeciesState, rho: &DensityGrid1D) -> Result<Vec<Vec<f64>>> {
    let grid = UniformGrid::line(rho.x_min, rho.x_min + rho.dx * rho.cells as f64, rho.cells)?;
    let moll = Mollifier::with_scale(0.5 / rho.dx, 1)?;
    kinetic
        .species()
        .iter()
        .map(|s| mollify_to_grid(&EmpiricalMeasure::from_positions(s), &moll, &grid))
        .collect()
}

/// `½ Σ w |a_i(z) - v|² + (1/2ε) Σ_i ∫(ρ_i - ρ_i^ε) K_ii ∗ (ρ_i - ρ_i^ε)`, with
/// `a_i = -u_i` the reference transport velocity interpolated linearly from
/// cell centers and `ρ^ε` the grid-mollified kinetic density.
pub fn modulated_energy(
    kinetic: &MultiSpeciesState,
    reference: &GridFrame,
    epsilon: f64,
    kernels: &KernelMatrix,
) -> Result<ModulatedEnergy> {
    let rho = &reference.rho;
    if kinetic.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: kinetic.dim() });
    }
    if kinetic.species().len() != rho.species() || reference.u.len() != rho.species() {
        return Err(Error::GridMismatch("species count differs between kinetic state and reference".into()));
    }
    if kernels.species() != rho.species() {
        return Err(Error::SpeciesCountMismatch { left: kernels.species(), right: rho.species() });
    }
    if reference.u.iter().any(|u| u.len() != rho.cells) {
        return Err(Error::GridMismatch("velocity samples do not match the density grid".into()));
    }
    if !kinetic.has_velocities() {
        return Err(Error::MissingVelocities);
    }
    let mut kinetic_part = 0.0;
    for (i, s) in kinetic.species().iter().enumerate() {
        let v = s.velocities().unwrap();
        let u = &reference.u[i];
        for (k, (z, w)) in s.positions().iter().zip(s.weights()).enumerate() {
            let a = -interpolate(rho.x_min, rho.dx, u, *z);
            kinetic_part += 0.5 * w * (a - v[k]).powi(2);
        }
    }
    let rho_eps = kinetic_density_on_grid(kinetic, rho)?;
    let mut interaction = 0.0;
    for (i, re) in rho_eps.iter().enumerate() {
        let gram = CellGram::new(kernels.get(i, i), rho.cells, rho.dx)?;
        let eta: Vec<f64> = rho.values[i].iter().zip(re).map(|(a, b)| a - b).collect();
        interaction += gram.bilinear(&eta, &eta)?;
    }
    let interaction_part = interaction / (2.0 * epsilon);
    Ok(ModulatedEnergy { kinetic_part, interaction_part, total: kinetic_part + interaction_part })
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub prefactor: f64,
}

/// Fits `y ≈ prefactor · x^slope`; `None` when fewer than two usable points, a
/// nonpositive value, or coincident abscissae make the fit undefined.
pub fn power_law_fit(x: &[f64], y: &[f64]) -> Option<PowerLawFit> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some(PowerLawFit { slope, prefactor: (my - slope * mx).exp() })
}

/// Named scalar channels sampled on a shared, strictly increasing time axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsSeries {
    times: Vec<f64>,
    names: Vec<String>,
    units: Vec<String>,
    values: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ChannelInfo<'a> {
    name: &'a str,
    units: &'a str,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    channels: Vec<ChannelInfo<'a>>,
    samples: usize,
    config_hash: &'a str,
}

impl DiagnosticsSeries {
    /// Empty series with `(name, units)` channels.
    pub fn new(channels: &[(&str, &str)]) -> Self {
        Self {
            times: Vec::new(),
            names: channels.iter().map(|c| c.0.to_string()).collect(),
            units: channels.iter().map(|c| c.1.to_string()).collect(),
            values: vec![Vec::new(); channels.len()],
        }
    }

    pub fn push(&mut self, t: f64, row: &[f64]) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(Error::InvalidParameter(format!("{} values for {} channels", row.len(), self.names.len())));
        }
        if self.times.last().is_some_and(|last| t <= *last) {
            return Err(Error::InvalidParameter(format!("sample time {t} does not increase")));
        }
        self.times.push(t);
        for (c, v) in self.values.iter_mut().zip(row) {
            c.push(*v);
        }
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|c| self.values[c].as_slice())
    }

    /// CSV with header `t,<channels>` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let err = |e: csv::Error| Error::Format(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t"];
        header.extend(self.names.iter().map(String::as_str));
        w.write_record(&header).map_err(err)?;
        for (r, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.16e}")];
            row.extend(self.values.iter().map(|c| format!("{:.16e}", c[r])));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    /// JSON description of channels and units, tagged with a configuration hash.
    pub fn sidecar_json(&self, config_hash: &str) -> String {
        let sidecar = Sidecar {
            channels: self.names.iter().zip(&self.units).map(|(n, u)| ChannelInfo { name: n, units: u }).collect(),
            samples: self.times.len(),
            config_hash,
        };
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes")
    }
}
