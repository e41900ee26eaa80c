//! Reference solutions of the first-order macroscopic system
//! `∂t ρ_i = ∇·(ρ_i u_i)`, `u_i = Σ_j ∇K_ij ∗ ρ_j`: a particle method in any
//! dimension and a conservative upwind finite-volume solver on a 1-D grid.
//!
//! Densities move with the transport velocity `-u_i`, which equals the particle
//! field `E_i`.

use std::io::Write;

use rayon::prelude::*;

use crate::ensemble::{step_first_order, IntegratorConfig, MultiSpeciesState, Scheme};
use crate::error::{Error, Result};
use crate::kernels::{assemble_field, KernelMatrix, KernelSpec, SelfPairPolicy};
use crate::kinetic::time_grid;
use crate::transport::{mollify_to_grid, EmpiricalMeasure, Mollifier, UniformGrid};

/// Cell averages of `ρ_i` on a uniform grid of the line.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid1D {
    pub time: f64,
    pub x_min: f64,
    pub dx: f64,
    pub cells: usize,
    /// One row of cell values per species.
    pub values: Vec<Vec<f64>>,
}

impl DensityGrid1D {
    pub fn new(time: f64, x_min: f64, dx: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        let cells = values.first().map_or(0, Vec::len);
        if cells == 0 || values.iter().any(|v| v.len() != cells) {
            return Err(Error::GridMismatch("every species needs the same nonzero cell count".into()));
        }
        if !(dx.is_finite() && dx > 0.0 && x_min.is_finite()) {
            return Err(Error::GridMismatch(format!("invalid grid origin {x_min} / spacing {dx}")));
        }
        if values.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidState("densities must be finite and nonnegative".into()));
        }
        Ok(Self { time, x_min, dx, cells, values })
    }

    /// Mollified particle densities on `[x_min, x_min + cells·dx]`.
    pub fn from_state(state: &MultiSpeciesState, moll: &Mollifier, x_min: f64, dx: f64, cells: usize) -> Result<Self> {
        if state.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: state.dim() });
        }
        let grid = UniformGrid::line(x_min, x_min + dx * cells as f64, cells)?;
        let values = state
            .species()
            .iter()
            .map(|s| mollify_to_grid(&EmpiricalMeasure::from_positions(s), moll, &grid))
            .collect::<Result<Vec<_>>>()?;
        Self::new(state.time(), x_min, dx, values)
    }

    pub fn species(&self) -> usize {
        self.values.len()
    }

    pub fn center(&self, c: usize) -> f64 {
        self.x_min + (c as f64 + 0.5) * self.dx
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|c| self.center(c)).collect()
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.values[i].iter().sum::<f64>() * self.dx
    }

    pub fn same_grid(&self, other: &DensityGrid1D) -> bool {
        self.cells == other.cells && self.x_min == other.x_min && self.dx == other.dx
    }
}

/// Per-species velocity values at a common set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityFieldSample {
    pub dim: usize,
    pub points: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// First-order particle trajectory, every step included.
pub fn macro_particle_solve(
    rho0: &MultiSpeciesState,
    kernels: &KernelMatrix,
    horizon: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<Vec<MultiSpeciesState>> {
    let times = time_grid(rho0.time(), rho0.time() + horizon, dt)?;
    let mut states = vec![rho0.without_velocities()];
    for w in times.windows(2) {
        let cfg = IntegratorConfig::first_order(scheme, w[1] - w[0]);
        let next = step_first_order(states.last().unwrap(), kernels, &cfg)?;
        states.push(next.with_time(w[1]));
    }
    Ok(states)
}

/// `u_i = Σ_j ∇K_ij ∗ ρ_j` for an empirical `ρ`; exactly `-E_i`.
pub fn velocity_field(
    kernels: &KernelMatrix,
    state: &MultiSpeciesState,
    i: usize,
    queries: &[f64],
) -> Result<Vec<f64>> {
    let mut u = assemble_field(kernels, state, i, queries, SelfPairPolicy::Skip)?;
    for v in &mut u {
        *v = -*v;
    }
    Ok(u)
}

fn check_grid_kernel(spec: &KernelSpec) -> Result<()> {
    match *spec {
        KernelSpec::Riesz { alpha, .. } if alpha >= 1.0 => Err(Error::QuadratureDivergence { alpha }),
        _ => Ok(()),
    }
}

/// `∫_{cell} ∇K(x - y) dy` for a cell of half-width `h/2` centered `s` away from `x`.
fn cell_gradient_integral(spec: &KernelSpec, s: f64, h: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(spec.radial((s + 0.5 * h).abs())? - spec.radial((s - 0.5 * h).abs())?)
}

/// Table `T(m) = ∫_{cell c-m} ∇K(x_c - y) dy` for `m ∈ -(cells-1)..cells`, index `m + cells - 1`.
fn gradient_table(spec: &KernelSpec, cells: usize, h: f64) -> Result<Vec<f64>> {
    let mut table = vec![0.0; 2 * cells - 1];
    for m in 1..cells {
        let v = cell_gradient_integral(spec, m as f64 * h, h)?;
        table[cells - 1 + m] = v;
        table[cells - 1 - m] = -v;
    }
    Ok(table)
}

fn check_grid_kernels(kernels: &KernelMatrix, rho: &DensityGrid1D) -> Result<()> {
    if kernels.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: kernels.dim() });
    }
    if kernels.species() != rho.species() {
        return Err(Error::SpeciesCountMismatch { left: kernels.species(), right: rho.species() });
    }
    for i in 0..kernels.species() {
        for j in 0..kernels.species() {
            check_grid_kernel(kernels.get(i, j))?;
        }
    }
    Ok(())
}

/// Precomputed cell-integral tables for every kernel entry on one grid.
pub struct GridVelocity {
    cells: usize,
    species: usize,
    tables: Vec<Option<Vec<f64>>>,
}

impl GridVelocity {
    pub fn new(kernels: &KernelMatrix, rho: &DensityGrid1D) -> Result<Self> {
        check_grid_kernels(kernels, rho)?;
        let n = kernels.species();
        let mut tables = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let spec = kernels.get(i, j);
                tables.push(if spec.is_zero() { None } else { Some(gradient_table(spec, rho.cells, rho.dx)?) });
            }
        }
        Ok(Self { cells: rho.cells, species: n, tables })
    }

    /// `u_i` at the cell centers, exact for piecewise-constant densities.
    pub fn at_centers(&self, rho: &DensityGrid1D) -> Result<Vec<Vec<f64>>> {
        if rho.cells != self.cells || rho.species() != self.species {
            return Err(Error::GridMismatch("density grid differs from the tabulated grid".into()));
        }
        let n = self.cells;
        Ok((0..self.species)
            .map(|i| {
                (0..n)
                    .into_par_iter()
                    .map(|c| {
                        let mut u = 0.0;
                        for j in 0..self.species {
                            if let Some(t) = &self.tables[i * self.species + j] {
                                let row = &rho.values[j];
                                // T index for source cell c' is (c - c') + n - 1.
                                let base = c + n - 1;
                                for (cp, r) in row.iter().enumerate() {
                                    u += r * t[base - cp];
                                }
                            }
                        }
                        u
                    })
                    .collect()
            })
            .collect())
    }
}

/// `u_i` from a piecewise-constant density at arbitrary points on the line.
pub fn velocity_field_grid(
    kernels: &KernelMatrix,
    rho: &DensityGrid1D,
    i: usize,
    queries: &[f64],
) -> Result<Vec<f64>> {
    check_grid_kernels(kernels, rho)?;
    queries
        .par_iter()
        .map(|&x| {
            let mut u = 0.0;
            for j in 0..rho.species() {
                let spec = kernels.get(i, j);
                if spec.is_zero() {
                    continue;
                }
                for (c, r) in rho.values[j].iter().enumerate() {
                    if *r != 0.0 {
                        u += r * cell_gradient_integral(spec, x - rho.center(c), rho.dx)?;
                    }
                }
            }
            Ok(u)
        })
        .collect()
}

/// Largest stable time step `0.5 dx / max|u|`.
pub fn cfl_limit(u: &[Vec<f64>], dx: f64) -> f64 {
    let max = u.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        f64::INFINITY
    } else {
        0.5 * dx / max
    }
}

/// One upwind step of `∂t ρ + ∂x(ρ a) = 0` with `a = -u` and closed walls.
fn upwind_step(rho: &[f64], u: &[f64], dt: f64, dx: f64) -> Vec<f64> {
    let n = rho.len();
    let mut flux = vec![0.0; n + 1];
    for f in 1..n {
        let a = -0.5 * (u[f - 1] + u[f]);
        flux[f] = if a > 0.0 {
            a * rho[f - 1]
        } else if a < 0.0 {
            a * rho[f]
        } else {
            0.0
        };
    }
    let r = dt / dx;
    (0..n).map(|c| rho[c] - r * (flux[c + 1] - flux[c])).collect()
}

/// Grid state and the velocity that advanced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFrame {
    pub rho: DensityGrid1D,
    pub u: Vec<Vec<f64>>,
}

/// Upwind finite-volume trajectory; every `stride`-th step and the final state are kept.
pub fn grid_solve_1d(
    rho0: &DensityGrid1D,
    kernels: &KernelMatrix,
    horizon: f64,
    dt: f64,
    stride: usize,
) -> Result<Vec<GridFrame>> {
    let stride = stride.max(1);
    let vel = GridVelocity::new(kernels, rho0)?;
    let times = time_grid(rho0.time, rho0.time + horizon, dt)?;
    let mut rho = rho0.clone();
    let mut u = vel.at_centers(&rho)?;
    let mut frames = vec![GridFrame { rho: rho.clone(), u: u.clone() }];
    for (n, w) in times.windows(2).enumerate() {
        let h = w[1] - w[0];
        let limit = cfl_limit(&u, rho.dx);
        if h > limit {
            return Err(Error::CflViolation { dt: h, limit });
        }
        let values: Vec<Vec<f64>> = rho
            .values
            .par_iter()
            .zip(&u)
            .map(|(r, ui)| upwind_step(r, ui, h, rho.dx))
            .collect();
        rho = DensityGrid1D { time: w[1], values, ..rho };
        u = vel.at_centers(&rho)?;
        if (n + 1) % stride == 0 || n + 2 == times.len() {
            frames.push(GridFrame { rho: rho.clone(), u: u.clone() });
        }
    }
    Ok(frames)
}

/// `e = (u_now - u_prev)/dt + u_now ∂x u_now` on a uniform grid, central
/// differences inside and one-sided at the ends.
pub fn material_derivative(u_now: &[f64], u_prev: &[f64], dt: f64, dx: f64) -> Result<Vec<f64>> {
    let n = u_now.len();
    if u_prev.len() != n {
        return Err(Error::GridMismatch(format!("{} vs {} grid values", n, u_prev.len())));
    }
    if n < 2 {
        return Err(Error::GridMismatch("material derivative needs at least two cells".into()));
    }
    Ok((0..n)
        .map(|c| {
            let grad = if c == 0 {
                (u_now[1] - u_now[0]) / dx
            } else if c == n - 1 {
                (u_now[n - 1] - u_now[n - 2]) / dx
            } else {
                (u_now[c + 1] - u_now[c - 1]) / (2.0 * dx)
            };
            (u_now[c] - u_prev[c]) / dt + u_now[c] * grad
        })
        .collect())
}

/// Piecewise-linear interpolation through cell-center values, constant beyond
/// the outermost centers.
pub fn interpolate(x_min: f64, dx: f64, values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let s = (x - x_min) / dx - 0.5;
    if s <= 0.0 {
        return values[0];
    }
    if s >= (n - 1) as f64 {
        return values[n - 1];
    }
    let k = s.floor() as usize;
    let t = s - k as f64;
    values[k] * (1.0 - t) + values[k + 1] * t
}

/// CSV rows `t,cell_index,x_center,rho_1..rho_N,u_1..u_N`, optionally with header.
pub fn write_grid_frames<W: Write>(frames: &[GridFrame], writer: W) -> Result<()> {
    let err = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let n = frames.first().map_or(0, |f| f.rho.species());
    let mut header = vec!["t".to_string(), "cell_index".into(), "x_center".into()];
    header.extend((1..=n).map(|i| format!("rho_{i}")));
    header.extend((1..=n).map(|i| format!("u_{i}")));
    w.write_record(&header).map_err(err)?;
    for f in frames {
        for c in 0..f.rho.cells {
            let mut row = vec![format!("{:.16e}", f.rho.time), c.to_string(), format!("{:.16e}", f.rho.center(c))];
            row.extend(f.rho.values.iter().map(|v| format!("{:.16e}", v[c])));
            row.extend(f.u.iter().map(|v| format!("{:.16e}", v[c])));
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Sum of per-species discrete masses; used by conservation checks.
pub fn total_mass(rho: &DensityGrid1D) -> f64 {
    (0..rho.species()).map(|i| rho.mass(i)).sum()
}
