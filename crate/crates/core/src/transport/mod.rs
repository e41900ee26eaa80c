//! Empirical measures, 1-Wasserstein distances and mollification onto grids.

mod simplex;

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{check_weights, MultiSpeciesState, SpeciesEnsemble};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, integrate};

/// Default cap on the combined support size accepted by [`w1_exact`].
pub const DEFAULT_EXACT_CAP: usize = 4096;

/// Weighted point cloud in `R^m`; weights are positive and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() || weights.is_empty() {
            return Err(Error::InvalidState(format!(
                "{} coordinates for {} weights in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidState("non-finite support point".into()));
        }
        check_weights(&weights)?;
        Ok(Self { dim, points, weights })
    }

    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidState("points do not form a point cloud".into()));
        }
        let n = points.len() / dim;
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self { dim: point.len(), points: point.to_vec(), weights: vec![1.0] }
    }

    /// Positions of an ensemble.
    pub fn from_positions(s: &SpeciesEnsemble) -> Self {
        Self { dim: s.dim(), points: s.positions().to_vec(), weights: s.weights().to_vec() }
    }

    /// Phase-space points `(x, v)` in `R^{2d}`.
    pub fn from_phase_space(s: &SpeciesEnsemble) -> Result<Self> {
        let v = s.velocities().ok_or(Error::MissingVelocities)?;
        let d = s.dim();
        let mut points = Vec::with_capacity(2 * s.positions().len());
        for k in 0..s.len() {
            points.extend_from_slice(&s.positions()[k * d..(k + 1) * d]);
            points.extend_from_slice(&v[k * d..(k + 1) * d]);
        }
        Ok(Self { dim: 2 * d, points, weights: s.weights().to_vec() })
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

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    /// Pushes the measure forward under `x ↦ ⟨θ, x⟩`.
    pub fn project(&self, theta: &[f64]) -> Self {
        let points = (0..self.len())
            .map(|k| self.point(k).iter().zip(theta).map(|(x, t)| x * t).sum())
            .collect();
        Self { dim: 1, points, weights: self.weights.clone() }
    }

    pub fn translate(&self, shift: &[f64]) -> Self {
        let points = self
            .points
            .chunks(self.dim)
            .flat_map(|p| p.iter().zip(shift).map(|(x, h)| x + h))
            .collect();
        Self { points, ..self.clone() }
    }
}

/// Per-species measures of a state; `phase_space` selects `(x, v)` points.
pub fn measures_of(state: &MultiSpeciesState, phase_space: bool) -> Result<Vec<EmpiricalMeasure>> {
    state
        .species()
        .iter()
        .map(|s| {
            if phase_space {
                EmpiricalMeasure::from_phase_space(s)
            } else {
                Ok(EmpiricalMeasure::from_positions(s))
            }
        })
        .collect()
}

fn same_dim(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim != nu.dim {
        return Err(Error::DimensionMismatch { expected: mu.dim, got: nu.dim });
    }
    Ok(())
}

/// Exact `W1` on the line: `∫ |F_μ - F_ν|` over the merged support.
pub fn w1_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: mu.dim });
    }
    same_dim(mu, nu)?;
    let mut events: Vec<(f64, f64)> = mu
        .points
        .iter()
        .zip(&mu.weights)
        .map(|(&x, &w)| (x, w))
        .chain(nu.points.iter().zip(&nu.weights).map(|(&x, &w)| (x, -w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        cdf_gap += pair[0].1;
        total += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact `W1` by network simplex on the bipartite support graph.
pub fn w1_exact(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cap: usize) -> Result<f64> {
    same_dim(mu, nu)?;
    let size = mu.len() + nu.len();
    if size > cap {
        return Err(Error::SizeCap { size, cap });
    }
    if mu.len() == 1 || nu.len() == 1 {
        let (single, other) = if mu.len() == 1 { (mu, nu) } else { (nu, mu) };
        let x = single.point(0);
        return Ok((0..other.len()).map(|k| other.weights[k] * euclid(x, other.point(k))).sum());
    }
    let m = nu.len();
    let mut cost = vec![0.0; mu.len() * m];
    cost.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let x = mu.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = euclid(x, nu.point(j));
        }
    });
    Ok(simplex::Transportation { supply: &mu.weights, demand: &nu.weights, cost: &cost }.solve())
}

/// Uniformly distributed unit direction number `index` of the stream `seed`.
pub fn sliced_direction(dim: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    loop {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return g.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Average of 1-D distances between projections on `directions` seeded unit
/// vectors. Not equal to `W1` in dimension above one.
pub fn w1_sliced(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, directions: usize, seed: u64) -> Result<f64> {
    same_dim(mu, nu)?;
    if directions == 0 {
        return Err(Error::InvalidParameter("sliced distance needs at least one direction".into()));
    }
    if mu.dim == 1 {
        return w1_1d(mu, nu);
    }
    let parts = (0..directions as u64)
        .into_par_iter()
        .map(|l| {
            let theta = sliced_direction(mu.dim, seed, l);
            w1_1d(&mu.project(&theta), &nu.project(&theta))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / directions as f64)
}

/// Per-species distance used by [`w1_multispecies`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum W1Method {
    Exact { cap: usize },
    #[serde(rename = "1d")]
    OneD,
    Sliced { directions: usize, seed: u64 },
}

impl Default for W1Method {
    fn default() -> Self {
        W1Method::Exact { cap: DEFAULT_EXACT_CAP }
    }
}

pub fn w1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, method: W1Method) -> Result<f64> {
    match method {
        W1Method::Exact { cap } => w1_exact(mu, nu, cap),
        W1Method::OneD => w1_1d(mu, nu),
        W1Method::Sliced { directions, seed } => w1_sliced(mu, nu, directions, seed),
    }
}

/// `Σ_i W1(f_i, g_i)`.
pub fn w1_multispecies(f: &[EmpiricalMeasure], g: &[EmpiricalMeasure], method: W1Method) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::SpeciesCountMismatch { left: f.len(), right: g.len() });
    }
    f.iter().zip(g).map(|(a, b)| w1(a, b, method)).sum()
}

/// `Σ_k w_k |x_k|^p`.
pub fn moment(mu: &EmpiricalMeasure, p: u32) -> f64 {
    (0..mu.len())
        .map(|k| {
            let r = mu.point(k).iter().map(|c| c * c).sum::<f64>().sqrt();
            mu.weights[k] * r.powi(p as i32)
        })
        .sum()
}

/// `∫ |F - G|` on the line between a weighted point set and a density given by
/// cell averages on the uniform grid `x_min + c·dx`, integrated exactly.
pub fn w1_to_cell_density(mu: &EmpiricalMeasure, x_min: f64, dx: f64, values: &[f64]) -> Result<f64> {
    if mu.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: mu.dim });
    }
    let n = values.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for v in values {
        cum.push(cum.last().unwrap() + v * dx);
    }
    let x_max = x_min + n as f64 * dx;
    let g = |x: f64| {
        if x <= x_min {
            0.0
        } else if x >= x_max {
            cum[n]
        } else {
            let c = (((x - x_min) / dx) as usize).min(n - 1);
            cum[c] + values[c] * (x - (x_min + c as f64 * dx))
        }
    };
    let mut pts: Vec<(f64, f64)> = mu.points.iter().copied().zip(mu.weights.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breaks: Vec<f64> = (0..=n).map(|c| x_min + c as f64 * dx).chain(pts.iter().map(|p| p.0)).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut f = 0.0;
    let mut next = 0;
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        while next < pts.len() && pts[next].0 <= a {
            f += pts[next].1;
            next += 1;
        }
        let (da, db) = (f - g(a), f - g(b));
        total += if da * db >= 0.0 {
            0.5 * (da.abs() + db.abs()) * (b - a)
        } else {
            0.5 * (da * da + db * db) / (da.abs() + db.abs()) * (b - a)
        };
    }
    Ok(total)
}

/// Unnormalized base bump `exp(-1/(1-r²))` on the open unit ball.
fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

fn gamma_half_integer(m: usize) -> f64 {
    // Γ(m/2) for integer m ≥ 1.
    let (mut g, mut x) = if m.is_multiple_of(2) { (1.0, 1.0) } else { (std::f64::consts::PI.sqrt(), 0.5) };
    while x + 0.5 < m as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Integral of the unnormalized bump over the unit ball of `R^m`.
pub fn bump_mass(m: usize) -> f64 {
    let sphere = 2.0 * std::f64::consts::PI.powf(m as f64 / 2.0) / gamma_half_integer(m);
    let rule = gauss_legendre(20);
    let panels = 400;
    let h = 1.0 / panels as f64;
    let radial: f64 = (0..panels)
        .map(|k| {
            integrate(
                |r| r.powi(m as i32 - 1) * bump(r * r),
                k as f64 * h,
                (k + 1) as f64 * h,
                &rule,
            )
        })
        .sum();
    sphere * radial
}

/// Scaled bump `γ^(n)(x) = n^m c_m exp(-1/(1-|nx|²))`, unit mass, support radius `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mollifier {
    n: f64,
    dim: usize,
    normalization: f64,
}

impl Mollifier {
    pub fn new(n: u32, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::InvalidParameter("mollifier needs n ≥ 1 and dimension ≥ 1".into()));
        }
        Ok(Self { n: n as f64, dim, normalization: 1.0 / bump_mass(dim) })
    }

    /// Mollifier with support radius `1/n` for real `n > 0`.
    pub fn with_scale(n: f64, dim: usize) -> Result<Self> {
        if !(n.is_finite() && n > 0.0) || dim == 0 {
            return Err(Error::InvalidParameter(format!("mollifier scale must be positive, got {n}")));
        }
        Ok(Self { n, dim, normalization: 1.0 / bump_mass(dim) })
    }

    pub fn radius(&self) -> f64 {
        1.0 / self.n
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|c| c * c).sum::<f64>() * self.n * self.n;
        self.n.powi(self.dim as i32) * self.normalization * bump(r2)
    }
}

/// Cumulative distribution of the normalized 1-D bump, tabulated with Hermite
/// interpolation (exact derivative from the density).
struct BumpCdf {
    nodes: Vec<f64>,
    values: Vec<f64>,
    c: f64,
}

const CDF_INTERVALS: usize = 4096;

impl BumpCdf {
    fn get() -> &'static BumpCdf {
        static TABLE: OnceLock<BumpCdf> = OnceLock::new();
        TABLE.get_or_init(|| {
            let c = 1.0 / bump_mass(1);
            let rule = gauss_legendre(8);
            let h = 2.0 / CDF_INTERVALS as f64;
            let nodes: Vec<f64> = (0..=CDF_INTERVALS).map(|k| -1.0 + k as f64 * h).collect();
            let mut values = vec![0.0; CDF_INTERVALS + 1];
            for k in 0..CDF_INTERVALS {
                values[k + 1] = values[k] + c * integrate(|s| bump(s * s), nodes[k], nodes[k + 1], &rule);
            }
            // Enforce exact symmetry G(s) = 1 - G(-s).
            for k in 0..=CDF_INTERVALS / 2 {
                let sym = 0.5 * (values[k] + 1.0 - values[CDF_INTERVALS - k]);
                values[k] = sym;
                values[CDF_INTERVALS - k] = 1.0 - sym;
            }
            values[0] = 0.0;
            values[CDF_INTERVALS] = 1.0;
            BumpCdf { nodes, values, c }
        })
    }

    fn eval(&self, s: f64) -> f64 {
        if s <= -1.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let h = 2.0 / CDF_INTERVALS as f64;
        let k = (((s + 1.0) / h) as usize).min(CDF_INTERVALS - 1);
        let (x0, x1) = (self.nodes[k], self.nodes[k + 1]);
        let t = (s - x0) / h;
        let (g0, g1) = (self.values[k], self.values[k + 1]);
        let (d0, d1) = (self.c * bump(x0 * x0) * h, self.c * bump(x1 * x1) * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * g0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * g1 + (t3 - t2) * d1
    }
}

/// Axis-aligned grid of equal cells; cell index is row-major, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

impl UniformGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != cells.len() {
            return Err(Error::GridMismatch("grid bounds and cell counts disagree in dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
            || cells.contains(&0)
        {
            return Err(Error::GridMismatch("grid needs finite increasing bounds and at least one cell".into()));
        }
        Ok(Self { lower, upper, cells })
    }

    pub fn line(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![cells])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    pub fn total_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn center(&self, axis: usize, index: usize) -> f64 {
        self.lower[axis] + (index as f64 + 0.5) * self.width(axis)
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.cells).fold(0, |acc, (i, n)| acc * n + i)
    }
}

/// Cell averages of `Σ_k w_k γ^(n)(x - x_k)`.
pub fn mollify_to_grid(mu: &EmpiricalMeasure, moll: &Mollifier, grid: &UniformGrid) -> Result<Vec<f64>> {
    let d = grid.dim();
    if mu.dim != d || moll.dim != d {
        return Err(Error::DimensionMismatch { expected: d, got: mu.dim });
    }
    let r = moll.radius();
    for k in 0..mu.len() {
        for (a, &x) in mu.point(k).iter().enumerate() {
            if x - r < grid.lower[a] || x + r > grid.upper[a] {
                return Err(Error::GridTooSmall(format!(
                    "particle {k} at {x} with radius {r} leaves [{}, {}] on axis {a}",
                    grid.lower[a], grid.upper[a]
                )));
            }
        }
    }
    let mut density = vec![0.0; grid.total_cells()];
    let volume = grid.cell_volume();
    if d == 1 {
        let cdf = BumpCdf::get();
        let h = grid.width(0);
        for k in 0..mu.len() {
            let x = mu.points[k];
            let (first, last) = cell_span(grid, 0, x, r);
            for c in first..=last {
                let a = grid.lower[0] + c as f64 * h;
                let mass = cdf.eval((a + h - x) / r) - cdf.eval((a - x) / r);
                density[c] += mu.weights[k] * mass / h;
            }
        }
        return Ok(density);
    }
    let rule = gauss_legendre(4);
    let sub: Vec<usize> = (0..d).map(|a| ((8.0 * grid.width(a) / r).ceil() as usize).max(1)).collect();
    for k in 0..mu.len() {
        let x = mu.point(k);
        let spans: Vec<(usize, usize)> = (0..d).map(|a| cell_span(grid, a, x[a], r)).collect();
        let mut deposits: Vec<(usize, f64)> = Vec::new();
        let mut idx: Vec<usize> = spans.iter().map(|s| s.0).collect();
        loop {
            let mass = cell_integral(moll, grid, &idx, x, &sub, &rule);
            if mass > 0.0 {
                deposits.push((grid.flat_index(&idx), mass));
            }
            let mut done = true;
            for axis in (0..d).rev() {
                if idx[axis] < spans[axis].1 {
                    idx[axis] += 1;
                    done = false;
                    break;
                }
                idx[axis] = spans[axis].0;
            }
            if done {
                break;
            }
        }
        let total: f64 = deposits.iter().map(|(_, m)| m).sum();
        for (cell, m) in deposits {
            density[cell] += mu.weights[k] * m / total / volume;
        }
    }
    Ok(density)
}

fn cell_span(grid: &UniformGrid, axis: usize, x: f64, r: f64) -> (usize, usize) {
    let h = grid.width(axis);
    let n = grid.cells[axis];
    let lo = (((x - r - grid.lower[axis]) / h).floor().max(0.0) as usize).min(n - 1);
    let hi = (((x + r - grid.lower[axis]) / h).floor().max(0.0) as usize).min(n - 1);
    (lo, hi)
}

fn cell_integral(
    moll: &Mollifier,
    grid: &UniformGrid,
    idx: &[usize],
    x: &[f64],
    sub: &[usize],
    rule: &(Vec<f64>, Vec<f64>),
) -> f64 {
    let d = idx.len();
    let q = rule.0.len();
    // Enumerate sub-cells and quadrature points as a mixed-radix counter.
    let per_axis: Vec<usize> = sub.iter().map(|s| s * q).collect();
    let total: usize = per_axis.iter().product();
    let mut sum = 0.0;
    let mut point = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        let mut weight = 1.0;
        for a in (0..d).rev() {
            let j = rem % per_axis[a];
            rem /= per_axis[a];
            let (s, g) = (j / q, j % q);
            let h = grid.width(a) / sub[a] as f64;
            let a0 = grid.lower[a] + idx[a] as f64 * grid.width(a) + s as f64 * h;
            point[a] = a0 + 0.5 * h * (1.0 + rule.0[g]) - x[a];
            weight *= 0.5 * h * rule.1[g];
        }
        sum += weight * moll.density(&point);
    }
    sum
}

#[cfg(test)]
mod tests;
