//! Interaction potentials, their gradients and the nonlocal velocity field.
//!
//! Every kernel is radial, `K(x) = k(|x|)`, so gradients are evaluated as
//! `∇K(x) = g(|x|²) x` with `g(r²) = k'(r)/r`. The field generated by a
//! configuration on species `i` is
//!
//! ```text
//! E_i(x) = - Σ_j Σ_h w_{j,h} ∇K_ij(x - z_{j,h})
//! ```
//!
//! summed species-major, particle index ascending, in fixed-size blocks whose
//! partial sums are combined in block order. Parallel callers split over query
//! points only, so results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::MultiSpeciesState;
use crate::error::{Error, Result};

/// Number of sources reduced into one partial sum.
pub const REDUCTION_BLOCK: usize = 256;

/// Radial mesh size used where no closed-form extremum is available.
pub const BOUND_SAMPLES: usize = 10_000;

fn default_zero() -> f64 {
    0.0
}

fn default_one() -> f64 {
    1.0
}

/// A single radial interaction potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Zero,
    /// `a |x|² / 2`
    Quadratic { a: f64 },
    /// `-C_a exp(-|x|/l_a) + C_r exp(-|x|/l_r)`
    Morse {
        #[serde(rename = "C_a")]
        c_a: f64,
        l_a: f64,
        #[serde(rename = "C_r", default = "default_zero")]
        c_r: f64,
        #[serde(default = "default_one")]
        l_r: f64,
    },
    /// `-C_a exp(-|x|²/l_a) + C_r exp(-|x|²/l_r)`
    #[serde(rename = "gaussian")]
    GaussianCombo {
        #[serde(rename = "C_a")]
        c_a: f64,
        l_a: f64,
        #[serde(rename = "C_r", default = "default_zero")]
        c_r: f64,
        #[serde(default = "default_one")]
        l_r: f64,
    },
    /// `C / |x|^α`
    Riesz {
        #[serde(rename = "C")]
        c: f64,
        alpha: f64,
    },
    /// `C / (|x|^α + δ)`
    RegularizedRiesz {
        #[serde(rename = "C")]
        c: f64,
        alpha: f64,
        delta: f64,
    },
}

impl KernelSpec {
    /// Unregularized Riesz kernels are the only singular variant.
    pub fn is_singular(&self) -> bool {
        matches!(self, KernelSpec::Riesz { .. })
    }

    pub fn is_smooth(&self) -> bool {
        !self.is_singular()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, KernelSpec::Zero)
    }

    /// Checks parameter ranges against the ambient dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidKernel(format!("{name} must be finite, got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidKernel(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            KernelSpec::Zero => Ok(()),
            KernelSpec::Quadratic { a } => finite("a", a),
            KernelSpec::Morse { c_a, l_a, c_r, l_r } | KernelSpec::GaussianCombo { c_a, l_a, c_r, l_r } => {
                finite("C_a", c_a)?;
                finite("C_r", c_r)?;
                positive("l_a", l_a)?;
                positive("l_r", l_r)
            }
            KernelSpec::Riesz { c, alpha } => {
                positive("C", c)?;
                riesz_exponent(alpha, dim)
            }
            KernelSpec::RegularizedRiesz { c, alpha, delta } => {
                positive("C", c)?;
                positive("delta", delta)?;
                riesz_exponent(alpha, dim)
            }
        }
    }

    /// Radial profile `k(r)`.
    pub fn radial(&self, r: f64) -> Result<f64> {
        Ok(match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Quadratic { a } => 0.5 * a * r * r,
            KernelSpec::Morse { c_a, l_a, c_r, l_r } => -c_a * (-r / l_a).exp() + c_r * (-r / l_r).exp(),
            KernelSpec::GaussianCombo { c_a, l_a, c_r, l_r } => {
                let r2 = r * r;
                -c_a * (-r2 / l_a).exp() + c_r * (-r2 / l_r).exp()
            }
            KernelSpec::Riesz { c, alpha } => {
                if r == 0.0 {
                    return Err(Error::SingularEvaluation);
                }
                c * r.powf(-alpha)
            }
            KernelSpec::RegularizedRiesz { c, alpha, delta } => c / (r.powf(alpha) + delta),
        })
    }

    /// First radial derivative `k'(r)`; at `r = 0` the one-sided limit.
    pub fn radial_derivative(&self, r: f64) -> f64 {
        match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Quadratic { a } => a * r,
            KernelSpec::Morse { c_a, l_a, c_r, l_r } => {
                c_a / l_a * (-r / l_a).exp() - c_r / l_r * (-r / l_r).exp()
            }
            KernelSpec::GaussianCombo { c_a, l_a, c_r, l_r } => {
                let r2 = r * r;
                2.0 * r * (c_a / l_a * (-r2 / l_a).exp() - c_r / l_r * (-r2 / l_r).exp())
            }
            KernelSpec::Riesz { c, alpha } => -c * alpha * r.powf(-alpha - 1.0),
            KernelSpec::RegularizedRiesz { c, alpha, delta } => {
                let ra = r.powf(alpha);
                -c * alpha * r.powf(alpha - 1.0) / ((ra + delta) * (ra + delta))
            }
        }
    }

    /// Second radial derivative `k''(r)`.
    pub fn radial_second_derivative(&self, r: f64) -> f64 {
        match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Quadratic { a } => a,
            KernelSpec::Morse { c_a, l_a, c_r, l_r } => {
                -c_a / (l_a * l_a) * (-r / l_a).exp() + c_r / (l_r * l_r) * (-r / l_r).exp()
            }
            KernelSpec::GaussianCombo { c_a, l_a, c_r, l_r } => {
                let r2 = r * r;
                2.0 * c_a / l_a * (1.0 - 2.0 * r2 / l_a) * (-r2 / l_a).exp()
                    - 2.0 * c_r / l_r * (1.0 - 2.0 * r2 / l_r) * (-r2 / l_r).exp()
            }
            KernelSpec::Riesz { c, alpha } => c * alpha * (alpha + 1.0) * r.powf(-alpha - 2.0),
            KernelSpec::RegularizedRiesz { c, alpha, delta } => {
                let r = r.max(1e-300);
                let d = r.powf(alpha) + delta;
                -c * alpha / (d * d * d)
                    * ((alpha - 1.0) * r.powf(alpha - 2.0) * d - 2.0 * alpha * r.powf(2.0 * alpha - 2.0))
            }
        }
    }

    /// `g(r²) = k'(r)/r`, so that `∇K(x) = g(|x|²) x` for `x ≠ 0`.
    #[inline]
    pub fn grad_factor(&self, r2: f64) -> f64 {
        match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Quadratic { a } => a,
            KernelSpec::Morse { .. } => {
                let r = r2.sqrt();
                self.radial_derivative(r) / r
            }
            KernelSpec::GaussianCombo { c_a, l_a, c_r, l_r } => {
                let attract = if c_a != 0.0 { 2.0 * c_a / l_a * (-r2 / l_a).exp() } else { 0.0 };
                let repel = if c_r != 0.0 { 2.0 * c_r / l_r * (-r2 / l_r).exp() } else { 0.0 };
                attract - repel
            }
            KernelSpec::Riesz { c, alpha } => -c * alpha * r2.powf(-0.5 * alpha - 1.0),
            KernelSpec::RegularizedRiesz { c, alpha, delta } => {
                let ra = r2.powf(0.5 * alpha);
                let d = ra + delta;
                -c * alpha * ra / (r2 * d * d)
            }
        }
    }
}

fn riesz_exponent(alpha: f64, dim: usize) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha < dim as f64 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!(
            "Riesz exponent must lie in (0, {dim}), got {alpha}"
        )))
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `K(x)` for a point of the declared dimension.
pub fn eval_potential(spec: &KernelSpec, dim: usize, x: &[f64]) -> Result<f64> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    spec.radial(norm(x))
}

/// `∇K(x)`. The gradient at the origin is zero for every smooth variant.
pub fn eval_grad(spec: &KernelSpec, dim: usize, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    let r2: f64 = x.iter().map(|c| c * c).sum();
    if r2 == 0.0 {
        if spec.is_singular() {
            return Err(Error::SingularEvaluation);
        }
        return Ok(vec![0.0; dim]);
    }
    let g = spec.grad_factor(r2);
    Ok(x.iter().map(|c| g * c).collect())
}

/// Result of [`regularize`]; `unchanged` is set when the input was already
/// smooth and was returned as is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularized {
    pub spec: KernelSpec,
    pub unchanged: bool,
}

/// Replaces `C/|x|^α` by `C/(|x|^α + δ)`.
pub fn regularize(spec: &KernelSpec, delta: f64) -> Result<Regularized> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    match *spec {
        KernelSpec::Riesz { c, alpha } => Ok(Regularized {
            spec: KernelSpec::RegularizedRiesz { c, alpha, delta },
            unchanged: false,
        }),
        other => {
            log::warn!("regularize called on smooth kernel {other:?}; returned unchanged");
            Ok(Regularized { spec: other, unchanged: true })
        }
    }
}

/// `N×N` matrix of potentials `K_ij`; row `i` acts on species `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    dim: usize,
    species: usize,
    entries: Vec<KernelSpec>,
}

impl KernelMatrix {
    pub fn new(dim: usize, rows: Vec<Vec<KernelSpec>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be at least 1".into()));
        }
        let species = rows.len();
        if species == 0 {
            return Err(Error::InvalidKernel("kernel matrix has no rows".into()));
        }
        let mut entries = Vec::with_capacity(species * species);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != species {
                return Err(Error::InvalidKernel(format!(
                    "row {i} has {} entries, expected {species}",
                    row.len()
                )));
            }
            for (j, spec) in row.into_iter().enumerate() {
                spec.validate(dim)
                    .map_err(|e| Error::InvalidKernel(format!("entry ({i}, {j}): {e}")))?;
                if i != j && spec.is_singular() {
                    return Err(Error::InvalidKernel(format!(
                        "cross-interaction entry ({i}, {j}) must be smooth"
                    )));
                }
                entries.push(spec);
            }
        }
        Ok(Self { dim, species, entries })
    }

    pub fn uniform(dim: usize, species: usize, spec: KernelSpec) -> Result<Self> {
        Self::new(dim, vec![vec![spec; species]; species])
    }

    pub fn zero(dim: usize, species: usize) -> Self {
        Self {
            dim,
            species,
            entries: vec![KernelSpec::Zero; species * species],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn species(&self) -> usize {
        self.species
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &KernelSpec {
        &self.entries[i * self.species + j]
    }

    pub fn rows(&self) -> Vec<Vec<KernelSpec>> {
        self.entries.chunks(self.species).map(|r| r.to_vec()).collect()
    }

    pub fn is_smooth(&self) -> bool {
        self.entries.iter().all(KernelSpec::is_smooth)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.species).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    fn first_singular(&self) -> Option<(usize, usize)> {
        (0..self.species)
            .flat_map(|i| (0..self.species).map(move |j| (i, j)))
            .find(|&(i, j)| self.get(i, j).is_singular())
    }

    /// Regularizes every singular diagonal entry with the same `δ`.
    pub fn regularize_diagonal(&self, delta: f64) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.species {
            let spec = *self.get(i, i);
            if spec.is_singular() {
                out.entries[i * self.species + i] = regularize(&spec, delta)?.spec;
            }
        }
        Ok(out)
    }
}

/// Bound constants on the ball `B_{2R}`:
/// `xi = Σ sup|∇K_ij|`, `upsilon = Σ Lip(∇K_ij)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBounds {
    pub xi: f64,
    pub upsilon: f64,
    pub radius: f64,
}

/// Maximizes a radial function on `[0, rmax]`: a uniform mesh followed by a
/// golden-section refinement around the best mesh point.
fn radial_sup(f: impl Fn(f64) -> f64, rmax: f64) -> f64 {
    if rmax <= 0.0 {
        return f(0.0);
    }
    let h = rmax / BOUND_SAMPLES as f64;
    let mut best_k = 0;
    let mut best = f(0.0);
    for k in 1..=BOUND_SAMPLES {
        let v = f(k as f64 * h);
        if v > best {
            best = v;
            best_k = k;
        }
    }
    let (mut a, mut b) = (
        (best_k as f64 - 1.0).max(0.0) * h,
        ((best_k + 1) as f64 * h).min(rmax),
    );
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    best.max(fc).max(fd)
}

fn gaussian_term_sup(c: f64, l: f64, rmax: f64) -> f64 {
    let peak = (0.5 * l).sqrt();
    let r = rmax.min(peak);
    (2.0 * c * r / l * (-r * r / l).exp()).abs()
}

/// `sup_{|x| ≤ rmax} |∇K(x)|`.
fn grad_sup(spec: &KernelSpec, rmax: f64) -> f64 {
    match *spec {
        KernelSpec::Zero => 0.0,
        KernelSpec::Quadratic { a } => a.abs() * rmax,
        KernelSpec::GaussianCombo { c_a, l_a, c_r, l_r } if c_r == 0.0 || c_a == 0.0 => {
            gaussian_term_sup(c_a, l_a, rmax) + gaussian_term_sup(c_r, l_r, rmax)
        }
        KernelSpec::RegularizedRiesz { alpha, .. } if alpha < 1.0 => f64::INFINITY,
        KernelSpec::Riesz { .. } => f64::INFINITY,
        _ => radial_sup(|r| spec.radial_derivative(r).abs(), rmax),
    }
}

/// Lipschitz constant of `∇K` on `|x| ≤ rmax`, taken on `|x| > 0` where the
/// gradient jumps at the origin.
fn grad_lip(spec: &KernelSpec, rmax: f64, dim: usize) -> f64 {
    let tangential = |s: &KernelSpec| dim >= 2 && s.radial_derivative(0.0) != 0.0;
    match *spec {
        KernelSpec::Zero => 0.0,
        KernelSpec::Quadratic { a } => a.abs(),
        KernelSpec::GaussianCombo { c_a, l_a, c_r, l_r } if c_r == 0.0 || c_a == 0.0 => {
            2.0 * c_a.abs() / l_a + 2.0 * c_r.abs() / l_r
        }
        KernelSpec::GaussianCombo { .. } => radial_sup(
            |r| {
                let k2 = spec.radial_second_derivative(r).abs();
                if dim >= 2 {
                    k2.max(spec.grad_factor(r * r).abs())
                } else {
                    k2
                }
            },
            rmax,
        ),
        KernelSpec::Morse { .. } => {
            if tangential(spec) {
                f64::INFINITY
            } else {
                radial_sup(
                    |r| {
                        let k2 = spec.radial_second_derivative(r).abs();
                        if dim >= 2 && r > 0.0 {
                            k2.max((spec.radial_derivative(r) / r).abs())
                        } else {
                            k2
                        }
                    },
                    rmax,
                )
            }
        }
        KernelSpec::RegularizedRiesz { alpha, .. } => {
            let smooth_enough = alpha >= 2.0 || (alpha == 1.0 && dim == 1);
            if !smooth_enough {
                f64::INFINITY
            } else {
                radial_sup(
                    |r| {
                        let k2 = spec.radial_second_derivative(r).abs();
                        if dim >= 2 && r > 0.0 {
                            k2.max((spec.radial_derivative(r) / r).abs())
                        } else {
                            k2
                        }
                    },
                    rmax,
                )
            }
        }
        KernelSpec::Riesz { .. } => f64::INFINITY,
    }
}

/// Bound constants on the ball of radius `2R`.
pub fn kernel_bounds(matrix: &KernelMatrix, radius: f64) -> Result<KernelBounds> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    if let Some((i, j)) = matrix.first_singular() {
        return Err(Error::SingularEntry { i, j });
    }
    let rmax = 2.0 * radius;
    let (mut xi, mut upsilon) = (0.0, 0.0);
    for spec in &matrix.entries {
        xi += grad_sup(spec, rmax);
        upsilon += grad_lip(spec, rmax, matrix.dim);
    }
    Ok(KernelBounds { xi, upsilon, radius })
}

/// What to do when a singular diagonal kernel meets a coincident pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfPairPolicy {
    #[default]
    Skip,
    Error,
}

/// Field `E_i` at a single point, written into `out`.
pub fn field_at(
    matrix: &KernelMatrix,
    state: &MultiSpeciesState,
    i: usize,
    x: &[f64],
    policy: SelfPairPolicy,
    out: &mut [f64],
) -> Result<()> {
    let d = matrix.dim();
    if x.len() != d || out.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    out.fill(0.0);
    let mut partial = [0.0f64; 8];
    let mut heap_partial;
    let partial: &mut [f64] = if d <= 8 {
        &mut partial[..d]
    } else {
        heap_partial = vec![0.0; d];
        &mut heap_partial
    };
    for (j, source) in state.species().iter().enumerate() {
        let spec = matrix.get(i, j);
        if spec.is_zero() {
            continue;
        }
        let singular = spec.is_singular();
        let pos = source.positions();
        let w = source.weights();
        for block in (0..w.len()).step_by(REDUCTION_BLOCK) {
            partial.fill(0.0);
            let end = (block + REDUCTION_BLOCK).min(w.len());
            for h in block..end {
                let z = &pos[h * d..(h + 1) * d];
                let mut r2 = 0.0;
                for c in 0..d {
                    let diff = x[c] - z[c];
                    r2 += diff * diff;
                }
                if r2 == 0.0 {
                    if singular && (j != i || policy == SelfPairPolicy::Error) {
                        return Err(Error::SingularEvaluation);
                    }
                    continue;
                }
                let wg = w[h] * spec.grad_factor(r2);
                for c in 0..d {
                    partial[c] += wg * (x[c] - z[c]);
                }
            }
            for c in 0..d {
                out[c] += partial[c];
            }
        }
    }
    for v in out.iter_mut() {
        *v = -*v;
    }
    Ok(())
}

/// `E_i` at each query point (flattened, `d` coordinates per point).
pub fn assemble_field(
    matrix: &KernelMatrix,
    state: &MultiSpeciesState,
    i: usize,
    queries: &[f64],
    policy: SelfPairPolicy,
) -> Result<Vec<f64>> {
    let d = matrix.dim();
    check_compatible(matrix, state)?;
    if i >= matrix.species() {
        return Err(Error::InvalidParameter(format!("species index {i} out of range")));
    }
    if !queries.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch { expected: d, got: queries.len() % d });
    }
    let mut out = vec![0.0; queries.len()];
    out.par_chunks_mut(d)
        .zip(queries.par_chunks(d))
        .try_for_each(|(o, x)| field_at(matrix, state, i, x, policy, o))?;
    Ok(out)
}

/// Fields of every species evaluated at that species' own particles.
pub fn species_fields(
    matrix: &KernelMatrix,
    state: &MultiSpeciesState,
    policy: SelfPairPolicy,
) -> Result<Vec<Vec<f64>>> {
    (0..state.species().len())
        .map(|i| assemble_field(matrix, state, i, state.species()[i].positions(), policy))
        .collect()
}

pub(crate) fn check_compatible(matrix: &KernelMatrix, state: &MultiSpeciesState) -> Result<()> {
    if state.species().len() != matrix.species() {
        return Err(Error::SpeciesCountMismatch {
            left: matrix.species(),
            right: state.species().len(),
        });
    }
    if state.dim() != matrix.dim() {
        return Err(Error::DimensionMismatch { expected: matrix.dim(), got: state.dim() });
    }
    Ok(())
}
