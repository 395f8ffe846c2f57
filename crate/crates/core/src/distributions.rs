//! Empirical quantile functions, one-dimensional Wasserstein distances,
//! barycenters and the conversion between samples, histograms, densities and
//! spline-encoded quantile functions.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::monotone_projection::MonotoneProjector;
use crate::scalar::Real;
use crate::spline_basis::{is_monotone, midpoint_grid, GridFitter, SplineBasis, DEFAULT_FIT_GRID};

/// Midpoints used by the quadrature form of the Wasserstein distance.
pub const W2_QUADRATURE_POINTS: usize = 10_000;

/// Tolerance on the total mass of a histogram.
pub const MASS_TOL: f64 = 1e-12;

/// Flat stretches of a quantile spline longer than this are reported as atoms.
pub const ATOM_MIN_LENGTH: f64 = 1e-6;

/// Anything with a quantile function on `(0, 1)`.
pub trait QuantileFunction<T: Real> {
    /// `F⁻(t)`; `t` is not range-checked.
    fn quantile(&self, t: T) -> T;
}

/// Adapter turning a closure into a [`QuantileFunction`].
#[derive(Debug, Clone, Copy)]
pub struct QuantileFn<F>(pub F);

impl<T: Real, F: Fn(T) -> T> QuantileFunction<T> for QuantileFn<F> {
    fn quantile(&self, t: T) -> T {
        (self.0)(t)
    }
}

/// A finite sample or a histogram.
#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalDistribution<T: Real> {
    /// Sorted ascending.
    Samples(Vec<T>),
    /// Contiguous bins `[edges[i], edges[i+1])` carrying `masses[i]`.
    Histogram { edges: Vec<T>, masses: Vec<T> },
}

impl<T: Real> EmpiricalDistribution<T> {
    /// Sorts the values. Rejects empty input and non-finite values.
    pub fn from_samples(mut values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        if values.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::invalid("sample contains non-finite values"));
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self::Samples(values))
    }

    /// Histogram with masses summing to one.
    pub fn from_histogram(edges: Vec<T>, masses: Vec<T>) -> Result<Self> {
        validate_edges(&edges, &masses)?;
        let total = masses.iter().fold(T::zero(), |a, &b| a + b);
        if (total - T::one()).abs() > T::lit(MASS_TOL).max(T::default_epsilon() * T::lit(16.0)) {
            return Err(Error::invalid(format!("histogram masses sum to {total}, not 1")));
        }
        Ok(Self::Histogram { edges, masses })
    }

    /// Histogram from nonnegative weights, rescaled to unit mass.
    pub fn from_weights(edges: Vec<T>, weights: Vec<T>) -> Result<Self> {
        validate_edges(&edges, &weights)?;
        let total = weights.iter().fold(T::zero(), |a, &b| a + b);
        if total <= T::zero() {
            return Err(Error::invalid("histogram has zero total mass"));
        }
        let masses = weights.into_iter().map(|w| w / total).collect();
        Ok(Self::Histogram { edges, masses })
    }

    /// Point mass at `x`.
    pub fn dirac(x: T) -> Self {
        Self::Samples(vec![x])
    }

    /// Smallest and largest point of the support.
    pub fn support(&self) -> (T, T) {
        match self {
            Self::Samples(v) => (v[0], v[v.len() - 1]),
            Self::Histogram { edges, masses } => {
                let first = masses.iter().position(|m| *m > T::zero()).unwrap_or(0);
                let last = masses.iter().rposition(|m| *m > T::zero()).unwrap_or(masses.len() - 1);
                (edges[first], edges[last + 1])
            }
        }
    }

    /// Mean of the distribution.
    pub fn mean(&self) -> T {
        match self {
            Self::Samples(v) => v.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(v.len()),
            Self::Histogram { edges, masses } => masses
                .iter()
                .enumerate()
                .fold(T::zero(), |a, (i, &m)| a + m * (edges[i] + edges[i + 1]) * T::lit(0.5)),
        }
    }

    /// Checked quantile: left-continuous inverse of the cdf at `t ∈ (0, 1)`.
    pub fn quantile_at(&self, t: T) -> Result<T> {
        if !(t > T::zero() && t < T::one()) {
            return Err(Error::domain(format!("quantile level {t} is outside (0, 1)")));
        }
        Ok(self.quantile(t))
    }
}

fn validate_edges<T: Real>(edges: &[T], masses: &[T]) -> Result<()> {
    if masses.is_empty() || edges.len() != masses.len() + 1 {
        return Err(Error::invalid(format!(
            "{} edges for {} bins",
            edges.len(),
            masses.len()
        )));
    }
    if edges.iter().any(|e| !e.is_finite_value()) || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("histogram edges must be finite and strictly increasing"));
    }
    if masses.iter().any(|m| !m.is_finite_value() || *m < T::zero()) {
        return Err(Error::invalid("histogram masses must be finite and nonnegative"));
    }
    Ok(())
}

impl<T: Real> QuantileFunction<T> for EmpiricalDistribution<T> {
    fn quantile(&self, t: T) -> T {
        match self {
            Self::Samples(v) => {
                let n = v.len();
                // ⌈n t⌉ with a guard against products like 0.3 * 10 = 3.0000000000000004.
                let nt = T::from_count(n) * t;
                let guard = T::default_epsilon() * T::lit(8.0) * T::from_count(n);
                let k = (nt - guard).ceil().as_f64();
                let k = if k < 1.0 { 1 } else { (k as usize).min(n) };
                v[k - 1]
            }
            Self::Histogram { edges, masses } => {
                let mut cum = T::zero();
                let last = masses.iter().rposition(|m| *m > T::zero()).unwrap_or(0);
                for (i, &m) in masses.iter().enumerate() {
                    if m <= T::zero() {
                        continue;
                    }
                    if cum + m >= t || i == last {
                        let frac = ((t - cum) / m).max(T::zero()).min(T::one());
                        return edges[i] + frac * (edges[i + 1] - edges[i]);
                    }
                    cum += m;
                }
                edges[edges.len() - 1]
            }
        }
    }
}

/// Quantile function encoded by nondecreasing spline coefficients.
#[derive(Debug, Clone)]
pub struct QuantileSpline<T: Real> {
    coeffs: DVector<T>,
    basis: Arc<SplineBasis<T>>,
}

impl<T: Real> PartialEq for QuantileSpline<T> {
    fn eq(&self, other: &Self) -> bool {
        self.basis.size() == other.basis.size() && self.coeffs == other.coeffs
    }
}

impl<T: Real> QuantileSpline<T> {
    /// Rejects coefficients that are not nondecreasing.
    pub fn new(basis: Arc<SplineBasis<T>>, coeffs: DVector<T>) -> Result<Self> {
        Self::check_len(&basis, &coeffs)?;
        if !is_monotone(&coeffs) {
            return Err(Error::invalid("quantile spline coefficients are not nondecreasing"));
        }
        Ok(Self { coeffs, basis })
    }

    /// Like [`QuantileSpline::new`] with an explicit tolerance on `G a`,
    /// for outputs of iterative solvers.
    pub fn with_tolerance(basis: Arc<SplineBasis<T>>, coeffs: DVector<T>, tol: T) -> Result<Self> {
        Self::check_len(&basis, &coeffs)?;
        if coeffs.as_slice().windows(2).any(|w| w[1] - w[0] < -tol) {
            return Err(Error::invalid("quantile spline coefficients are not nondecreasing"));
        }
        Ok(Self { coeffs, basis })
    }

    fn check_len(basis: &SplineBasis<T>, coeffs: &DVector<T>) -> Result<()> {
        if coeffs.len() != basis.size() {
            return Err(Error::invalid(format!(
                "{} coefficients for a basis of size {}",
                coeffs.len(),
                basis.size()
            )));
        }
        Ok(())
    }

    pub fn coeffs(&self) -> &DVector<T> {
        &self.coeffs
    }

    pub fn basis(&self) -> &Arc<SplineBasis<T>> {
        &self.basis
    }

    pub fn into_coeffs(self) -> DVector<T> {
        self.coeffs
    }

    /// Values on `n ≥ 2` equispaced levels `0, 1/(n-1), …, 1`.
    pub fn quantile_grid(&self, n: usize) -> Vec<T> {
        let last = T::from_count(n.max(2) - 1);
        (0..n)
            .map(|i| self.basis.evaluate(&self.coeffs, T::from_count(i) / last))
            .collect()
    }

    /// Mean of the encoded distribution, `∫₀¹ F⁻(t) dt`.
    pub fn mean(&self) -> T {
        // ∫ψ_j = column sums of E, because the basis sums to one.
        let ones = DVector::from_element(self.coeffs.len(), T::one());
        (self.basis.e() * ones).dot(&self.coeffs)
    }

    pub fn same_basis(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || *self.basis == *other.basis
    }
}

impl<T: Real> QuantileFunction<T> for QuantileSpline<T> {
    fn quantile(&self, t: T) -> T {
        self.basis.evaluate(&self.coeffs, t)
    }
}

/// `(∫₀¹ |F⁻_a - F⁻_b|²)^{1/2}` by midpoint quadrature on `points` levels.
pub fn wasserstein2_quadrature<T: Real>(
    a: &impl QuantileFunction<T>,
    b: &impl QuantileFunction<T>,
    points: usize,
) -> T {
    let n = T::from_count(points);
    let mut acc = T::zero();
    for i in 0..points {
        let t = (T::from_count(i) + T::lit(0.5)) / n;
        let d = a.quantile(t) - b.quantile(t);
        acc += d * d;
    }
    (acc / n).sqrt()
}

/// Exact for equal-size samples (sorted matching), otherwise midpoint
/// quadrature with [`W2_QUADRATURE_POINTS`] levels.
pub fn wasserstein2<T: Real>(a: &EmpiricalDistribution<T>, b: &EmpiricalDistribution<T>) -> T {
    if let (EmpiricalDistribution::Samples(x), EmpiricalDistribution::Samples(y)) = (a, b) {
        if x.len() == y.len() {
            let acc = x
                .iter()
                .zip(y)
                .fold(T::zero(), |acc, (&p, &q)| acc + (p - q) * (p - q));
            return (acc / T::from_count(x.len())).sqrt();
        }
    }
    wasserstein2_quadrature(a, b, W2_QUADRATURE_POINTS)
}

/// `‖a - b‖_E`, which is the exact Wasserstein distance between the two
/// spline-encoded distributions.
pub fn wasserstein2_spline<T: Real>(a: &QuantileSpline<T>, b: &QuantileSpline<T>) -> Result<T> {
    if !a.same_basis(b) {
        return Err(Error::invalid("quantile splines use different bases"));
    }
    Ok(a.basis.distance(&a.coeffs, &b.coeffs))
}

/// Wasserstein barycenter: the coefficientwise mean.
pub fn barycenter<T: Real>(quantiles: &[QuantileSpline<T>]) -> Result<QuantileSpline<T>> {
    let first = quantiles
        .first()
        .ok_or_else(|| Error::invalid("barycenter of an empty list"))?;
    let mut sum = DVector::zeros(first.coeffs.len());
    for q in quantiles {
        if !q.same_basis(first) {
            return Err(Error::invalid("quantile splines use different bases"));
        }
        sum += &q.coeffs;
    }
    let mean = sum / T::from_count(quantiles.len());
    QuantileSpline::with_tolerance(first.basis.clone(), mean, T::lit(1e-10))
}

/// Least-squares fit on a fixed quantile grid followed by metric projection
/// onto the monotone cone.
///
/// The fitter and projector are built once, so encoding many distributions
/// with the same encoder is cheap. Encoding is independent per distribution.
#[derive(Debug, Clone)]
pub struct Encoder<T: Real> {
    basis: Arc<SplineBasis<T>>,
    levels: Vec<T>,
    fitter: GridFitter<T>,
    projector: MonotoneProjector<T>,
}

impl<T: Real> Encoder<T> {
    /// Encoder on [`DEFAULT_FIT_GRID`] midpoint levels.
    pub fn new(basis: Arc<SplineBasis<T>>) -> Result<Self> {
        Self::with_grid(basis, DEFAULT_FIT_GRID)
    }

    pub fn with_grid(basis: Arc<SplineBasis<T>>, grid: usize) -> Result<Self> {
        let levels = midpoint_grid(grid);
        let fitter = GridFitter::new(&basis, &levels)?;
        let projector = MonotoneProjector::new(basis.e())?;
        Ok(Self { basis, levels, fitter, projector })
    }

    pub fn basis(&self) -> &Arc<SplineBasis<T>> {
        &self.basis
    }

    /// Unconstrained least-squares coefficients, before projection.
    pub fn fit_raw(&self, q: &impl QuantileFunction<T>) -> Result<DVector<T>> {
        let ys: Vec<T> = self.levels.iter().map(|&t| q.quantile(t)).collect();
        if ys.iter().any(|y| !y.is_finite_value()) {
            return Err(Error::invalid("quantile function is not finite on the fit grid"));
        }
        self.fitter.fit(&ys)
    }

    pub fn encode_function(&self, q: &impl QuantileFunction<T>) -> Result<QuantileSpline<T>> {
        let raw = self.fit_raw(q)?;
        self.project(&raw)
    }

    pub fn encode(&self, dist: &EmpiricalDistribution<T>) -> Result<QuantileSpline<T>> {
        self.encode_function(dist)
    }

    /// Encodes every distribution, in parallel.
    pub fn encode_all(&self, dists: &[EmpiricalDistribution<T>]) -> Result<Vec<QuantileSpline<T>>> {
        dists.par_iter().map(|d| self.encode(d)).collect()
    }

    /// Metric projection of arbitrary coefficients onto the cone.
    pub fn project(&self, coeffs: &DVector<T>) -> Result<QuantileSpline<T>> {
        let x = self.projector.project(coeffs)?.x;
        QuantileSpline::with_tolerance(self.basis.clone(), x, T::lit(1e-10))
    }
}

/// One-shot [`Encoder::encode`].
pub fn encode<T: Real>(
    dist: &EmpiricalDistribution<T>,
    basis: &Arc<SplineBasis<T>>,
) -> Result<QuantileSpline<T>> {
    Encoder::new(basis.clone())?.encode(dist)
}

/// Point mass found while decoding a quantile spline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom<T: Real> {
    pub location: T,
    pub mass: T,
}

/// Density on a grid plus the atoms that were removed from it.
#[derive(Debug, Clone)]
pub struct DecodedDensity<T: Real> {
    pub grid: Vec<T>,
    pub density: Vec<T>,
    /// Flat stretches of the quantile function longer than
    /// [`ATOM_MIN_LENGTH`]; their mass is excluded from `density`.
    pub atoms: Vec<Atom<T>>,
}

impl<T: Real> DecodedDensity<T> {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> T {
        let half = T::lit(0.5);
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .fold(T::zero(), |acc, (x, f)| acc + (x[1] - x[0]) * (f[0] + f[1]) * half)
    }
}

/// Flat stretches of the spline: knot intervals on which three consecutive
/// coefficients coincide, merged when adjacent.
fn flat_atoms<T: Real>(q: &QuantileSpline<T>) -> Vec<Atom<T>> {
    let a = q.coeffs();
    let l = q.basis().intervals();
    let width = T::one() / T::from_count(l);
    let mut atoms: Vec<Atom<T>> = Vec::new();
    let mut prev_flat = false;
    for m in 0..l {
        let flat = a[m] == a[m + 1] && a[m + 1] == a[m + 2];
        if flat {
            if prev_flat {
                atoms.last_mut().unwrap().mass += width;
            } else {
                atoms.push(Atom { location: a[m + 1], mass: width });
            }
        }
        prev_flat = flat;
    }
    atoms.retain(|at| at.mass > T::lit(ATOM_MIN_LENGTH));
    atoms
}

/// Density of the pushforward of `U(0, 1)` through the quantile spline `q`
/// on `grid_size` equispaced points of `[q(0), q(1)]`.
///
/// The cdf is obtained by bisection on the spline and differentiated by
/// central differences. Atoms (flat stretches) are reported separately and
/// their jumps are removed from the cdf before differencing.
pub fn decode_pdf<T: Real>(q: &QuantileSpline<T>, grid_size: usize) -> Result<DecodedDensity<T>> {
    if grid_size < 2 {
        return Err(Error::invalid("decode grid needs at least 2 points"));
    }
    let lo = q.quantile(T::zero());
    let hi = q.quantile(T::one());
    let atoms = flat_atoms(q);
    let span = hi - lo;
    if span <= T::default_epsilon() * (T::one() + lo.abs()) {
        return Ok(DecodedDensity {
            grid: vec![lo; grid_size],
            density: vec![T::zero(); grid_size],
            atoms: vec![Atom { location: lo, mass: T::one() }],
        });
    }
    let h = span / T::from_count(grid_size - 1);
    let grid: Vec<T> = (0..grid_size)
        .map(|i| if i + 1 == grid_size { hi } else { lo + h * T::from_count(i) })
        .collect();
    // Continuous part of the cdf: F(x) minus the atoms at or below x.
    let cdf: Vec<T> = grid
        .iter()
        .map(|&x| {
            let jumps = atoms
                .iter()
                .filter(|a| a.location <= x)
                .fold(T::zero(), |s, a| s + a.mass);
            invert(q, x) - jumps
        })
        .collect();
    let n = grid_size;
    let density = (0..n)
        .map(|i| {
            let (l, r) = match i {
                0 => (0, 1),
                _ if i + 1 == n => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            ((cdf[r] - cdf[l]) / (grid[r] - grid[l])).max(T::zero())
        })
        .collect();
    Ok(DecodedDensity { grid, density, atoms })
}

/// `sup{t : q(t) ≤ x}` by bisection.
fn invert<T: Real>(q: &QuantileSpline<T>, x: T) -> T {
    if q.quantile(T::one()) <= x {
        return T::one();
    }
    if q.quantile(T::zero()) > x {
        return T::zero();
    }
    let (mut a, mut b) = (T::zero(), T::one());
    let half = T::lit(0.5);
    for _ in 0..64 {
        let m = (a + b) * half;
        if m <= a || m >= b {
            break;
        }
        if q.quantile(m) <= x {
            a = m;
        } else {
            b = m;
        }
    }
    (a + b) * half
}
