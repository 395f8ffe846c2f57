//! Quadratic B-spline basis on `[0, 1]` with clamped uniform knots.
//!
//! A spline `f = Σ a_j ψ_j` in this basis is nondecreasing if and only if its
//! coefficients are nondecreasing, which is what lets the rest of the crate
//! identify quantile functions with the polyhedral cone `{a : G a ≥ 0}`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Polynomial degree of every basis handled here.
pub const DEGREE: usize = 2;

/// Number of equispaced evaluation points used when fitting a function.
pub const DEFAULT_FIT_GRID: usize = 1000;

/// Absolute tolerance of [`is_monotone`].
pub const MONOTONE_TOL: f64 = 1e-12;

/// L2 Gram matrices of the basis functions and of their first derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GramPair<T: Real> {
    /// `E[i][j] = <ψ_i, ψ_j>`.
    pub e: DMatrix<T>,
    /// `E'[i][j] = <ψ_i', ψ_j'>`.
    pub e_prime: DMatrix<T>,
}

/// `(J-1) × J` matrix of adjacent differences; row `i` is `e_{i+1} - e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix<T: Real> {
    matrix: DMatrix<T>,
}

impl<T: Real> DifferenceMatrix<T> {
    pub fn new(size: usize) -> Self {
        let mut matrix = DMatrix::zeros(size.saturating_sub(1), size);
        for i in 0..size.saturating_sub(1) {
            matrix[(i, i)] = -T::one();
            matrix[(i, i + 1)] = T::one();
        }
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// Number of columns, i.e. the basis size.
    pub fn size(&self) -> usize {
        self.matrix.ncols()
    }

    /// `G v` without forming the product explicitly.
    pub fn apply(&self, v: &DVector<T>) -> DVector<T> {
        DVector::from_fn(v.len().saturating_sub(1), |i, _| v[i + 1] - v[i])
    }
}

/// Clamped uniform quadratic B-spline basis with `J` functions on `[0, 1]`.
///
/// The Gram matrices and the difference matrix are computed once at
/// construction; the value is immutable afterwards.
#[derive(Debug, Clone)]
pub struct SplineBasis<T: Real> {
    size: usize,
    knots: Vec<T>,
    gram: GramPair<T>,
    diff: DifferenceMatrix<T>,
}

impl<T: Real> PartialEq for SplineBasis<T> {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size
    }
}

impl<T: Real> SplineBasis<T> {
    /// Builds the basis with `size` functions. Requires `size >= 4`.
    pub fn new(size: usize) -> Result<Self> {
        if size < 4 {
            return Err(Error::invalid(format!(
                "basis size must be at least 4, got {size}"
            )));
        }
        let intervals = size - DEGREE;
        let mut knots = Vec::with_capacity(size + DEGREE + 1);
        knots.extend([T::zero(); DEGREE]);
        for i in 0..=intervals {
            knots.push(T::from_count(i) / T::from_count(intervals));
        }
        knots.extend([T::one(); DEGREE]);

        let mut basis = Self {
            size,
            knots,
            gram: GramPair {
                e: DMatrix::zeros(size, size),
                e_prime: DMatrix::zeros(size, size),
            },
            diff: DifferenceMatrix::new(size),
        };
        basis.gram = basis.compute_gram();
        Ok(basis)
    }

    /// Number of basis functions `J`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of knot intervals `J - 2`.
    pub fn intervals(&self) -> usize {
        self.size - DEGREE
    }

    /// Full clamped knot vector, length `J + 3`.
    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn gram(&self) -> &GramPair<T> {
        &self.gram
    }

    /// Shorthand for the Gram matrix `E`.
    pub fn e(&self) -> &DMatrix<T> {
        &self.gram.e
    }

    pub fn difference_matrix(&self) -> &DifferenceMatrix<T> {
        &self.diff
    }

    /// Greville abscissae `(t_{j+1} + t_{j+2}) / 2`, one per basis function.
    pub fn greville(&self) -> Vec<T> {
        (0..self.size)
            .map(|j| (self.knots[j + 1] + self.knots[j + 2]) * T::lit(0.5))
            .collect()
    }

    /// Schoenberg variation-diminishing approximation: coefficients are `f`
    /// sampled at the Greville abscissae. Nondecreasing `f` gives monotone
    /// coefficients, and the sup error is `O(J^-2)` for smooth `f`.
    pub fn quasi_interpolant(&self, f: impl Fn(T) -> T) -> DVector<T> {
        DVector::from_vec(self.greville().into_iter().map(f).collect())
    }

    /// Index of the knot interval containing `x`; `x = 1` belongs to the last one.
    fn interval_of(&self, x: T) -> usize {
        let l = self.intervals();
        let m = (x * T::from_count(l)).floor().as_f64();
        if m <= 0.0 {
            0
        } else {
            (m as usize).min(l - 1)
        }
    }

    /// Values of the three basis functions that may be nonzero at `x`.
    ///
    /// Returns the index of the first of them and their values. `x` is not
    /// range-checked.
    pub fn eval_local(&self, x: T) -> (usize, [T; 3]) {
        let m = self.interval_of(x);
        let span = m + DEGREE;
        let t = &self.knots;
        let mut n = [T::zero(); 3];
        let mut left = [T::zero(); 3];
        let mut right = [T::zero(); 3];
        n[0] = T::one();
        for j in 1..=DEGREE {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (m, n)
    }

    /// First derivatives of the three locally nonzero basis functions at `x`.
    pub fn eval_local_derivative(&self, x: T) -> (usize, [T; 3]) {
        let m = self.interval_of(x);
        let span = m + DEGREE;
        let t = &self.knots;
        // Degree-one B-splines N_{span-1,1} and N_{span,1} are the only
        // nonzero ones on [t_span, t_{span+1}).
        let width = t[span + 1] - t[span];
        let lin = |i: usize| -> T {
            if i + 1 == span {
                (t[span + 1] - x) / width
            } else if i == span {
                (x - t[span]) / width
            } else {
                T::zero()
            }
        };
        let two = T::lit(2.0);
        let ratio = |num: T, den: T| if den > T::zero() { num / den } else { T::zero() };
        let mut d = [T::zero(); 3];
        for (slot, i) in (m..m + 3).enumerate() {
            d[slot] = ratio(two * lin(i), t[i + 2] - t[i])
                - ratio(two * lin(i + 1), t[i + 3] - t[i + 1]);
        }
        (m, d)
    }

    /// All `J` basis function values at `x ∈ [0, 1]`.
    pub fn eval(&self, x: T) -> Result<DVector<T>> {
        check_unit(x)?;
        let (m, vals) = self.eval_local(x);
        let mut out = DVector::zeros(self.size);
        for (k, v) in vals.iter().enumerate() {
            out[m + k] = *v;
        }
        Ok(out)
    }

    /// Evaluates the spline with the given coefficients at `x` (unchecked range).
    pub fn evaluate(&self, coeffs: &DVector<T>, x: T) -> T {
        let (m, vals) = self.eval_local(x);
        vals[0] * coeffs[m] + vals[1] * coeffs[m + 1] + vals[2] * coeffs[m + 2]
    }

    /// First derivative of the spline with the given coefficients at `x`.
    pub fn evaluate_derivative(&self, coeffs: &DVector<T>, x: T) -> T {
        let (m, d) = self.eval_local_derivative(x);
        d[0] * coeffs[m] + d[1] * coeffs[m + 1] + d[2] * coeffs[m + 2]
    }

    // Three-point Gauss-Legendre per interval integrates the degree-4
    // products exactly.
    fn compute_gram(&self) -> GramPair<T> {
        let j = self.size;
        let mut e = DMatrix::zeros(j, j);
        let mut e_prime = DMatrix::zeros(j, j);
        let half = T::lit(0.5);
        let offset = T::lit((0.6f64).sqrt());
        let nodes = [-offset, T::zero(), offset];
        let weights = [T::lit(5.0 / 9.0), T::lit(8.0 / 9.0), T::lit(5.0 / 9.0)];
        let l = self.intervals();
        for m in 0..l {
            let a = T::from_count(m) / T::from_count(l);
            let b = T::from_count(m + 1) / T::from_count(l);
            let mid = (a + b) * half;
            let rad = (b - a) * half;
            for (node, weight) in nodes.iter().zip(weights.iter()) {
                let x = mid + rad * *node;
                let w = *weight * rad;
                let (first, v) = self.eval_local(x);
                let (_, d) = self.eval_local_derivative(x);
                debug_assert_eq!(first, m);
                for p in 0..3 {
                    for q in 0..3 {
                        e[(m + p, m + q)] += w * v[p] * v[q];
                        e_prime[(m + p, m + q)] += w * d[p] * d[q];
                    }
                }
            }
        }
        GramPair { e, e_prime }
    }

    /// Least-squares coefficients of `(x, y)` samples against the basis.
    ///
    /// No monotonicity is imposed.
    pub fn fit_coefficients(&self, samples: &[(T, T)]) -> Result<DVector<T>> {
        let xs: Vec<T> = samples.iter().map(|s| s.0).collect();
        let ys: Vec<T> = samples.iter().map(|s| s.1).collect();
        GridFitter::new(self, &xs)?.fit(&ys)
    }

    /// Squared E-norm `vᵀ E v`.
    pub fn norm_sq(&self, v: &DVector<T>) -> T {
        quad_form(&self.gram.e, v)
    }

    /// E-inner product `uᵀ E v`.
    pub fn inner(&self, u: &DVector<T>, v: &DVector<T>) -> T {
        bilinear(&self.gram.e, u, v)
    }

    /// E-norm distance between two coefficient vectors.
    pub fn distance(&self, u: &DVector<T>, v: &DVector<T>) -> T {
        let d = u - v;
        self.norm_sq(&d).max(T::zero()).sqrt()
    }
}

/// Convenience constructor mirroring [`SplineBasis::new`].
pub fn make_basis<T: Real>(size: usize) -> Result<SplineBasis<T>> {
    SplineBasis::new(size)
}

/// `true` iff the coefficients are nondecreasing up to [`MONOTONE_TOL`].
pub fn is_monotone<T: Real>(coeffs: &DVector<T>) -> bool {
    let tol = T::lit(MONOTONE_TOL);
    coeffs
        .as_slice()
        .windows(2)
        .all(|w| w[1] - w[0] >= -tol)
}

fn check_unit<T: Real>(x: T) -> Result<()> {
    if x >= T::zero() && x <= T::one() {
        Ok(())
    } else {
        Err(Error::domain(format!("x = {x} is outside [0, 1]")))
    }
}

/// `n` midpoints `(i + 1/2) / n` of a uniform partition of `(0, 1)`.
pub fn midpoint_grid<T: Real>(n: usize) -> Vec<T> {
    let nn = T::from_count(n);
    (0..n)
        .map(|i| (T::from_count(i) + T::lit(0.5)) / nn)
        .collect()
}

pub(crate) fn quad_form<T: Real>(m: &DMatrix<T>, v: &DVector<T>) -> T {
    bilinear(m, v, v)
}

pub(crate) fn bilinear<T: Real>(m: &DMatrix<T>, u: &DVector<T>, v: &DVector<T>) -> T {
    let mv = m * v;
    u.dot(&mv)
}

/// Least-squares fitting on a fixed set of abscissae.
///
/// Factorizes the normal equations once so that many functions sampled on
/// the same points can be fitted cheaply.
#[derive(Debug, Clone)]
pub struct GridFitter<T: Real> {
    rows: Vec<(usize, [T; 3])>,
    chol: Cholesky<T, Dyn>,
    size: usize,
}

impl<T: Real> GridFitter<T> {
    pub fn new(basis: &SplineBasis<T>, xs: &[T]) -> Result<Self> {
        let j = basis.size();
        if xs.len() < j {
            return Err(Error::SingularFit(format!(
                "{} samples for {} basis functions",
                xs.len(),
                j
            )));
        }
        let mut rows = Vec::with_capacity(xs.len());
        let mut normal = DMatrix::<T>::zeros(j, j);
        for &x in xs {
            check_unit(x)?;
            let (m, v) = basis.eval_local(x);
            for p in 0..3 {
                for q in 0..3 {
                    normal[(m + p, m + q)] += v[p] * v[q];
                }
            }
            rows.push((m, v));
        }
        let max_diag = normal.diagonal().max();
        let chol = Cholesky::new(normal).ok_or_else(|| {
            Error::SingularFit("design matrix is rank deficient".into())
        })?;
        // A numerically singular design still factorizes; reject tiny pivots.
        let l = chol.l_dirty();
        let min_pivot = (0..j).map(|i| l[(i, i)] * l[(i, i)]).fold(T::infinity(), |a, b| a.min(b));
        if min_pivot <= max_diag * T::lit(1e-12) {
            return Err(Error::SingularFit(
                "design matrix is numerically rank deficient".into(),
            ));
        }
        Ok(Self { rows, chol, size: j })
    }

    /// Number of abscissae.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn fit(&self, ys: &[T]) -> Result<DVector<T>> {
        if ys.len() != self.rows.len() {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                self.rows.len(),
                ys.len()
            )));
        }
        let mut rhs = DVector::zeros(self.size);
        for ((m, v), &y) in self.rows.iter().zip(ys) {
            for p in 0..3 {
                rhs[m + p] += v[p] * y;
            }
        }
        Ok(self.chol.solve(&rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn knot_vectors() {
        let b = SplineBasis::<f64>::new(4).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0]);
        let b = SplineBasis::<f64>::new(20).unwrap();
        assert_eq!(b.intervals(), 18);
        let inner = &b.knots()[2..=20];
        for w in inner.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 1.0 / 18.0, epsilon = 1e-15);
        }
        assert!(matches!(
            SplineBasis::<f64>::new(3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn boundary_values_are_interpolatory() {
        let b = SplineBasis::<f64>::new(7).unwrap();
        let v0 = b.eval(0.0).unwrap();
        assert_eq!(v0[0], 1.0);
        assert!(v0.iter().skip(1).all(|&x| x == 0.0));
        let v1 = b.eval(1.0).unwrap();
        assert_abs_diff_eq!(v1[6], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_value_for_four_functions() {
        // Knots {0,0,0,1/2,1,1,1}: at the interior knot ψ1 = 2(1-x)^2 = 1/2,
        // ψ2 = 2x^2 = 1/2, and the boundary functions vanish.
        let b = SplineBasis::<f64>::new(4).unwrap();
        let v = b.eval(0.5).unwrap();
        let expected = [0.0, 0.5, 0.5, 0.0];
        for (a, e) in v.iter().zip(expected) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn out_of_range_is_a_domain_error() {
        let b = SplineBasis::<f64>::new(5).unwrap();
        assert!(matches!(b.eval(-0.1), Err(Error::Domain(_))));
        assert!(matches!(b.eval(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn difference_matrix_rows() {
        let g = DifferenceMatrix::<f64>::new(4);
        assert_eq!(g.matrix().shape(), (3, 4));
        let v = DVector::from_vec(vec![1.0, 3.0, 2.0, 2.0]);
        assert_eq!(g.apply(&v), g.matrix() * &v);
    }

    #[test]
    fn monotone_check() {
        assert!(is_monotone(&DVector::from_vec(vec![0.0, 1.0, 2.0])));
        assert!(!is_monotone(&DVector::from_vec(vec![0.0, 2.0, 1.0])));
        assert!(is_monotone(&DVector::from_vec(vec![1.0, 1.0 - 1e-13])));
    }

    #[test]
    fn fit_reproduces_constants_and_linears() {
        let b = SplineBasis::<f64>::new(9).unwrap();
        let grid = midpoint_grid::<f64>(DEFAULT_FIT_GRID);
        let fitter = GridFitter::new(&b, &grid).unwrap();
        let c = fitter.fit(&vec![2.5; grid.len()]).unwrap();
        for v in c.iter() {
            assert_abs_diff_eq!(*v, 2.5, epsilon = 1e-12);
        }
        let lin = fitter.fit(&grid).unwrap();
        let worst = grid
            .iter()
            .map(|&x| (b.evaluate(&lin, x) - x).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "max error {worst}");
    }

    #[test]
    fn too_few_samples_is_singular() {
        let b = SplineBasis::<f64>::new(6).unwrap();
        let samples: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 / 4.0, 1.0)).collect();
        assert!(matches!(
            b.fit_coefficients(&samples),
            Err(Error::SingularFit(_))
        ));
        // Enough points, but all in one interval: last functions are unconstrained.
        let clustered: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 / 1000.0, 1.0)).collect();
        assert!(matches!(
            b.fit_coefficients(&clustered),
            Err(Error::SingularFit(_))
        ));
    }
}
