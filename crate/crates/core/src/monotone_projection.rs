//! Metric projections in the E-norm onto the cone of nondecreasing
//! coefficient vectors and onto its intersections with affine subspaces.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::QpProblem;
use crate::scalar::Real;
use crate::spline_basis::{is_monotone, DifferenceMatrix};

pub use crate::qp::{QpProblem as Qp, QpSolution};

/// Feasibility tolerance on `G x` for projection outputs.
pub const FEASIBILITY_TOL: f64 = 1e-10;
/// Tolerance on the KKT residual of a returned projection.
pub const KKT_TOL: f64 = 1e-8;

/// Relative size below which a coefficient difference of a direction is
/// treated as zero by [`ray_extent`].
pub const DEGENERATE_REL_TOL: f64 = 1e-12;

/// Result of [`MonotoneProjector::project`] with solver diagnostics.
#[derive(Debug, Clone)]
pub struct MonotoneProjection<T: Real> {
    pub x: DVector<T>,
    /// Multipliers of the difference constraints `x_{i+1} - x_i ≥ 0`.
    pub multipliers: DVector<T>,
    /// `tied[i]` is true when constraint `i` is in the final working set.
    pub tied: Vec<bool>,
    pub iterations: usize,
    pub kkt_residual: T,
}

/// E-norm projection onto `{x : x_1 ≤ x_2 ≤ … ≤ x_J}`.
///
/// Primal active-set method whose working sets are sets of tied neighbours.
/// Each equality-constrained subproblem is solved in block coordinates, so
/// tied coefficients come out exactly equal.
#[derive(Debug, Clone)]
pub struct MonotoneProjector<T: Real> {
    e: DMatrix<T>,
    e_norm: T,
}

impl<T: Real> MonotoneProjector<T> {
    pub fn new(e: &DMatrix<T>) -> Result<Self> {
        if !e.is_square() || e.nrows() < 2 {
            return Err(Error::invalid("metric must be a square matrix of size ≥ 2"));
        }
        let e_norm = e.row_iter().map(|r| r.iter().map(|v| v.abs()).fold(T::zero(), |a, b| a + b)).fold(T::zero(), |a, b| a.max(b));
        Ok(Self { e: e.clone(), e_norm })
    }

    pub fn size(&self) -> usize {
        self.e.nrows()
    }

    pub fn max_iterations(&self) -> usize {
        50 * self.size()
    }

    pub fn project(&self, v: &DVector<T>) -> Result<MonotoneProjection<T>> {
        self.project_warm(v, None)
    }

    /// Projects `v`, optionally starting from a guessed tie pattern. The guess
    /// is used only when its block solution is feasible.
    pub fn project_warm(
        &self,
        v: &DVector<T>,
        hint: Option<&[bool]>,
    ) -> Result<MonotoneProjection<T>> {
        let j = self.size();
        if v.len() != j {
            return Err(Error::invalid(format!(
                "vector of length {} for metric of size {j}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite_value()) {
            return Err(Error::invalid("vector has non-finite entries"));
        }
        let ev = &self.e * v;

        // Start from the all-tied point, which is always feasible, unless the
        // hint gives a feasible block solution.
        let mut tied = vec![true; j - 1];
        let mut x = self.block_solve(&ev, &tied)?;
        if let Some(h) = hint {
            if h.len() == j - 1 {
                let cand = self.block_solve(&ev, h)?;
                if diffs_nonneg(&cand) {
                    tied = h.to_vec();
                    x = cand;
                }
            }
        }

        let dual_tol = T::lit(1e-12) * (T::one() + v.amax()) * self.e_norm.max(T::one());
        let max_iter = self.max_iterations();
        let mut at_minimizer = true;
        for iter in 0..max_iter {
            if !at_minimizer {
                let xhat = self.block_solve(&ev, &tied)?;
                // Ratio test on untied neighbours.
                let mut alpha = T::one();
                let mut blocking = None;
                for i in 0..j - 1 {
                    if tied[i] {
                        continue;
                    }
                    let dp = (xhat[i + 1] - xhat[i]) - (x[i + 1] - x[i]);
                    if dp < T::zero() {
                        let slack = (x[i + 1] - x[i]).max(T::zero());
                        let ratio = slack / -dp;
                        if ratio < alpha {
                            alpha = ratio;
                            blocking = Some(i);
                        }
                    }
                }
                match blocking {
                    None => x = xhat,
                    Some(i) => {
                        x += (xhat - &x) * alpha;
                        tied[i] = true;
                        continue;
                    }
                }
            }

            let mult = self.multipliers(&x, v);
            let worst = (0..j - 1)
                .filter(|&i| tied[i] && mult[i] < -dual_tol)
                .min_by(|&a, &b| mult[a].partial_cmp(&mult[b]).unwrap().then(a.cmp(&b)));
            match worst {
                None => {
                    let mut multipliers = mult;
                    for i in 0..j - 1 {
                        if !tied[i] {
                            multipliers[i] = T::zero();
                        }
                    }
                    let kkt_residual = self.kkt_residual(v, &x, &multipliers);
                    return Ok(MonotoneProjection {
                        x,
                        multipliers,
                        tied,
                        iterations: iter + 1,
                        kkt_residual,
                    });
                }
                Some(i) => {
                    tied[i] = false;
                    at_minimizer = false;
                }
            }
        }
        Err(Error::Numeric {
            message: format!("monotone projection did not converge for J = {j}"),
            iterations: max_iter,
            residual: f64::NAN,
        })
    }

    // Minimizes ‖v - Z y‖_E over block values y, where Z maps each block of
    // tied neighbours to a constant run.
    fn block_solve(&self, ev: &DVector<T>, tied: &[bool]) -> Result<DVector<T>> {
        let j = self.size();
        let mut block_of = vec![0usize; j];
        let mut nblocks = 1;
        for i in 1..j {
            if !tied[i - 1] {
                nblocks += 1;
            }
            block_of[i] = nblocks - 1;
        }
        let mut zez = DMatrix::<T>::zeros(nblocks, nblocks);
        let mut rhs = DVector::<T>::zeros(nblocks);
        for r in 0..j {
            rhs[block_of[r]] += ev[r];
            for c in 0..j {
                zez[(block_of[r], block_of[c])] += self.e[(r, c)];
            }
        }
        let y = Cholesky::new(zez)
            .ok_or_else(|| Error::Numeric {
                message: "block Gram matrix is not positive definite".into(),
                iterations: 0,
                residual: f64::NAN,
            })?
            .solve(&rhs);
        Ok(DVector::from_fn(j, |r, _| y[block_of[r]]))
    }

    // Stationarity E(x - v) = Gᵀμ gives μ_i = -Σ_{l ≤ i} r_l with r = E(x - v).
    fn multipliers(&self, x: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        let r = &self.e * (x - v);
        let mut acc = T::zero();
        DVector::from_fn(self.size() - 1, |i, _| {
            acc -= r[i];
            acc
        })
    }

    fn kkt_residual(&self, v: &DVector<T>, x: &DVector<T>, mult: &DVector<T>) -> T {
        let j = self.size();
        let r = &self.e * (x - v);
        // (Gᵀμ)_k = μ_{k-1} - μ_k
        let mut res = T::zero();
        for k in 0..j {
            let prev = if k > 0 { mult[k - 1] } else { T::zero() };
            let next = if k + 1 < j { mult[k] } else { T::zero() };
            res = res.max((r[k] - (prev - next)).abs());
        }
        for i in 0..j - 1 {
            let slack = x[i + 1] - x[i];
            res = res.max(-slack).max(-mult[i]).max((mult[i] * slack).abs());
        }
        res
    }
}

fn diffs_nonneg<T: Real>(x: &DVector<T>) -> bool {
    x.as_slice().windows(2).all(|w| w[1] >= w[0])
}

/// `argmin_{G w ≥ 0} ‖v - w‖_E`.
pub fn project_monotone<T: Real>(
    v: &DVector<T>,
    e: &DMatrix<T>,
    g: &DifferenceMatrix<T>,
) -> Result<DVector<T>> {
    if g.size() != e.nrows() {
        return Err(Error::invalid("difference matrix and metric sizes differ"));
    }
    Ok(MonotoneProjector::new(e)?.project(v)?.x)
}

/// Scores of the E-projection of `x_star` onto `(a0 + span W) ∩ cone`.
///
/// `W` has E-orthonormal columns. The scores minimize
/// `‖(⟨x* - a0, w_i⟩_E - λ_i)_i‖` subject to `G (a0 + W λ) ≥ 0`.
pub fn project_affine_slice<T: Real>(
    x_star: &DVector<T>,
    a0: &DVector<T>,
    w: &DMatrix<T>,
    e: &DMatrix<T>,
    g: &DifferenceMatrix<T>,
) -> Result<DVector<T>> {
    let j = e.nrows();
    if x_star.len() != j || a0.len() != j || w.nrows() != j || g.size() != j {
        return Err(Error::invalid("dimension mismatch in affine slice projection"));
    }
    let scores = w.transpose() * (e * (x_star - a0));
    slice_scores(&scores, a0, w, g)
}

/// Constrained scores for given unconstrained scores `s`: the point of
/// `{λ : G(a0 + Wλ) ≥ -FEASIBILITY_TOL / 2}` closest to `s` in the Euclidean
/// norm. Half the tolerance leaves room for rounding in the reconstruction.
///
/// The tolerance matters when `a0` has exact ties: rounding noise in `G W` on
/// those rows would otherwise pin the scores to zero.
pub fn slice_scores<T: Real>(
    s: &DVector<T>,
    a0: &DVector<T>,
    w: &DMatrix<T>,
    g: &DifferenceMatrix<T>,
) -> Result<DVector<T>> {
    let k = w.ncols();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let ga0 = g.apply(a0);
    if ga0.iter().any(|v| *v < -T::lit(FEASIBILITY_TOL)) {
        return Err(Error::invalid("slice center is not monotone"));
    }
    let tol = T::lit(FEASIBILITY_TOL / 2.0);
    let gw = g.matrix() * w;
    let direct = &ga0 + &gw * s;
    if direct.iter().all(|v| *v >= -tol) {
        return Ok(s.clone());
    }
    let b = ga0.map(|v| -v - tol);
    let qp = QpProblem::new(DMatrix::identity(k, k), -s, gw, b)?;
    let max_iter = 50 * (g.size() + k);
    Ok(qp.solve_from(DVector::zeros(k), max_iter)?.x)
}

/// Extent of the ray `a0 + η w` inside the cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayExtent<T: Real> {
    /// Smallest feasible η; `-∞` when unbounded.
    pub min: T,
    /// Largest feasible η; `+∞` when unbounded.
    pub max: T,
}

impl<T: Real> RayExtent<T> {
    /// Distance from `s` to the interval `[min, max]`.
    pub fn distance(&self, s: T) -> T {
        if s < self.min {
            self.min - s
        } else if s > self.max {
            s - self.max
        } else {
            T::zero()
        }
    }
}

/// `[η_min, η_max]` such that `a0 + η w` stays nondecreasing.
pub fn ray_extent<T: Real>(
    a0: &DVector<T>,
    w: &DVector<T>,
    g: &DifferenceMatrix<T>,
) -> Result<RayExtent<T>> {
    if a0.len() != g.size() || w.len() != g.size() {
        return Err(Error::invalid("dimension mismatch in ray extent"));
    }
    if !is_monotone(a0) {
        return Err(Error::invalid("ray origin is not monotone"));
    }
    let c = g.apply(a0);
    let d = g.apply(w);
    // Rows where `w` is flat up to rounding impose no bound.
    let negligible = T::lit(DEGENERATE_REL_TOL) * w.amax();
    let mut min = T::neg_infinity();
    let mut max = T::infinity();
    for i in 0..c.len() {
        let ci = c[i].max(T::zero());
        if d[i] < -negligible {
            max = max.min(-ci / d[i]);
        } else if d[i] > negligible {
            min = min.max(-ci / d[i]);
        }
    }
    Ok(RayExtent { min, max })
}
