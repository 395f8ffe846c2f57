//! Dense primal active-set solver for strictly convex quadratic programs
//!
//! ```text
//! minimize   ½ xᵀ Q x + cᵀ x
//! subject to A x ≥ b
//! ```
//!
//! The solver walks from a feasible starting point, keeping a working set of
//! linearly independent active constraints, and terminates at the exact
//! minimizer of the current working set once all its multipliers are
//! nonnegative.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct QpProblem<T: Real> {
    pub q: DMatrix<T>,
    pub c: DVector<T>,
    pub a: DMatrix<T>,
    pub b: DVector<T>,
}

#[derive(Debug, Clone)]
pub struct QpSolution<T: Real> {
    pub x: DVector<T>,
    /// One multiplier per constraint; zero off the final working set.
    pub multipliers: DVector<T>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl<T: Real> QpProblem<T> {
    pub fn new(q: DMatrix<T>, c: DVector<T>, a: DMatrix<T>, b: DVector<T>) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || c.len() != n || a.ncols() != n || a.nrows() != b.len() {
            return Err(Error::invalid(format!(
                "inconsistent QP dimensions: Q {:?}, c {}, A {:?}, b {}",
                q.shape(),
                c.len(),
                a.shape(),
                b.len()
            )));
        }
        Ok(Self { q, c, a, b })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        let qx = &self.q * x;
        T::lit(0.5) * x.dot(&qx) + self.c.dot(x)
    }

    /// Largest violation `max(b - A x)⁺`.
    pub fn infeasibility(&self, x: &DVector<T>) -> T {
        let ax = &self.a * x;
        (0..self.b.len())
            .map(|i| self.b[i] - ax[i])
            .fold(T::zero(), |m, v| m.max(v))
    }

    /// KKT residual of a candidate solution: stationarity, primal and dual
    /// feasibility and complementarity, as a single max-norm.
    pub fn kkt_residual(&self, x: &DVector<T>, mult: &DVector<T>) -> T {
        let grad = &self.q * x + &self.c - self.a.transpose() * mult;
        let ax = &self.a * x;
        let mut r = grad.amax();
        for i in 0..self.b.len() {
            let slack = ax[i] - self.b[i];
            r = r.max(-slack).max(-mult[i]).max((mult[i] * slack).abs());
        }
        r
    }

    /// Solves starting from a feasible `x0` with an empty working set.
    pub fn solve_from(&self, x0: DVector<T>, max_iter: usize) -> Result<QpSolution<T>> {
        self.solve_warm(x0, Vec::new(), max_iter)
    }

    /// Solves starting from a feasible `x0` and an initial working set whose
    /// constraints must be active at `x0` and linearly independent.
    pub fn solve_warm(
        &self,
        x0: DVector<T>,
        working: Vec<usize>,
        max_iter: usize,
    ) -> Result<QpSolution<T>> {
        let n = self.dim();
        let m = self.num_constraints();
        if x0.len() != n {
            return Err(Error::invalid("starting point has wrong dimension"));
        }
        let scale = T::one() + self.b.amax() + x0.amax();
        let feas_tol = T::lit(1e-10) * scale;
        if self.infeasibility(&x0) > feas_tol {
            return Err(Error::invalid("starting point is infeasible"));
        }

        let row_norms: Vec<T> = (0..m).map(|i| self.a.row(i).norm()).collect();
        let mut x = x0;
        let mut work = working;
        let mut in_work = vec![false; m];
        for &i in &work {
            in_work[i] = true;
        }
        let mut at_minimizer = false;

        for iter in 0..max_iter {
            let grad = &self.q * &x + &self.c;
            let (p, lambda) = self.eqp_step(&grad, &work)?;
            let p_norm = p.amax();
            let step_tol = T::lit(1e-12) * (T::one() + x.amax());

            if at_minimizer || p_norm <= step_tol {
                let dual_tol = T::lit(1e-11) * (T::one() + grad.amax());
                let worst = lambda
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v < -dual_tol)
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(work[a.0].cmp(&work[b.0])));
                match worst {
                    None => {
                        let mut multipliers = DVector::zeros(m);
                        for (slot, &i) in work.iter().enumerate() {
                            multipliers[i] = lambda[slot].max(T::zero());
                        }
                        return Ok(QpSolution {
                            x,
                            multipliers,
                            active: work,
                            iterations: iter + 1,
                        });
                    }
                    Some((slot, _)) => {
                        let removed = work.remove(slot);
                        in_work[removed] = false;
                        at_minimizer = false;
                        continue;
                    }
                }
            }

            // Ratio test over constraints outside the working set.
            let ap = &self.a * &p;
            let ax = &self.a * &x;
            let mut alpha = T::one();
            let mut blocking = None;
            for i in 0..m {
                if in_work[i] {
                    continue;
                }
                let threshold = T::lit(1e-12) * row_norms[i] * p.norm();
                if ap[i] < -threshold {
                    let slack = (ax[i] - self.b[i]).max(T::zero());
                    let ratio = slack / -ap[i];
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
            }
            x += &p * alpha;
            match blocking {
                Some(i) => {
                    work.push(i);
                    in_work[i] = true;
                    at_minimizer = false;
                }
                None => at_minimizer = true,
            }
        }

        let lambda = DVector::zeros(m);
        Err(Error::Numeric {
            message: format!(
                "active-set QP did not converge (n = {n}, m = {m}, working set {})",
                work.len()
            ),
            iterations: max_iter,
            residual: self.kkt_residual(&x, &lambda).as_f64(),
        })
    }

    /// Solves the equality-constrained step
    /// `min ½ pᵀQp + gᵀp s.t. A_W p = 0`, returning `p` and the working-set
    /// multipliers with the convention `Q(x+p) + c = A_Wᵀ λ`.
    fn eqp_step(&self, grad: &DVector<T>, work: &[usize]) -> Result<(DVector<T>, DVector<T>)> {
        let n = self.dim();
        let w = work.len();
        let size = n + w;
        let mut kkt = DMatrix::zeros(size, size);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.q);
        for (slot, &i) in work.iter().enumerate() {
            for j in 0..n {
                let aij = self.a[(i, j)];
                kkt[(n + slot, j)] = aij;
                kkt[(j, n + slot)] = -aij;
            }
        }
        let mut rhs = DVector::zeros(size);
        for j in 0..n {
            rhs[j] = -grad[j];
        }
        let sol = kkt.lu().solve(&rhs).ok_or_else(|| Error::Numeric {
            message: "singular KKT system in active-set step".into(),
            iterations: 0,
            residual: f64::NAN,
        })?;
        let p = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, w).into_owned();
        Ok((p, lambda))
    }
}
