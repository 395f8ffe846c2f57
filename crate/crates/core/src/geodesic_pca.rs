//! Global and nested geodesic PCA in spline coordinates.
//!
//! Both problems minimize the residual sum
//! `Σ_i ‖a_i - a0 - W λ_i‖²_E` subject to `G(a0 + W λ_i) ≥ 0` for every
//! observation. The solver alternates exact score updates (one small QP per
//! observation) with exact direction updates (one QP in the direction
//! coefficients), so the objective never increases. Several starts are run
//! and the best local optimum is kept.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::distributions::QuantileSpline;
use crate::error::{Error, Result};
use crate::monotone_projection::slice_scores;
use crate::projected_pca::fit_pca;
use crate::qp::QpProblem;
use crate::scalar::Real;
use crate::spline_basis::{is_monotone, SplineBasis};

/// Which geodesic problem a result solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeodesicMethod {
    Global,
    Nested,
}

impl GeodesicMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::Nested => "nested",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicOptions<T: Real> {
    /// Number of starts per problem (per direction for nested).
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tolerance: f64,
    pub seed: u64,
    /// Scale of the random perturbation applied to seed directions.
    pub perturbation: f64,
    /// Extra starting direction sets (J × k) tried before the default seeds.
    pub initial_directions: Vec<DMatrix<T>>,
}

impl<T: Real> Default for GeodesicOptions<T> {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iterations: 500,
            tolerance: 1e-9,
            seed: 0,
            perturbation: 0.5,
            initial_directions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicPcaResult<T: Real> {
    pub method: GeodesicMethod,
    pub center: DVector<T>,
    /// `J × k`, E-orthonormal columns.
    pub directions: DMatrix<T>,
    /// `n × k`.
    pub scores: DMatrix<T>,
    /// Final residual sum `Σ_i ‖a_i - a0 - W λ_i‖²_E`.
    pub objective: T,
    /// Objective after each outer iteration of the retained run(s).
    pub history: Vec<T>,
    pub converged: bool,
    pub restarts_used: usize,
}

impl<T: Real> GeodesicPcaResult<T> {
    /// Reconstruction `a0 + W λ_i` of observation `i`.
    pub fn reconstruction(&self, i: usize) -> DVector<T> {
        &self.center + &self.directions * self.scores.row(i).transpose()
    }

    /// Mean Wasserstein distance between observations and reconstructions.
    pub fn reconstruction_error(&self, data: &[QuantileSpline<T>]) -> T {
        let basis = data[0].basis();
        let total = data
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, x)| acc + basis.distance(x.coeffs(), &self.reconstruction(i)));
        total / T::from_count(data.len())
    }
}

struct Problem<'a, T: Real> {
    basis: &'a SplineBasis<T>,
    a0: DVector<T>,
    ga0: DVector<T>,
    /// `J × n` residuals `a_i - a0`.
    r: DMatrix<T>,
    /// `E r`.
    er: DMatrix<T>,
}

struct Run<T: Real> {
    w: DMatrix<T>,
    lam: DMatrix<T>,
    objective: T,
    history: Vec<T>,
    converged: bool,
}

fn validate<T: Real>(
    data: &[QuantileSpline<T>],
    a0: &QuantileSpline<T>,
    k: usize,
) -> Result<Arc<SplineBasis<T>>> {
    if data.len() < 2 {
        return Err(Error::invalid("geodesic PCA needs at least 2 observations"));
    }
    let basis = data[0].basis().clone();
    if data.iter().any(|q| !q.same_basis(&data[0])) || !a0.same_basis(&data[0]) {
        return Err(Error::invalid("observations use different bases"));
    }
    if k > basis.size() {
        return Err(Error::invalid(format!("dimension {k} exceeds basis size {}", basis.size())));
    }
    if !is_monotone(a0.coeffs()) {
        return Err(Error::invalid("center is not monotone"));
    }
    Ok(basis)
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(basis: &'a SplineBasis<T>, data: &[QuantileSpline<T>], a0: &DVector<T>) -> Self {
        let n = data.len();
        let r = DMatrix::from_fn(basis.size(), n, |row, i| data[i].coeffs()[row] - a0[row]);
        let er = basis.e() * &r;
        Self {
            basis,
            a0: a0.clone(),
            ga0: basis.difference_matrix().apply(a0),
            r,
            er,
        }
    }

    fn n(&self) -> usize {
        self.r.ncols()
    }

    fn j(&self) -> usize {
        self.r.nrows()
    }

    fn objective(&self, w: &DMatrix<T>, lam: &DMatrix<T>) -> T {
        let diff = &self.r - w * lam.transpose();
        let ed = self.basis.e() * &diff;
        diff.component_mul(&ed).sum()
    }

    /// Exact constrained scores for E-orthonormal `w`.
    fn lambda_step(&self, w: &DMatrix<T>) -> Result<DMatrix<T>> {
        let k = w.ncols();
        let raw = w.transpose() * &self.er;
        let g = self.basis.difference_matrix();
        let rows: Vec<DVector<T>> = (0..self.n())
            .into_par_iter()
            .map(|i| slice_scores(&raw.column(i).into_owned(), &self.a0, w, g))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.n(), k, |i, l| rows[i][l]))
    }

    fn prox_weight(&self, lam: &DMatrix<T>) -> T {
        let scale = lam.norm_squared() * self.basis.e().amax();
        T::lit(1e-12) * (scale + T::one())
    }

    /// Exact update of all directions with scores fixed, in `vec(W)`
    /// (column-major) coordinates, plus a tiny proximal term that keeps the
    /// problem strictly convex when a score column vanishes.
    fn global_w_step(&self, w: &DMatrix<T>, lam: &DMatrix<T>) -> Result<DMatrix<T>> {
        let (j, k, n) = (self.j(), w.ncols(), self.n());
        let dim = j * k;
        let delta = self.prox_weight(lam);
        let mut q = (lam.transpose() * lam).kronecker(self.basis.e());
        for d in 0..dim {
            q[(d, d)] += delta;
        }
        let x0 = DVector::from_column_slice(w.as_slice());
        let erl = &self.er * lam;
        let c = -DVector::from_column_slice(erl.as_slice()) - &x0 * delta;

        let m = n * (j - 1);
        let mut a = DMatrix::zeros(m, dim);
        let mut b = DVector::zeros(m);
        for i in 0..n {
            for row in 0..j - 1 {
                let ci = i * (j - 1) + row;
                b[ci] = -self.ga0[row];
                for l in 0..k {
                    let v = lam[(i, l)];
                    a[(ci, l * j + row + 1)] += v;
                    a[(ci, l * j + row)] -= v;
                }
            }
        }
        let qp = QpProblem::new(q, c, a, b)?;
        let sol = qp.solve_from(x0, 50 * (dim + m))?;
        Ok(DMatrix::from_column_slice(j, k, sol.x.as_slice()))
    }

    /// Rescales `W` to E-orthonormal columns without changing `W Λᵀ`.
    fn orthonormalize(&self, w: DMatrix<T>, lam: DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
        let gram = w.transpose() * self.basis.e() * &w;
        match gram.cholesky() {
            Some(chol) => {
                let rt = chol.l(); // Rᵀ with WᵀEW = RᵀR
                let r = rt.transpose();
                match r.clone().try_inverse() {
                    Some(rinv) => (w * rinv, lam * rt),
                    None => (w, lam),
                }
            }
            None => (w, lam),
        }
    }

    fn run_global(&self, w0: DMatrix<T>, opts: &GeodesicOptions<T>) -> Result<Run<T>> {
        let k = w0.ncols();
        let (mut w, _) = self.orthonormalize(w0, DMatrix::zeros(self.n(), k));
        let mut lam = DMatrix::zeros(self.n(), k);
        let mut f = self.objective(&w, &lam);
        let mut history = vec![f];
        let mut converged = false;
        for _ in 0..opts.max_iterations {
            lam = self.lambda_step(&w)?;
            let w_new = self.global_w_step(&w, &lam)?;
            let (wn, ln) = self.orthonormalize(w_new, lam);
            w = wn;
            lam = ln;
            let f_new = self.objective(&w, &lam);
            history.push(f_new);
            let done = f_new <= T::zero() || (f - f_new) <= T::lit(opts.tolerance) * f.abs();
            f = f_new;
            if done {
                converged = true;
                break;
            }
        }
        Ok(Run { w, lam, objective: f, history, converged })
    }

    /// E-orthonormal basis of the E-orthogonal complement of `prev`.
    fn complement(&self, prev: &DMatrix<T>) -> DMatrix<T> {
        let j = self.j();
        let l = self
            .basis
            .e()
            .clone()
            .cholesky()
            .expect("Gram matrix is positive definite")
            .l();
        let u = l.transpose() * prev;
        let proj = DMatrix::identity(j, j) - &u * u.transpose();
        let eig = SymmetricEigen::new(proj);
        let keep: Vec<usize> = (0..j).filter(|&i| eig.eigenvalues[i] > T::lit(0.5)).collect();
        let mut basis = DMatrix::zeros(j, keep.len());
        let lt = l.transpose();
        for (c, &i) in keep.iter().enumerate() {
            let v = lt
                .solve_upper_triangular(&eig.eigenvectors.column(i).into_owned())
                .expect("invertible factor");
            basis.set_column(c, &v);
        }
        basis
    }

    /// Optimizes direction `h = prev.ncols() + 1` with previous directions fixed.
    fn run_nested(
        &self,
        prev: &DMatrix<T>,
        prev_lam: &DMatrix<T>,
        nbasis: &DMatrix<T>,
        w0: DVector<T>,
        opts: &GeodesicOptions<T>,
    ) -> Result<Run<T>> {
        let h = prev.ncols() + 1;
        let n = self.n();
        let ew = self.basis.e() * &w0;
        let mut z = nbasis.transpose() * ew;
        let zn = z.norm();
        if zn <= T::zero() {
            return Err(Error::invalid("nested seed lies in the span of previous directions"));
        }
        z /= zn;
        let assemble = |z: &DVector<T>| -> DMatrix<T> {
            let mut w = DMatrix::zeros(self.j(), h);
            w.columns_mut(0, h - 1).copy_from(prev);
            w.set_column(h - 1, &(nbasis * z));
            w
        };
        let mut w = assemble(&z);
        let mut lam = DMatrix::zeros(n, h);
        lam.columns_mut(0, h - 1).copy_from(prev_lam);
        let mut f = self.objective(&w, &lam);
        let mut history = vec![f];
        let mut converged = false;
        let gn = self.basis.difference_matrix().matrix() * nbasis;
        for _ in 0..opts.max_iterations {
            lam = self.lambda_step(&w)?;
            z = self.nested_w_step(&w, &lam, nbasis, &gn, &z)?;
            let zn = z.norm();
            if zn > T::zero() {
                z /= zn;
                for i in 0..n {
                    lam[(i, h - 1)] *= zn;
                }
            }
            w = assemble(&z);
            let f_new = self.objective(&w, &lam);
            history.push(f_new);
            let done = f_new <= T::zero() || (f - f_new) <= T::lit(opts.tolerance) * f.abs();
            f = f_new;
            if done {
                converged = true;
                break;
            }
        }
        Ok(Run { w, lam, objective: f, history, converged })
    }

    fn nested_w_step(
        &self,
        w: &DMatrix<T>,
        lam: &DMatrix<T>,
        nbasis: &DMatrix<T>,
        gn: &DMatrix<T>,
        z0: &DVector<T>,
    ) -> Result<DVector<T>> {
        let h = w.ncols();
        let n = self.n();
        let d = nbasis.ncols();
        let prev = w.columns(0, h - 1);
        let lam_prev = lam.columns(0, h - 1);
        let last = lam.column(h - 1);
        // ρ_i = r_i - W_prev λ_prev,i
        let rho = &self.r - prev * lam_prev.transpose();
        let erho = self.basis.e() * &rho;
        let s2 = last.norm_squared();
        let delta = self.prox_weight(&lam.columns(h - 1, 1).into_owned());
        let q = DMatrix::identity(d, d) * (s2 + delta);
        let c = -(nbasis.transpose() * (&erho * last)) - z0 * delta;

        let jm = self.j() - 1;
        // G(a0 + W_prev λ_prev,i), one column per observation.
        let pts = prev * lam_prev.transpose();
        let base = DMatrix::from_fn(jm, n, |row, i| self.ga0[row] + (pts[(row + 1, i)] - pts[(row, i)]));
        let mut a = DMatrix::zeros(n * jm, d);
        let mut b = DVector::zeros(n * jm);
        for i in 0..n {
            let li = last[i];
            for row in 0..jm {
                let ci = i * jm + row;
                b[ci] = -base[(row, i)];
                for col in 0..d {
                    a[(ci, col)] = li * gn[(row, col)];
                }
            }
        }
        let qp = QpProblem::new(q, c, a, b)?;
        Ok(qp.solve_from(z0.clone(), 50 * (d + n * jm))?.x)
    }
}

fn gaussian_matrix<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v * scale)
    })
}

fn best_run<T: Real>(runs: Vec<Result<Run<T>>>) -> Result<(Run<T>, usize, bool)> {
    let used = runs.len();
    let mut best: Option<Run<T>> = None;
    let mut all_converged = true;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok(run) => {
                all_converged &= run.converged;
                if best.as_ref().is_none_or(|b| run.objective < b.objective) {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(b) => Ok((b, used, all_converged)),
        None => Err(last_err.unwrap_or_else(|| Error::invalid("no geodesic starts were run"))),
    }
}

/// Global geodesic PCA of dimension `k` centered at `a0`.
pub fn fit_global_geodesic<T: Real>(
    data: &[QuantileSpline<T>],
    a0: &QuantileSpline<T>,
    k: usize,
    options: &GeodesicOptions<T>,
) -> Result<GeodesicPcaResult<T>> {
    let basis = validate(data, a0, k)?;
    let problem = Problem::new(&basis, data, a0.coeffs());
    let n = data.len();
    let j = basis.size();
    if k == 0 {
        let w = DMatrix::zeros(j, 0);
        let lam = DMatrix::zeros(n, 0);
        let f = problem.objective(&w, &lam);
        return Ok(GeodesicPcaResult {
            method: GeodesicMethod::Global,
            center: a0.coeffs().clone(),
            directions: w,
            scores: lam,
            objective: f,
            history: vec![f],
            converged: true,
            restarts_used: 0,
        });
    }

    let pca = fit_pca(data, Some(a0))?;
    let base = pca.directions().columns(0, k).into_owned();
    let mut starts: Vec<DMatrix<T>> = options
        .initial_directions
        .iter()
        .filter(|m| m.shape() == (j, k))
        .cloned()
        .collect();
    starts.push(base.clone());
    for r in 1..options.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(r as u64));
        starts.push(&base + gaussian_matrix::<T>(&mut rng, j, k, options.perturbation));
    }
    let runs: Vec<Result<Run<T>>> = starts
        .into_par_iter()
        .map(|w0| problem.run_global(w0, options))
        .collect();
    let (run, used, converged) = best_run(runs)?;
    Ok(GeodesicPcaResult {
        method: GeodesicMethod::Global,
        center: a0.coeffs().clone(),
        directions: run.w,
        scores: run.lam,
        objective: run.objective,
        history: run.history,
        converged,
        restarts_used: used,
    })
}

/// Nested geodesic PCA: directions are found one at a time, each E-orthogonal
/// to the previous ones, with the joint scores of all directions re-optimized.
pub fn fit_nested_geodesic<T: Real>(
    data: &[QuantileSpline<T>],
    a0: &QuantileSpline<T>,
    k: usize,
    options: &GeodesicOptions<T>,
) -> Result<GeodesicPcaResult<T>> {
    let basis = validate(data, a0, k)?;
    let problem = Problem::new(&basis, data, a0.coeffs());
    let n = data.len();
    let j = basis.size();
    let mut w = DMatrix::zeros(j, 0);
    let mut lam = DMatrix::zeros(n, 0);
    let mut history = vec![problem.objective(&w, &lam)];
    let mut used = 0;
    let mut converged = true;
    let pca = if k > 0 { Some(fit_pca(data, Some(a0))?) } else { None };

    for h in 1..=k {
        let nbasis = problem.complement(&w);
        let pdirs = pca.as_ref().unwrap().directions();
        let mut seeds: Vec<DVector<T>> = options
            .initial_directions
            .iter()
            .filter(|m| m.nrows() == j && m.ncols() >= h)
            .map(|m| m.column(h - 1).into_owned())
            .collect();
        // Every PCA direction with a component outside the current span, in
        // order of variance, then random perturbations of the next one.
        let ne = nbasis.transpose() * basis.e();
        for c in 0..j {
            let col = pdirs.column(c).into_owned();
            if (&ne * &col).norm() > T::lit(1e-6) {
                seeds.push(col);
            }
        }
        for r in 1..options.restarts.max(1) {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add((h * 1000 + r) as u64));
            let noise: DMatrix<T> = gaussian_matrix(&mut rng, j, 1, options.perturbation);
            seeds.push(pdirs.column(h - 1) + noise.column(0));
        }
        let runs: Vec<Result<Run<T>>> = seeds
            .into_par_iter()
            .map(|s| problem.run_nested(&w, &lam, &nbasis, s, options))
            .collect();
        let (run, u, c) = best_run(runs)?;
        used += u;
        converged &= c;
        history.extend(run.history.iter().skip(1).copied());
        w = run.w;
        lam = run.lam;
    }
    let objective = *history.last().unwrap();
    Ok(GeodesicPcaResult {
        method: GeodesicMethod::Nested,
        center: a0.coeffs().clone(),
        directions: w,
        scores: lam,
        objective,
        history,
        converged,
        restarts_used: used,
    })
}
