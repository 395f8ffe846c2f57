//! Projected PCA: ordinary PCA of spline coefficients in the E-metric, with
//! scores and reconstructions obtained by projecting onto the intersection of
//! each principal affine subspace with the monotone cone.
//!
//! The empirical covariance uses the `1/n` convention, `Σ = AᵀA / n` for the
//! centered data matrix `A` (one observation per row). Directions solve
//! `Σ E w = λ w` and are E-orthonormal.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::distributions::{barycenter, QuantileSpline};
use crate::error::{Error, Result};
use crate::monotone_projection::{ray_extent, slice_scores, RayExtent};
use crate::scalar::Real;
use crate::spline_basis::SplineBasis;

/// Feasibility tolerance accepted on reconstructions.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PcaModel<T: Real> {
    basis: Arc<SplineBasis<T>>,
    a0: DVector<T>,
    directions: DMatrix<T>,
    eigenvalues: DVector<T>,
}

/// Constrained scores and the reconstruction they define.
#[derive(Debug, Clone)]
pub struct Projection<T: Real> {
    /// Unconstrained E-inner-product scores.
    pub raw_scores: DVector<T>,
    pub scores: DVector<T>,
    pub reconstruction: QuantileSpline<T>,
}

/// All diagnostics for dimensions `0..=max_dim`.
#[derive(Debug, Clone)]
pub struct Diagnostics<T: Real> {
    /// `re[k]` for `k = 0..=max_dim`.
    pub re: Vec<T>,
    pub nre: Vec<T>,
    /// `is[h-1]` for directions `h = 1..=max_dim`, at dimension `h`.
    pub is: Vec<T>,
    /// `gv[k-1]` for `k = 1..=max_dim`.
    pub gv: Vec<T>,
}

fn shared_basis<T: Real>(data: &[QuantileSpline<T>]) -> Result<Arc<SplineBasis<T>>> {
    let first = data
        .first()
        .ok_or_else(|| Error::invalid("empty dataset"))?;
    if data.iter().any(|q| !q.same_basis(first)) {
        return Err(Error::invalid("observations use different bases"));
    }
    Ok(first.basis().clone())
}

/// Fits projected PCA around `center`, or around the barycenter when `None`.
pub fn fit_pca<T: Real>(
    data: &[QuantileSpline<T>],
    center: Option<&QuantileSpline<T>>,
) -> Result<PcaModel<T>> {
    if data.len() < 2 {
        return Err(Error::invalid(format!(
            "PCA needs at least 2 observations, got {}",
            data.len()
        )));
    }
    let basis = shared_basis(data)?;
    let a0 = match center {
        Some(c) => {
            if !c.same_basis(&data[0]) {
                return Err(Error::invalid("center uses a different basis"));
            }
            c.coeffs().clone()
        }
        None => barycenter(data)?.into_coeffs(),
    };
    let j = basis.size();
    let n = data.len();
    let a = DMatrix::from_fn(n, j, |i, c| data[i].coeffs()[c] - a0[c]);
    let sigma = (a.transpose() * &a) / T::from_count(n);

    let chol = basis
        .e()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric {
            message: "Gram matrix is not positive definite".into(),
            iterations: 0,
            residual: f64::NAN,
        })?;
    let l = chol.l();
    let mut m = l.transpose() * &sigma * &l;
    m = (&m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&p, &q| {
        eig.eigenvalues[q]
            .partial_cmp(&eig.eigenvalues[p])
            .unwrap()
            .then(p.cmp(&q))
    });
    let lt = l.transpose();
    let mut directions = DMatrix::zeros(j, j);
    let mut eigenvalues = DVector::zeros(j);
    for (col, &idx) in order.iter().enumerate() {
        let u = eig.eigenvectors.column(idx).into_owned();
        let mut w = lt
            .solve_upper_triangular(&u)
            .expect("triangular factor of a PD matrix is invertible");
        let imax = w.iamax();
        if w[imax] < T::zero() {
            w = -w;
        }
        directions.set_column(col, &w);
        eigenvalues[col] = eig.eigenvalues[idx];
    }
    Ok(PcaModel { basis, a0, directions, eigenvalues })
}

impl<T: Real> PcaModel<T> {
    /// Assembles a model from stored parts, checking shapes.
    pub fn from_parts(
        basis: Arc<SplineBasis<T>>,
        a0: DVector<T>,
        directions: DMatrix<T>,
        eigenvalues: DVector<T>,
    ) -> Result<Self> {
        let j = basis.size();
        if a0.len() != j || directions.nrows() != j || eigenvalues.len() != directions.ncols() {
            return Err(Error::invalid("PCA model parts have inconsistent shapes"));
        }
        Ok(Self { basis, a0, directions, eigenvalues })
    }

    pub fn basis(&self) -> &Arc<SplineBasis<T>> {
        &self.basis
    }

    pub fn center(&self) -> &DVector<T> {
        &self.a0
    }

    /// Directions as columns, ordered by decreasing eigenvalue.
    pub fn directions(&self) -> &DMatrix<T> {
        &self.directions
    }

    pub fn eigenvalues(&self) -> &DVector<T> {
        &self.eigenvalues
    }

    /// Number of stored directions.
    pub fn rank(&self) -> usize {
        self.directions.ncols()
    }

    /// Fraction of the total variance carried by the first `k` eigenvalues.
    pub fn explained_variance_ratio(&self, k: usize) -> T {
        let total = self.eigenvalues.iter().fold(T::zero(), |a, &b| a + b.max(T::zero()));
        if total <= T::zero() {
            return T::zero();
        }
        let part = self.eigenvalues.iter().take(k).fold(T::zero(), |a, &b| a + b.max(T::zero()));
        part / total
    }

    fn check_dim(&self, k: usize) -> Result<()> {
        if k > self.rank() {
            return Err(Error::invalid(format!(
                "dimension {k} exceeds the {} available directions",
                self.rank()
            )));
        }
        Ok(())
    }

    fn check_obs(&self, x: &QuantileSpline<T>) -> Result<()> {
        if x.basis().size() != self.basis.size() {
            return Err(Error::invalid("observation basis does not match the model"));
        }
        Ok(())
    }

    /// `W_kᵀ E (x - a0)`.
    pub fn raw_scores(&self, x: &DVector<T>, k: usize) -> DVector<T> {
        let wk = self.directions.columns(0, k);
        wk.transpose() * (self.basis.e() * (x - &self.a0))
    }

    /// Projection of `x` onto the `k`-dimensional projected component.
    pub fn project_observation(&self, x: &QuantileSpline<T>, k: usize) -> Result<Projection<T>> {
        self.check_dim(k)?;
        self.check_obs(x)?;
        let raw = self.raw_scores(x.coeffs(), k);
        let wk = self.directions.columns(0, k).into_owned();
        let scores = slice_scores(&raw, &self.a0, &wk, self.basis.difference_matrix())?;
        let coeffs = &self.a0 + &wk * &scores;
        let reconstruction =
            QuantileSpline::with_tolerance(self.basis.clone(), coeffs, T::lit(RECONSTRUCTION_TOL))
                .map_err(|_| Error::Numeric {
                    message: "reconstruction left the monotone cone".into(),
                    iterations: 0,
                    residual: f64::NAN,
                })?;
        Ok(Projection { raw_scores: raw, scores, reconstruction })
    }

    /// Projections of every observation at dimension `k`, in parallel.
    pub fn project_all(&self, data: &[QuantileSpline<T>], k: usize) -> Result<Vec<Projection<T>>> {
        data.par_iter().map(|x| self.project_observation(x, k)).collect()
    }

    /// `RE_k`: mean Wasserstein distance between observations and their
    /// `k`-dimensional reconstructions. `RE_0` is the mean distance to the center.
    pub fn reconstruction_error(&self, data: &[QuantileSpline<T>], k: usize) -> Result<T> {
        let dists: Vec<T> = data
            .par_iter()
            .map(|x| {
                let p = self.project_observation(x, k)?;
                Ok(self.basis.distance(x.coeffs(), p.reconstruction.coeffs()))
            })
            .collect::<Result<_>>()?;
        Ok(mean(&dists))
    }

    /// `RE_k` divided by the mean distance to the barycenter of `data`;
    /// zero when that denominator vanishes.
    pub fn normalized_reconstruction_error(&self, data: &[QuantileSpline<T>], k: usize) -> Result<T> {
        let re = self.reconstruction_error(data, k)?;
        Ok(normalize(re, spread(data)?))
    }

    /// Ray extent of direction `h` (1-based) from the center.
    pub fn direction_extent(&self, h: usize) -> Result<RayExtent<T>> {
        if h == 0 || h > self.rank() {
            return Err(Error::invalid(format!("direction index {h} out of range")));
        }
        let w = self.directions.column(h - 1).into_owned();
        ray_extent(&self.a0, &w, self.basis.difference_matrix())
    }

    /// `IS_h`, with scores taken from the projected component of dimension
    /// `dim` (defaults to `h`).
    pub fn interpretability_score(
        &self,
        data: &[QuantileSpline<T>],
        h: usize,
        dim: Option<usize>,
    ) -> Result<T> {
        let dim = dim.unwrap_or(h);
        if h == 0 || h > dim {
            return Err(Error::invalid(format!(
                "direction {h} is not part of a {dim}-dimensional component"
            )));
        }
        self.check_dim(dim)?;
        let extent = self.direction_extent(h)?;
        let terms: Vec<T> = data
            .par_iter()
            .map(|x| {
                let s = self.project_observation(x, dim)?.scores[h - 1];
                Ok(is_term(&extent, s))
            })
            .collect::<Result<_>>()?;
        Ok(T::one() - mean(&terms))
    }

    /// `GV_k`: mean relative E-norm gap between unconstrained and constrained
    /// `k`-dimensional projections. Observations at the center are skipped.
    pub fn ghost_variance(&self, data: &[QuantileSpline<T>], k: usize) -> Result<T> {
        let terms: Vec<T> = data
            .par_iter()
            .map(|x| {
                let p = self.project_observation(x, k)?;
                Ok(gv_term(&self.basis, x.coeffs(), &self.a0, &p))
            })
            .collect::<Result<_>>()?;
        Ok(mean(&terms))
    }

    /// RE, NRE, IS and GV for every dimension up to `max_dim`, projecting each
    /// observation once per dimension.
    pub fn diagnostics(&self, data: &[QuantileSpline<T>], max_dim: usize) -> Result<Diagnostics<T>> {
        self.check_dim(max_dim)?;
        let denom = spread(data)?;
        let mut re = Vec::with_capacity(max_dim + 1);
        let mut nre = Vec::with_capacity(max_dim + 1);
        let mut is = Vec::with_capacity(max_dim);
        let mut gv = Vec::with_capacity(max_dim);
        for k in 0..=max_dim {
            let projections = self.project_all(data, k)?;
            let dists: Vec<T> = data
                .iter()
                .zip(&projections)
                .map(|(x, p)| self.basis.distance(x.coeffs(), p.reconstruction.coeffs()))
                .collect();
            let r = mean(&dists);
            re.push(r);
            nre.push(normalize(r, denom));
            if k > 0 {
                let extent = self.direction_extent(k)?;
                let is_terms: Vec<T> = projections.iter().map(|p| is_term(&extent, p.scores[k - 1])).collect();
                is.push(T::one() - mean(&is_terms));
                let gv_terms: Vec<T> = data
                    .iter()
                    .zip(&projections)
                    .map(|(x, p)| gv_term(&self.basis, x.coeffs(), &self.a0, p))
                    .collect();
                gv.push(mean(&gv_terms));
            }
        }
        Ok(Diagnostics { re, nre, is, gv })
    }
}

/// `d(s, [η_min, η_max]) / |s|`. At `s = 0` the ratio is replaced by the
/// mean of its one-sided limits, which are 1 on a side where the ray cannot
/// move at all and 0 otherwise.
fn is_term<T: Real>(extent: &RayExtent<T>, s: T) -> T {
    if s == T::zero() {
        let blocked = |b: T| if b == T::zero() { T::lit(0.5) } else { T::zero() };
        blocked(extent.min) + blocked(extent.max)
    } else {
        extent.distance(s) / s.abs()
    }
}

fn gv_term<T: Real>(basis: &SplineBasis<T>, x: &DVector<T>, a0: &DVector<T>, p: &Projection<T>) -> T {
    let norm = basis.distance(x, a0);
    if norm == T::zero() {
        T::zero()
    } else {
        (&p.raw_scores - &p.scores).norm() / norm
    }
}

fn mean<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(v.len())
}

fn normalize<T: Real>(value: T, denom: T) -> T {
    if denom <= T::zero() {
        T::zero()
    } else {
        value / denom
    }
}

/// Mean distance of the observations to their barycenter.
fn spread<T: Real>(data: &[QuantileSpline<T>]) -> Result<T> {
    let bary = barycenter(data)?;
    let d: Vec<T> = data
        .iter()
        .map(|x| bary.basis().distance(x.coeffs(), bary.coeffs()))
        .collect();
    Ok(mean(&d))
}

/// Free-function form of [`PcaModel::project_observation`].
pub fn project_observation<T: Real>(
    model: &PcaModel<T>,
    x: &QuantileSpline<T>,
    k: usize,
) -> Result<Projection<T>> {
    model.project_observation(x, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spline(basis: &Arc<SplineBasis<f64>>, v: &[f64]) -> QuantileSpline<f64> {
        QuantileSpline::new(basis.clone(), DVector::from_vec(v.to_vec())).unwrap()
    }

    #[test]
    fn constant_dataset_has_zero_spectrum() {
        let basis = Arc::new(SplineBasis::<f64>::new(5).unwrap());
        let x = spline(&basis, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let model = fit_pca(&[x.clone(), x.clone(), x.clone()], None).unwrap();
        assert!(model.eigenvalues().iter().all(|v| v.abs() < 1e-14));
        assert_eq!(model.reconstruction_error(std::slice::from_ref(&x), 2).unwrap(), 0.0);
        assert_eq!(model.normalized_reconstruction_error(&[x.clone(), x], 1).unwrap(), 0.0);
    }

    #[test]
    fn two_points_give_one_direction() {
        let basis = Arc::new(SplineBasis::<f64>::new(5).unwrap());
        let a0 = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let d = DVector::from_vec(vec![-0.1, 0.0, 0.1, 0.2, 0.4]);
        let data = [
            spline(&basis, (&a0 + &d).as_slice()),
            spline(&basis, (&a0 - &d).as_slice()),
        ];
        let model = fit_pca(&data, None).unwrap();
        let dn = basis.norm_sq(&d);
        // 1/n convention: λ₁ = ((‖d‖²) + (‖d‖²)) / 2.
        assert_abs_diff_eq!(model.eigenvalues()[0], dn, epsilon = 1e-12);
        let w = model.directions().column(0).into_owned();
        let target = &d / dn.sqrt();
        assert!((&w - &target).amax() < 1e-10 || (&w + &target).amax() < 1e-10);
        assert!(model.eigenvalues().iter().skip(1).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_single_observation() {
        let basis = Arc::new(SplineBasis::<f64>::new(4).unwrap());
        let x = spline(&basis, &[0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(fit_pca(&[x], None), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn is_term_arithmetic() {
        let e = RayExtent { min: -1.0, max: 2.0 };
        assert_eq!(is_term(&e, 4.0), 0.5);
        assert_eq!(is_term(&e, 0.0), 0.0);
        assert_eq!(is_term(&e, 1.0), 0.0);
    }
}
