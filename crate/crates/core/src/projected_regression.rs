//! Projected distribution-on-distribution linear regression.
//!
//! The linear model in spline coordinates is
//! `a_y = θ + Σ_j Θ_j E a_{z_j}`, fitted by penalized least squares in the
//! E-metric and followed by metric projection onto the monotone cone at
//! prediction time.
//!
//! With `X = Θᵀ` and column-major `vec`, the penalized normal equations are
//! `(C_ρ + ρP) vec(X) = vec(D̂)` where
//! `C_ρ = E ⊗ (Ĉ + ρE')` and `P = E' ⊗ E + E ⊗ E'`. Several predictors are
//! stacked into one system with the same penalty applied to every block.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distributions::QuantileSpline;
use crate::error::{Error, Result};
use crate::monotone_projection::MonotoneProjector;
use crate::scalar::Real;
use crate::spline_basis::SplineBasis;

/// Relative tolerance under which two cross-validation errors count as tied.
pub const CV_TIE_TOL: f64 = 1e-9;

/// `Ĉ`, `D̂` and the Kronecker assemblies of the single-predictor system.
#[derive(Debug, Clone)]
pub struct MomentMatrices<T: Real> {
    pub c_hat: DMatrix<T>,
    pub d_hat: DMatrix<T>,
    pub c_rho: DMatrix<T>,
    pub p: DMatrix<T>,
}

/// `Ĉ = (1/n) Σ (E z_i)(E z_i)ᵀ`, `D̂ = (1/n) Σ (E z_i)(E y_i)ᵀ` and the
/// Kronecker matrices `C_ρ`, `P` for centered coefficient vectors.
pub fn moment_matrices<T: Real>(
    az: &[DVector<T>],
    ay: &[DVector<T>],
    e: &DMatrix<T>,
    e_prime: &DMatrix<T>,
    rho: T,
) -> Result<MomentMatrices<T>> {
    if az.len() != ay.len() || az.is_empty() {
        return Err(Error::invalid(format!(
            "{} predictors for {} responses",
            az.len(),
            ay.len()
        )));
    }
    let j = e.nrows();
    let n = T::from_count(az.len());
    let mut c_hat = DMatrix::zeros(j, j);
    let mut d_hat = DMatrix::zeros(j, j);
    for (z, y) in az.iter().zip(ay) {
        let ez = e * z;
        let ey = e * y;
        c_hat += &ez * ez.transpose();
        d_hat += &ez * ey.transpose();
    }
    c_hat /= n;
    d_hat /= n;
    let c_rho = e.kronecker(&(&c_hat + e_prime * rho));
    let p = e_prime.kronecker(e) + e.kronecker(e_prime);
    Ok(MomentMatrices { c_hat, d_hat, c_rho, p })
}

/// Cross-validation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Folds {
    LeaveOneOut,
    KFold(usize),
}

impl Folds {
    /// Test index sets; folds are contiguous blocks of near-equal size.
    pub fn partition(self, n: usize) -> Result<Vec<Vec<usize>>> {
        let k = match self {
            Folds::LeaveOneOut => n,
            Folds::KFold(k) => k,
        };
        if k < 2 || k > n {
            return Err(Error::invalid(format!("{k} folds for {n} observations")));
        }
        let mut out = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let size = n / k + usize::from(f < n % k);
            out.push((start..start + size).collect());
            start += size;
        }
        if out.iter().any(|t: &Vec<usize>| n - t.len() < 2) {
            return Err(Error::invalid("every training fold needs at least 2 observations"));
        }
        Ok(out)
    }
}

/// Nine logarithmically spaced penalties from `1e-6` to `1e2`.
pub fn default_rho_grid<T: Real>() -> Vec<T> {
    (-6..=2).map(|p| T::lit(10f64.powi(p))).collect()
}

#[derive(Debug, Clone)]
pub struct RegressionModel<T: Real> {
    pub basis: Arc<SplineBasis<T>>,
    pub theta_alpha: DVector<T>,
    /// One `J × J` kernel matrix per predictor.
    pub thetas: Vec<DMatrix<T>>,
    pub rho: T,
    pub include_intercept: bool,
    /// Coefficient means of each predictor; zero without intercept.
    pub z_means: Vec<DVector<T>>,
    pub y_mean: DVector<T>,
}

/// Cross-validation result: mean prediction error per penalty.
#[derive(Debug, Clone)]
pub struct CvResult<T: Real> {
    pub best_rho: T,
    /// `(rho, mean W2 error)` in grid order.
    pub table: Vec<(T, T)>,
}

fn check_inputs<T: Real>(z: &[Vec<QuantileSpline<T>>], y: &[QuantileSpline<T>]) -> Result<Arc<SplineBasis<T>>> {
    if z.is_empty() {
        return Err(Error::invalid("at least one predictor is required"));
    }
    let first = y.first().ok_or_else(|| Error::invalid("empty response list"))?;
    for pred in z {
        if pred.len() != y.len() {
            return Err(Error::invalid(format!(
                "{} predictor observations for {} responses",
                pred.len(),
                y.len()
            )));
        }
        if pred.iter().any(|q| !q.same_basis(first)) {
            return Err(Error::invalid("predictors and responses use different bases"));
        }
    }
    if y.iter().any(|q| !q.same_basis(first)) {
        return Err(Error::invalid("responses use different bases"));
    }
    Ok(first.basis().clone())
}

fn mean_of<T: Real>(v: &[&DVector<T>], j: usize) -> DVector<T> {
    let mut m = DVector::zeros(j);
    for x in v {
        m += *x;
    }
    m / T::from_count(v.len().max(1))
}

/// Penalized least-squares fit; `rho > 0`, `n ≥ 2`.
pub fn fit_regression<T: Real>(
    z: &[Vec<QuantileSpline<T>>],
    y: &[QuantileSpline<T>],
    rho: T,
    include_intercept: bool,
) -> Result<RegressionModel<T>> {
    let idx: Vec<usize> = (0..y.len()).collect();
    fit_subset(z, y, &idx, rho, include_intercept)
}

fn fit_subset<T: Real>(
    z: &[Vec<QuantileSpline<T>>],
    y: &[QuantileSpline<T>],
    idx: &[usize],
    rho: T,
    include_intercept: bool,
) -> Result<RegressionModel<T>> {
    let basis = check_inputs(z, y)?;
    if !(rho > T::zero()) || !rho.is_finite_value() {
        return Err(Error::invalid(format!("penalty must be positive, got {rho}")));
    }
    if idx.len() < 2 {
        return Err(Error::invalid("regression needs at least 2 observations"));
    }
    let j = basis.size();
    let kp = z.len();
    let e = basis.e();
    let ep = &basis.gram().e_prime;

    let (z_means, y_mean) = if include_intercept {
        let zm = z
            .iter()
            .map(|pred| mean_of(&idx.iter().map(|&i| pred[i].coeffs()).collect::<Vec<_>>(), j))
            .collect();
        let ym = mean_of(&idx.iter().map(|&i| y[i].coeffs()).collect::<Vec<_>>(), j);
        (zm, ym)
    } else {
        (vec![DVector::zeros(j); kp], DVector::zeros(j))
    };

    // Stacked features u_i = [E z̃_i1; …; E z̃_iK].
    let n = T::from_count(idx.len());
    let mut c_big = DMatrix::zeros(kp * j, kp * j);
    let mut d_big = DMatrix::zeros(kp * j, j);
    for &i in idx {
        let mut u = DVector::zeros(kp * j);
        for (p, pred) in z.iter().enumerate() {
            let ez = e * (pred[i].coeffs() - &z_means[p]);
            u.rows_mut(p * j, j).copy_from(&ez);
        }
        let ey = e * (y[i].coeffs() - &y_mean);
        c_big += &u * u.transpose();
        d_big += &u * ey.transpose();
    }
    c_big /= n;
    d_big /= n;

    // Blockwise penalty; for a single predictor this is exactly C_ρ + ρP.
    let eye_k = DMatrix::<T>::identity(kp, kp);
    let left = &c_big + eye_k.kronecker(ep) * (rho * T::lit(2.0));
    let system = e.kronecker(&left) + ep.kronecker(&eye_k.kronecker(e)) * rho;
    let rhs = DVector::from_column_slice(d_big.as_slice());
    let sol = system
        .cholesky()
        .ok_or_else(|| Error::Numeric {
            message: "penalized normal equations are not positive definite".into(),
            iterations: 0,
            residual: f64::NAN,
        })?
        .solve(&rhs);
    let x = DMatrix::from_column_slice(kp * j, j, sol.as_slice());
    let thetas: Vec<DMatrix<T>> = (0..kp).map(|p| x.rows(p * j, j).transpose()).collect();

    let mut theta_alpha = y_mean.clone();
    if include_intercept {
        for (p, th) in thetas.iter().enumerate() {
            theta_alpha -= th * (e * &z_means[p]);
        }
    } else {
        theta_alpha.fill(T::zero());
    }
    Ok(RegressionModel {
        basis,
        theta_alpha,
        thetas,
        rho,
        include_intercept,
        z_means,
        y_mean,
    })
}

impl<T: Real> RegressionModel<T> {
    pub fn num_predictors(&self) -> usize {
        self.thetas.len()
    }

    /// `θ + Σ_j Θ_j E z_j`, before projection.
    pub fn linear_prediction(&self, z: &[&DVector<T>]) -> Result<DVector<T>> {
        if z.len() != self.thetas.len() {
            return Err(Error::invalid(format!(
                "model has {} predictors, got {}",
                self.thetas.len(),
                z.len()
            )));
        }
        let e = self.basis.e();
        let mut out = self.theta_alpha.clone();
        for (th, zj) in self.thetas.iter().zip(z) {
            if zj.len() != self.basis.size() {
                return Err(Error::invalid("predictor basis size does not match the model"));
            }
            out += th * (e * *zj);
        }
        Ok(out)
    }

    /// Metric projection of the linear prediction onto the monotone cone.
    pub fn predict(&self, z: &[&QuantileSpline<T>]) -> Result<QuantileSpline<T>> {
        if z.iter().any(|q| q.basis().size() != self.basis.size()) {
            return Err(Error::invalid("predictor basis does not match the model"));
        }
        let coeffs: Vec<&DVector<T>> = z.iter().map(|q| q.coeffs()).collect();
        let lin = self.linear_prediction(&coeffs)?;
        let x = MonotoneProjector::new(self.basis.e())?.project(&lin)?.x;
        QuantileSpline::with_tolerance(self.basis.clone(), x, T::lit(1e-10))
    }

    /// Penalized objective minimized by the fit, on the model's centering:
    /// mean squared E-norm residual plus `ρ Σ_j vec(Θ_jᵀ)ᵀ (E ⊗ E' + P) vec(Θ_jᵀ)`.
    pub fn penalized_objective(
        &self,
        thetas: &[DMatrix<T>],
        z: &[Vec<QuantileSpline<T>>],
        y: &[QuantileSpline<T>],
    ) -> T {
        let e = self.basis.e();
        let ep = &self.basis.gram().e_prime;
        let mut fit = T::zero();
        for i in 0..y.len() {
            let mut r = y[i].coeffs() - &self.y_mean;
            for (p, th) in thetas.iter().enumerate() {
                r -= th * (e * (z[p][i].coeffs() - &self.z_means[p]));
            }
            fit += r.dot(&(e * &r));
        }
        fit /= T::from_count(y.len());
        let mut pen = T::zero();
        for th in thetas {
            let x = th.transpose();
            // (A ⊗ B) vec(X) = vec(B X Aᵀ)
            let form = ep * &x * e * T::lit(2.0) + e * &x * ep;
            pen += x.component_mul(&form).sum();
        }
        fit + self.rho * pen
    }
}

/// Mean W2 prediction error for each penalty; the best penalty is the
/// smallest error, with near ties going to the larger penalty.
pub fn cross_validate_rho<T: Real>(
    z: &[Vec<QuantileSpline<T>>],
    y: &[QuantileSpline<T>],
    rho_grid: &[T],
    folds: Folds,
    include_intercept: bool,
) -> Result<CvResult<T>> {
    check_inputs(z, y)?;
    if rho_grid.is_empty() {
        return Err(Error::invalid("empty penalty grid"));
    }
    let n = y.len();
    let parts = folds.partition(n)?;
    let jobs: Vec<(usize, usize)> = (0..rho_grid.len())
        .flat_map(|r| (0..parts.len()).map(move |f| (r, f)))
        .collect();
    let sums: Vec<(usize, T)> = jobs
        .par_iter()
        .map(|&(r, f)| {
            let test = &parts[f];
            let train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
            let model = fit_subset(z, y, &train, rho_grid[r], include_intercept)?;
            let mut s = T::zero();
            for &i in test {
                let zi: Vec<&QuantileSpline<T>> = z.iter().map(|pred| &pred[i]).collect();
                let pred = model.predict(&zi)?;
                s += model.basis.distance(pred.coeffs(), y[i].coeffs());
            }
            Ok((r, s))
        })
        .collect::<Result<_>>()?;
    let mut totals = vec![T::zero(); rho_grid.len()];
    for (r, s) in sums {
        totals[r] += s;
    }
    let table: Vec<(T, T)> = rho_grid
        .iter()
        .zip(totals)
        .map(|(&rho, s)| (rho, s / T::from_count(n)))
        .collect();
    let mut best = 0;
    for i in 1..table.len() {
        let (rb, eb) = table[best];
        let (ri, ei) = table[i];
        let tie = (ei - eb).abs() <= T::lit(CV_TIE_TOL) * eb.abs().max(ei.abs());
        if (tie && ri > rb) || (!tie && ei < eb) {
            best = i;
        }
    }
    Ok(CvResult { best_rho: table[best].0, table })
}
