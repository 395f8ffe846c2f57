//! Seedable simulation scenarios.
//!
//! Every generator is a pure function of its parameters and seed.
//! Observation `i` draws from its own ChaCha stream, so generation is
//! parallel and reproducible. Shared quantities (such as a regression
//! matrix) use a dedicated stream.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::distributions::EmpiricalDistribution;
use crate::error::{Error, Result};

/// Points of the truncation/renormalization grid.
pub const DENSITY_GRID: usize = 2048;
/// Mixture size used when none is given.
pub const DEFAULT_MIXTURE_K: usize = 10;
/// Basis size of the cubic quantile splines in the regression scenario.
pub const REGRESSION_BASIS: usize = 30;
/// Levels used to discretize generated quantile functions.
pub const QUANTILE_LEVELS: usize = 2048;
/// Steps of the predictor quantiles in the consistency scenario.
pub const CONSISTENCY_STEPS: usize = 1000;

const SHARED_STREAM: u64 = u64::MAX;

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulation scenario with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Scenario {
    GaussianMix { n: usize },
    Dpm { n: usize, k: usize },
    Bernstein { n: usize, k: usize },
    RegWasserstein { n: usize },
    ConsistencyBeta1 { n: usize },
    ConsistencyBeta2 { n: usize },
    StepQuantile { n: usize },
}

/// Output of [`Scenario::generate`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub predictors: Vec<EmpiricalDistribution<f64>>,
    /// Present for regression scenarios.
    pub responses: Option<Vec<EmpiricalDistribution<f64>>>,
}

impl Scenario {
    /// Parses a scenario name with default parameters for `n`.
    pub fn from_name(name: &str, n: usize) -> Result<Self> {
        Ok(match name {
            "gaussian_mix" => Self::GaussianMix { n },
            "dpm" => Self::Dpm { n, k: DEFAULT_MIXTURE_K },
            "bernstein" => Self::Bernstein { n, k: DEFAULT_MIXTURE_K },
            "reg_wasserstein" => Self::RegWasserstein { n },
            "consistency_beta1" => Self::ConsistencyBeta1 { n },
            "consistency_beta2" => Self::ConsistencyBeta2 { n },
            "step_quantile" => Self::StepQuantile { n },
            other => return Err(Error::invalid(format!("unknown scenario '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianMix { .. } => "gaussian_mix",
            Self::Dpm { .. } => "dpm",
            Self::Bernstein { .. } => "bernstein",
            Self::RegWasserstein { .. } => "reg_wasserstein",
            Self::ConsistencyBeta1 { .. } => "consistency_beta1",
            Self::ConsistencyBeta2 { .. } => "consistency_beta2",
            Self::StepQuantile { .. } => "step_quantile",
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Generated> {
        let single = |p| Generated { predictors: p, responses: None };
        let pair = |(z, y)| Generated { predictors: z, responses: Some(y) };
        Ok(match *self {
            Self::GaussianMix { n } => single(gen_gaussian_mix(n, seed)?),
            Self::Dpm { n, k } => single(gen_dpm(n, k, seed)?),
            Self::Bernstein { n, k } => single(gen_bernstein(n, k, seed)?),
            Self::StepQuantile { n } => single(gen_step_quantiles(n, seed)?),
            Self::RegWasserstein { n } => {
                let p = gen_regression_pairs(n, seed)?;
                pair((p.z, p.y))
            }
            Self::ConsistencyBeta1 { n } => pair(gen_consistency_regression(n, 1, seed)?),
            Self::ConsistencyBeta2 { n } => pair(gen_consistency_regression(n, 2, seed)?),
        })
    }
}

/// Histogram with [`DENSITY_GRID`] equal bins on `[lo, hi]`, weighted by an
/// unnormalized density evaluated at the bin midpoints.
pub fn density_histogram(lo: f64, hi: f64, pdf: impl Fn(f64) -> f64) -> Result<EmpiricalDistribution<f64>> {
    let m = DENSITY_GRID;
    let h = (hi - lo) / m as f64;
    let edges: Vec<f64> = (0..=m).map(|i| if i == m { hi } else { lo + h * i as f64 }).collect();
    let weights: Vec<f64> = (0..m).map(|i| pdf(lo + h * (i as f64 + 0.5)) * h).collect();
    EmpiricalDistribution::from_weights(edges, weights)
}

/// Dirichlet draw with every concentration equal to `alpha`.
///
/// Gamma variates are drawn in log space (`G = G' U^{1/α}` with
/// `G' ~ Gamma(α + 1)`) so that small concentrations do not underflow.
pub fn dirichlet(rng: &mut impl Rng, k: usize, alpha: f64) -> Vec<f64> {
    let boosted = Gamma::new(alpha + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn gauss_kernel(x: f64, mu: f64, sigma: f64) -> f64 {
    (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp() / sigma
}

/// `(μ_i, σ_i)` of the Gaussian-mixture-location scenario.
pub fn gaussian_mix_params(n: usize, seed: u64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mu = Normal::new(3.0 * sign, 0.2).unwrap().sample(&mut rng);
            let sigma = Uniform::new(0.5, 2.0).unwrap().sample(&mut rng);
            (mu, sigma)
        })
        .collect()
}

/// Truncated normals on `[-10, 10]`, with locations from a two-component
/// mixture at ±3 and scales uniform on `[0.5, 2]`.
pub fn gen_gaussian_mix(n: usize, seed: u64) -> Result<Vec<EmpiricalDistribution<f64>>> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    gaussian_mix_params(n, seed)
        .into_par_iter()
        .map(|(mu, sigma)| density_histogram(-10.0, 10.0, |x| gauss_kernel(x, mu, sigma)))
        .collect()
}

/// Mixture weights and components of the Dirichlet-process-like scenario.
pub fn dpm_params(i: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let mut rng = stream(seed, i as u64);
    let w = dirichlet(&mut rng, k, 1.0 / k as f64);
    let loc = Normal::new(0.0, 2.0).unwrap();
    let scale = Uniform::new(0.5, 2.0).unwrap();
    let comps = (0..k).map(|_| (loc.sample(&mut rng), scale.sample(&mut rng))).collect();
    (w, comps)
}

/// Finite Dirichlet-process mixtures of `k` Gaussians on `[-10, 10]` with a
/// `1e-5` density floor.
pub fn gen_dpm(n: usize, k: usize, seed: u64) -> Result<Vec<EmpiricalDistribution<f64>>> {
    if n == 0 || k == 0 {
        return Err(Error::invalid("n and k must be positive"));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let (w, comps) = dpm_params(i, k, seed);
            density_histogram(-10.0, 10.0, |x| {
                w.iter()
                    .zip(&comps)
                    .map(|(wj, (m, s))| wj * gauss_kernel(x, *m, *s))
                    .sum::<f64>()
                    + 1e-5
            })
        })
        .collect()
}

fn beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    (ln_norm + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()).exp()
}

/// Bernstein mixtures `Σ_j w_j Beta(x; j, k - j + 1)` on `[0, 1]` with
/// `w ~ Dirichlet_k(0.01)`.
pub fn gen_bernstein(n: usize, k: usize, seed: u64) -> Result<Vec<EmpiricalDistribution<f64>>> {
    if n == 0 || k < 2 {
        return Err(Error::invalid("need n ≥ 1 and k ≥ 2"));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let w = dirichlet(&mut rng, k, 0.01);
            density_histogram(0.0, 1.0, |x| {
                (1..=k)
                    .map(|j| w[j - 1] * beta_pdf(x, j as f64, (k - j + 1) as f64))
                    .sum()
            })
        })
        .collect()
}

/// Quantiles `v₁` on `(0, 1/2]` and `v₁ + v₂` on `(1/2, 1)` with
/// `v ~ max(0, N(0, 1))`: a dataset living on the boundary of the cone.
pub fn gen_step_quantiles(n: usize, seed: u64) -> Result<Vec<EmpiricalDistribution<f64>>> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let v1: f64 = StandardNormal.sample(&mut rng);
            let v2: f64 = StandardNormal.sample(&mut rng);
            let (v1, v2) = (v1.max(0.0), v2.max(0.0));
            EmpiricalDistribution::from_samples(vec![v1, v1 + v2])
        })
        .collect()
}

/// Clamped uniform cubic B-spline basis values at `x ∈ [0, 1]`.
pub fn cubic_basis(size: usize, x: f64) -> Vec<f64> {
    const P: usize = 3;
    let intervals = size - P;
    let mut knots = vec![0.0; P];
    knots.extend((0..=intervals).map(|i| i as f64 / intervals as f64));
    knots.extend([1.0; P]);
    let m = ((x * intervals as f64).floor() as usize).min(intervals - 1);
    let span = m + P;
    let mut n = [0.0; P + 1];
    let mut left = [0.0; P + 1];
    let mut right = [0.0; P + 1];
    n[0] = 1.0;
    for j in 1..=P {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    let mut out = vec![0.0; size];
    for (k, v) in n.iter().enumerate() {
        out[m + k] = *v;
    }
    out
}

/// Distribution whose quantile function is `q`, discretized as
/// [`QUANTILE_LEVELS`] equal-mass bins between consecutive quantile values.
/// Its density is the numerical derivative of the inverse of `q`.
pub fn quantile_histogram(q: impl Fn(f64) -> f64) -> Result<EmpiricalDistribution<f64>> {
    let m = QUANTILE_LEVELS;
    let values: Vec<f64> = (0..=m).map(|i| q(i as f64 / m as f64)).collect();
    let mut edges = vec![values[0]];
    let mut masses: Vec<f64> = Vec::new();
    for i in 0..m {
        let mass = 1.0 / m as f64;
        if values[i + 1] > *edges.last().unwrap() {
            edges.push(values[i + 1]);
            masses.push(mass);
        } else if let Some(last) = masses.last_mut() {
            *last += mass;
        } else {
            return Err(Error::invalid("quantile function is constant near 0"));
        }
    }
    // Flat stretches were merged into the preceding bin; renormalize the
    // accumulated rounding.
    EmpiricalDistribution::from_weights(edges, masses)
}

/// Output of [`gen_regression_pairs`].
#[derive(Debug, Clone)]
pub struct RegressionPairs {
    pub z: Vec<EmpiricalDistribution<f64>>,
    pub y: Vec<EmpiricalDistribution<f64>>,
    /// Cubic coefficients of predictors and responses.
    pub az: Vec<DVector<f64>>,
    pub ay: Vec<DVector<f64>>,
    pub b: DMatrix<f64>,
}

/// Regression matrix whose columns are nondecreasing down the rows, so
/// that `B a` is nondecreasing whenever `a ≥ 0` entrywise.
pub fn regression_matrix(size: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, SHARED_STREAM);
    let u = Uniform::new(0.0, 0.5).unwrap();
    let mut b = DMatrix::zeros(size, size);
    for col in 0..size {
        let mut acc = 0.0;
        for row in 0..size {
            acc += u.sample(&mut rng);
            b[(row, col)] = acc;
        }
    }
    b
}

/// Pairs generated by a linear model on cubic spline quantile coefficients:
/// `a_z = (0, δ₁, δ₁+δ₂, …)` with Dirichlet(1, …, 1) increments and
/// `a_y = B a_z`.
pub fn gen_regression_pairs(n: usize, seed: u64) -> Result<RegressionPairs> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let size = REGRESSION_BASIS;
    let b = regression_matrix(size, seed);
    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut rng = stream(seed, i as u64);
            let delta = dirichlet(&mut rng, size - 1, 1.0);
            let mut az = DVector::zeros(size);
            for j in 1..size {
                az[j] = az[j - 1] + delta[j - 1];
            }
            let ay = &b * &az;
            let eval = |a: &DVector<f64>, t: f64| -> f64 {
                cubic_basis(size, t).iter().zip(a.iter()).map(|(p, c)| p * c).sum()
            };
            let z = quantile_histogram(|t| eval(&az, t))?;
            let y = quantile_histogram(|t| eval(&ay, t))?;
            Ok((z, y, az, ay))
        })
        .collect::<Result<_>>()?;
    let mut out = RegressionPairs { z: vec![], y: vec![], az: vec![], ay: vec![], b };
    for (z, y, az, ay) in rows {
        out.z.push(z);
        out.y.push(y);
        out.az.push(az);
        out.ay.push(ay);
    }
    Ok(out)
}

/// Smooth kernel `(t - 1/2)³ + (s - 1/2)³`.
pub fn beta_star1(t: f64, s: f64) -> f64 {
    (t - 0.5).powi(3) + (s - 0.5).powi(3)
}

/// Piecewise-constant kernel on a 10 × 10 grid: on the cell
/// `[0.1(k-1), 0.1k) × [0.1(h-1), 0.1h)` it equals `β*₁(0.1k, 0.1h)`.
pub fn beta_star2(t: f64, s: f64) -> f64 {
    let cell = |x: f64| ((x * 10.0).floor() as i64 + 1).clamp(1, 10) as f64 * 0.1;
    beta_star1(cell(t), cell(s))
}

/// Isotonic (nondecreasing) least-squares fit with equal weights.
pub fn pava(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Predictor values `v_j` on the step intervals, kernel-operator responses
/// projected onto nondecreasing functions, plus a Gaussian level shift.
///
/// Predictors are step quantiles with [`CONSISTENCY_STEPS`] steps of
/// Dirichlet(0.01) size above a `U(0, 5)` offset. The response is
/// `t ↦ ∫ β*(t, s) F_z(s) ds` on the step midpoints, isotonized and shifted
/// by one `N(0, 0.1²)` draw.
pub fn gen_consistency_regression(
    n: usize,
    which_beta: u8,
    seed: u64,
) -> Result<(Vec<EmpiricalDistribution<f64>>, Vec<EmpiricalDistribution<f64>>)> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if which_beta != 1 && which_beta != 2 {
        return Err(Error::invalid("kernel index must be 1 or 2"));
    }
    let m = CONSISTENCY_STEPS;
    let h = 1.0 / m as f64;
    // Kernel integrated over each step of s, evaluated at step midpoints of t.
    let kernel = DMatrix::from_fn(m, m, |ti, sj| {
        let t = (ti as f64 + 0.5) * h;
        let (a, b) = (sj as f64 * h, (sj + 1) as f64 * h);
        if which_beta == 1 {
            (t - 0.5).powi(3) * h + ((b - 0.5).powi(4) - (a - 0.5).powi(4)) / 4.0
        } else {
            beta_star2(t, (a + b) / 2.0) * h
        }
    });
    let pairs: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut rng = stream(seed, i as u64);
            let delta = dirichlet(&mut rng, m, 0.01);
            let shift = Uniform::new(0.0, 5.0).unwrap().sample(&mut rng);
            let noise = Normal::new(0.0, 0.1).unwrap().sample(&mut rng);
            let mut v = DVector::zeros(m);
            let mut acc = shift;
            for j in 0..m {
                acc += delta[j];
                v[j] = acc;
            }
            let resp = &kernel * &v;
            let iso: Vec<f64> = pava(resp.as_slice()).into_iter().map(|x| x + noise).collect();
            let z = EmpiricalDistribution::from_samples(v.as_slice().to_vec())?;
            let y = EmpiricalDistribution::from_samples(iso)?;
            Ok((z, y))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_sums_to_one() {
        let mut rng = stream(1, 0);
        for alpha in [0.01, 0.1, 1.0] {
            let w = dirichlet(&mut rng, 10, alpha);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn pava_pools() {
        assert_eq!(pava(&[1.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(pava(&[0.0, 2.0, 1.0, 3.0]), vec![0.0, 1.5, 1.5, 3.0]);
    }

    #[test]
    fn kernels() {
        assert_eq!(beta_star1(0.5, 0.5), 0.0);
        assert_eq!(beta_star2(0.01, 0.02), beta_star2(0.09, 0.05));
        assert_eq!(beta_star2(0.05, 0.05), beta_star1(0.1, 0.1));
    }

    #[test]
    fn cubic_partition_of_unity() {
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            let s: f64 = cubic_basis(30, x).iter().sum();
            assert!((s - 1.0).abs() < 1e-13);
        }
        assert_eq!(cubic_basis(30, 0.0)[0], 1.0);
        assert!((cubic_basis(30, 1.0)[29] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn scenario_names_round_trip() {
        for name in ["gaussian_mix", "dpm", "bernstein", "reg_wasserstein", "consistency_beta1", "consistency_beta2", "step_quantile"] {
            assert_eq!(Scenario::from_name(name, 3).unwrap().name(), name);
        }
        assert!(Scenario::from_name("nope", 3).is_err());
    }
}
