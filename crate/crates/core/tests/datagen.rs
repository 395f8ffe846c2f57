use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wassproj::datagen::{
    beta_star1, beta_star2, cubic_basis, dirichlet, gaussian_mix_params, gen_bernstein,
    gen_consistency_regression, gen_dpm, gen_gaussian_mix, gen_regression_pairs,
    gen_step_quantiles, pava, regression_matrix, Scenario, REGRESSION_BASIS,
};
use wassproj::monotone_projection::MonotoneProjector;
use wassproj::{EmpiricalDistribution, QuantileFunction};

fn total_mass(d: &EmpiricalDistribution<f64>) -> f64 {
    match d {
        EmpiricalDistribution::Histogram { masses, .. } => masses.iter().sum(),
        EmpiricalDistribution::Samples(_) => 1.0,
    }
}

#[test]
fn generators_are_deterministic_per_seed() {
    assert_eq!(gen_gaussian_mix(5, 1).unwrap(), gen_gaussian_mix(5, 1).unwrap());
    assert_ne!(gen_gaussian_mix(5, 1).unwrap(), gen_gaussian_mix(5, 2).unwrap());
    assert_eq!(gen_dpm(4, 10, 3).unwrap(), gen_dpm(4, 10, 3).unwrap());
    assert_eq!(gen_bernstein(4, 10, 3).unwrap(), gen_bernstein(4, 10, 3).unwrap());
    assert_eq!(gen_step_quantiles(6, 3).unwrap(), gen_step_quantiles(6, 3).unwrap());
    // Observation i does not depend on n.
    let short = gen_dpm(3, 10, 8).unwrap();
    let long = gen_dpm(6, 10, 8).unwrap();
    assert_eq!(short[..], long[..3]);
}

#[test]
fn histograms_are_normalized() {
    for d in gen_gaussian_mix(10, 4)
        .unwrap()
        .iter()
        .chain(&gen_dpm(10, 10, 4).unwrap())
        .chain(&gen_bernstein(10, 10, 4).unwrap())
    {
        assert_abs_diff_eq!(total_mass(d), 1.0, epsilon = 1e-12);
    }
    let (lo, hi) = gen_bernstein(1, 10, 4).unwrap()[0].support();
    assert!(lo >= 0.0 && hi <= 1.0);
}

#[test]
fn gaussian_mix_means_follow_the_parameters() {
    let params = gaussian_mix_params(200, 5);
    let dists = gen_gaussian_mix(200, 5).unwrap();
    let mut signs = [0, 0];
    for ((mu, sigma), d) in params.iter().zip(&dists) {
        assert!((0.5..=2.0).contains(sigma));
        assert!((mu.abs() - 3.0).abs() < 1.0);
        signs[usize::from(*mu > 0.0)] += 1;
        // Truncation at ±10 is at least 3.5 sd away.
        assert!((d.mean() - mu).abs() < 0.01, "{} vs {mu}", d.mean());
        // Median of the histogram sits at μ.
        assert!((d.quantile(0.5) - mu).abs() < 0.02);
    }
    assert!(signs[0] > 60 && signs[1] > 60, "{signs:?}");
}

#[test]
fn dirichlet_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let k = 5;
    let mut mean = vec![0.0; k];
    for _ in 0..4000 {
        let w = dirichlet(&mut rng, k, 1.0);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        for (m, x) in mean.iter_mut().zip(&w) {
            *m += x / 4000.0;
        }
    }
    assert!(mean.iter().all(|m| (m - 0.2).abs() < 0.01), "{mean:?}");
    // Small concentrations put nearly all mass on one component.
    let sparse = (0..200)
        .filter(|_| dirichlet(&mut rng, 10, 0.01).iter().cloned().fold(0.0, f64::max) > 0.9)
        .count();
    assert!(sparse > 150);
}

#[test]
fn kernel_examples() {
    assert_eq!(beta_star1(0.5, 0.5), 0.0);
    assert_abs_diff_eq!(beta_star1(1.0, 0.0), 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(beta_star1(1.0, 1.0), 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(beta_star2(0.05, 0.05), beta_star1(0.1, 0.1), epsilon = 1e-15);
    assert_abs_diff_eq!(beta_star2(0.05, 0.05), -0.128, epsilon = 1e-12);
    assert_abs_diff_eq!(beta_star2(0.95, 0.15), beta_star1(1.0, 0.2), epsilon = 1e-15);
    assert_abs_diff_eq!(beta_star2(1.0, 1.0), beta_star1(1.0, 1.0), epsilon = 1e-15);
}

#[test]
fn pava_matches_identity_metric_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let proj = MonotoneProjector::new(&DMatrix::<f64>::identity(12, 12)).unwrap();
    for _ in 0..100 {
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = proj.project(&DVector::from_vec(y.clone())).unwrap().x;
        for (a, b) in pava(&y).iter().zip(want.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

fn cubic_oracle(size: usize, i: usize, x: f64) -> f64 {
    let l = size - 3;
    let mut t = vec![0.0; 3];
    t.extend((0..=l).map(|k| k as f64 / l as f64));
    t.extend([1.0; 3]);
    fn rec(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        if t[i + p] > t[i] {
            v += (x - t[i]) / (t[i + p] - t[i]) * rec(t, i, p - 1, x);
        }
        if t[i + p + 1] > t[i + 1] {
            v += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * rec(t, i + 1, p - 1, x);
        }
        v
    }
    rec(&t, i, 3, x.min(1.0 - 1e-13))
}

#[test]
fn cubic_basis_matches_recursion() {
    for i in 0..=300 {
        let x = i as f64 / 300.0;
        let v = cubic_basis(REGRESSION_BASIS, x);
        assert_eq!(v.len(), REGRESSION_BASIS);
        for (k, val) in v.iter().enumerate() {
            assert_abs_diff_eq!(*val, cubic_oracle(REGRESSION_BASIS, k, x), epsilon = 1e-10);
        }
    }
}

#[test]
fn regression_pairs_follow_the_linear_model() {
    let pairs = gen_regression_pairs(8, 9).unwrap();
    let b = regression_matrix(REGRESSION_BASIS, 9);
    assert_eq!(b, pairs.b);
    for col in 0..REGRESSION_BASIS {
        assert!(b.column(col).as_slice().windows(2).all(|w| w[1] >= w[0]));
    }
    for i in 0..8 {
        let az = &pairs.az[i];
        assert_eq!(az[0], 0.0);
        assert_abs_diff_eq!(az[REGRESSION_BASIS - 1], 1.0, epsilon = 1e-12);
        assert!(az.as_slice().windows(2).all(|w| w[1] >= w[0]));
        assert!((&pairs.ay[i] - &b * az).amax() < 1e-12);
        assert!(pairs.ay[i].as_slice().windows(2).all(|w| w[1] >= w[0]));
        // Histogram quantiles track the cubic spline quantile.
        for t in [0.1, 0.37, 0.5, 0.81] {
            let q: f64 = (0..REGRESSION_BASIS).map(|k| cubic_oracle(REGRESSION_BASIS, k, t) * az[k]).sum();
            assert_abs_diff_eq!(pairs.z[i].quantile(t), q, epsilon = 1e-3);
        }
    }
}

#[test]
fn step_quantiles_have_two_atoms() {
    for d in gen_step_quantiles(50, 10).unwrap() {
        let EmpiricalDistribution::Samples(v) = &d else { panic!("expected samples") };
        assert_eq!(v.len(), 2);
        assert!(v[0] >= 0.0 && v[1] >= v[0]);
        assert_eq!(d.quantile(0.3), v[0]);
        assert_eq!(d.quantile(0.7), v[1]);
    }
}

#[test]
fn consistency_pairs_are_monotone() {
    let (z, y) = gen_consistency_regression(3, 1, 11).unwrap();
    assert_eq!((z.len(), y.len()), (3, 3));
    for (zi, yi) in z.iter().zip(&y) {
        let (lo, hi) = zi.support();
        assert!((0.0..=5.0).contains(&lo) && hi - lo <= 1.0 + 1e-12);
        let EmpiricalDistribution::Samples(v) = yi else { panic!("expected samples") };
        assert_eq!(v.len(), 1000);
    }
    assert!(gen_consistency_regression(3, 3, 11).is_err());
    let (_, y2) = gen_consistency_regression(2, 2, 11).unwrap();
    assert_eq!(y2.len(), 2);
}

#[test]
fn scenarios_by_name() {
    for name in [
        "gaussian_mix",
        "dpm",
        "bernstein",
        "reg_wasserstein",
        "consistency_beta1",
        "consistency_beta2",
        "step_quantile",
    ] {
        let s = Scenario::from_name(name, 3).unwrap();
        assert_eq!(s.name(), name);
        let g = s.generate(1).unwrap();
        assert_eq!(g.predictors.len(), 3);
        assert_eq!(g.responses.is_some(), name.starts_with("reg") || name.starts_with("consistency"));
    }
    assert!(Scenario::from_name("nope", 3).is_err());
    assert!(gen_gaussian_mix(0, 1).is_err());
    assert!(gen_bernstein(1, 1, 1).is_err());
}
