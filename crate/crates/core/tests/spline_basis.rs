use approx::assert_abs_diff_eq;
use nalgebra::{DVector, SymmetricEigen};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use wassproj::spline_basis::{is_monotone, make_basis, midpoint_grid};
use wassproj::{Error, SplineBasis};

// Cox-de Boor recursion straight from the definition, used as an
// independent oracle for the basis values and derivatives.
fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    if t[i + p] > t[i] {
        v += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x);
    }
    if t[i + p + 1] > t[i + 1] {
        v += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x);
    }
    v
}

fn cox_de_boor_derivative(t: &[f64], i: usize, x: f64) -> f64 {
    let mut d = 0.0;
    if t[i + 2] > t[i] {
        d += 2.0 / (t[i + 2] - t[i]) * cox_de_boor(t, i, 1, x);
    }
    if t[i + 3] > t[i + 1] {
        d -= 2.0 / (t[i + 3] - t[i + 1]) * cox_de_boor(t, i + 1, 1, x);
    }
    d
}

fn oracle_knots(j: usize) -> Vec<f64> {
    let l = j - 2;
    let mut t = vec![0.0, 0.0];
    t.extend((0..=l).map(|i| i as f64 / l as f64));
    t.extend([1.0, 1.0]);
    t
}

// Right-continuous recursion is zero at x = 1; nudge inside.
fn inside(x: f64) -> f64 {
    x.min(1.0 - 1e-13)
}

/// Composite Simpson on every knot interval with `m` panels.
fn simpson_gram(j: usize, m: usize, derivative: bool) -> nalgebra::DMatrix<f64> {
    let t = oracle_knots(j);
    let l = j - 2;
    let f = |i: usize, x: f64| {
        if derivative {
            cox_de_boor_derivative(&t, i, inside(x))
        } else {
            cox_de_boor(&t, i, 2, inside(x))
        }
    };
    let mut g = nalgebra::DMatrix::zeros(j, j);
    for seg in 0..l {
        let a = seg as f64 / l as f64;
        let h = 1.0 / (l * m) as f64;
        for k in 0..=2 * m {
            let x = a + k as f64 * h / 2.0;
            // Evaluate on the current interval even at its right end.
            let x_eval = if k == 2 * m { x - 1e-13 } else { x };
            let w = if k == 0 || k == 2 * m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            } * h
                / 6.0;
            for p in 0..j {
                let fp = f(p, x_eval);
                if fp == 0.0 {
                    continue;
                }
                for q in 0..j {
                    g[(p, q)] += w * fp * f(q, x_eval);
                }
            }
        }
    }
    g
}

#[test]
fn construction_examples() {
    let b = make_basis::<f64>(4).unwrap();
    assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0]);
    let b = make_basis::<f64>(20).unwrap();
    assert_eq!(b.intervals(), 18);
    let interior = &b.knots()[2..21];
    for w in interior.windows(2) {
        assert_abs_diff_eq!(w[1] - w[0], 1.0 / 18.0, epsilon = 1e-15);
    }
    assert!(matches!(make_basis::<f64>(3), Err(Error::InvalidArgument(_))));
}

#[test]
fn four_function_basis_matches_analytic_pieces() {
    let b = SplineBasis::<f64>::new(4).unwrap();
    let pieces = |x: f64| -> [f64; 4] {
        if x < 0.5 {
            [(1.0 - 2.0 * x).powi(2), 4.0 * x - 6.0 * x * x, 2.0 * x * x, 0.0]
        } else {
            let y = 1.0 - x;
            [0.0, 2.0 * y * y, 4.0 * y - 6.0 * y * y, (1.0 - 2.0 * y).powi(2)]
        }
    };
    for i in 0..=200 {
        let x = i as f64 / 200.0;
        let v = b.eval(x).unwrap();
        let p = pieces(x);
        for k in 0..4 {
            assert_abs_diff_eq!(v[k], p[k], epsilon = 1e-14);
        }
    }
    let v = b.eval(0.5).unwrap();
    assert_eq!(v.as_slice(), &[0.0, 0.5, 0.5, 0.0]);
}

#[test]
fn values_and_derivatives_match_recursion() {
    for j in [4, 5, 9, 20] {
        let b = SplineBasis::<f64>::new(j).unwrap();
        let t = oracle_knots(j);
        for i in 0..=997 {
            let x = i as f64 / 997.0;
            let v = b.eval(x).unwrap();
            let c = DVector::from_fn(j, |k, _| ((k * 7 + 3) % 11) as f64);
            let mut dsum = 0.0;
            for k in 0..j {
                assert_abs_diff_eq!(v[k], cox_de_boor(&t, k, 2, inside(x)), epsilon = 1e-11);
                dsum += c[k] * cox_de_boor_derivative(&t, k, inside(x));
            }
            assert_abs_diff_eq!(b.evaluate_derivative(&c, x), dsum, epsilon = 1e-9);
        }
    }
}

#[test]
fn partition_of_unity_and_boundaries() {
    let b = SplineBasis::<f64>::new(13).unwrap();
    for i in 0..1000 {
        let x = (i as f64 + 0.37) / 1000.0;
        let v = b.eval(x).unwrap();
        assert!((v.sum() - 1.0).abs() <= 1e-12);
        assert!(v.iter().all(|&p| p >= 0.0));
        assert!(v.iter().filter(|&&p| p != 0.0).count() <= 3);
    }
    let v0 = b.eval(0.0).unwrap();
    assert_eq!(v0[0], 1.0);
    assert_eq!(v0.sum(), 1.0);
    assert!(matches!(b.eval(1.5), Err(Error::Domain(_))));
    assert!(matches!(b.eval(-1e-9), Err(Error::Domain(_))));
}

#[test]
fn gram_matrices_match_simpson_oracle() {
    for j in [4, 7, 12] {
        let b = SplineBasis::<f64>::new(j).unwrap();
        let e = simpson_gram(j, 512, false);
        let ep = simpson_gram(j, 512, true);
        // Quartic integrands: composite Simpson error is O(h^4).
        assert!((b.gram().e.clone() - e).amax() <= 1e-11, "E mismatch at J={j}");
        // Derivative products are quadratic on each interval, so Simpson is
        // exact up to the endpoint nudge.
        let tol = 1e-9 * (j * j) as f64;
        assert!((b.gram().e_prime.clone() - ep).amax() <= tol, "E' mismatch at J={j}");
    }
}

#[test]
fn gram_invariants() {
    for j in [4, 6, 20, 57, 100] {
        let b = SplineBasis::<f64>::new(j).unwrap();
        let e = &b.gram().e;
        let ep = &b.gram().e_prime;
        assert_abs_diff_eq!(e.sum(), 1.0, epsilon = 1e-10);
        assert!((e - e.transpose()).amax() <= 1e-15);
        assert!((ep - ep.transpose()).amax() <= 1e-12);
        for p in 0..j {
            assert!(ep.row(p).sum().abs() <= 1e-9 * j as f64);
            for q in 0..j {
                if p.abs_diff(q) > 2 {
                    assert_eq!(e[(p, q)], 0.0);
                }
            }
        }
        let min_eig = SymmetricEigen::new(e.clone()).eigenvalues.min();
        assert!(min_eig > 0.0, "E not PD at J={j}: {min_eig}");
        let min_eig_p = SymmetricEigen::new(ep.clone()).eigenvalues.min();
        assert!(min_eig_p > -1e-9, "E' not PSD at J={j}");
    }
}

#[test]
fn derivative_is_linear_spline_of_differences() {
    // f' = Σ (a_j - a_{j-1}) · 2/(t_{j+2} - t_j) · N_{j,1}, checked against
    // central differences.
    let b = SplineBasis::<f64>::new(11).unwrap();
    let a = DVector::from_fn(11, |k, _| (k as f64).sin() * 3.0 + k as f64);
    let h = 1e-6;
    for i in 0..100 {
        let x = 0.001 + 0.998 * (i as f64 + 0.5) / 100.0;
        let fd = (b.evaluate(&a, x + h) - b.evaluate(&a, x - h)) / (2.0 * h);
        assert_abs_diff_eq!(b.evaluate_derivative(&a, x), fd, epsilon = 1e-6);
    }
}

#[test]
fn fitting_examples() {
    let b = SplineBasis::<f64>::new(10).unwrap();
    let xs: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
    let constant: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 2.5)).collect();
    let c = b.fit_coefficients(&constant).unwrap();
    assert!(c.iter().all(|v| (v - 2.5).abs() <= 1e-12));

    let linear: Vec<(f64, f64)> = xs.iter().map(|&x| (x, x)).collect();
    let c = b.fit_coefficients(&linear).unwrap();
    for &x in &xs {
        assert_abs_diff_eq!(b.evaluate(&c, x), x, epsilon = 1e-10);
    }

    let few: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 / 4.0, 1.0)).collect();
    assert!(matches!(b.fit_coefficients(&few), Err(Error::SingularFit(_))));
    // Enough points, but all in one knot interval.
    let clumped: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 / 1000.0, 1.0)).collect();
    assert!(matches!(b.fit_coefficients(&clumped), Err(Error::SingularFit(_))));
}

#[test]
fn normal_quantile_residual_decreases_with_size() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let grid: Vec<f64> = midpoint_grid(1000);
    let samples: Vec<(f64, f64)> = grid
        .iter()
        .map(|&t| (t, normal.inverse_cdf(0.01 + 0.98 * t) / 2.33))
        .collect();
    let residual = |j: usize| {
        let b = SplineBasis::<f64>::new(j).unwrap();
        let c = b.fit_coefficients(&samples).unwrap();
        samples
            .iter()
            .map(|(x, y)| (b.evaluate(&c, *x) - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let r: Vec<f64> = [10, 20, 40].iter().map(|&j| residual(j)).collect();
    assert!(r[1] < r[0] && r[2] < r[1], "{r:?}");
}

#[test]
fn monotone_check_examples() {
    assert!(is_monotone(&DVector::from_vec(vec![0.0, 1.0, 2.0])));
    assert!(!is_monotone(&DVector::from_vec(vec![0.0, 2.0, 1.0])));
    assert!(is_monotone(&DVector::from_vec(vec![1.0, 1.0 - 1e-13, 2.0])));
    assert!(!is_monotone(&DVector::from_vec(vec![1.0, 1.0 - 1e-11, 2.0])));
}

#[test]
fn greville_interpolant_is_monotone_and_reproduces_linears() {
    let b = SplineBasis::<f64>::new(9).unwrap();
    let g = b.greville();
    assert_eq!(g[0], 0.0);
    assert_eq!(g[8], 1.0);
    let c = b.quasi_interpolant(|x| 3.0 * x - 1.0);
    for i in 0..=100 {
        let x = i as f64 / 100.0;
        assert_abs_diff_eq!(b.evaluate(&c, x), 3.0 * x - 1.0, epsilon = 1e-13);
    }
    assert!(is_monotone(&b.quasi_interpolant(|x: f64| x.powi(5))));
}

#[test]
fn single_precision_basis() {
    let b = SplineBasis::<f32>::new(8).unwrap();
    assert!((b.gram().e.sum() - 1.0).abs() < 1e-5);
    let v = b.eval(0.3).unwrap();
    assert!((v.sum() - 1.0).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Nondecreasing coefficients iff the spline is nondecreasing on a fine grid.
    #[test]
    fn monotone_coefficients_iff_monotone_spline(
        j in 4usize..15,
        raw in prop::collection::vec(-1.0f64..1.0, 15),
        flip in 0usize..15,
    ) {
        let b = SplineBasis::<f64>::new(j).unwrap();
        let mut acc = 0.0;
        let mut a = DVector::zeros(j);
        for k in 0..j {
            acc += raw[k].abs();
            a[k] = acc;
        }
        // Optionally introduce one violation.
        let broken = flip > 0 && flip < j;
        if broken {
            a[flip] = a[flip - 1] - 0.5;
        }
        let values: Vec<f64> = (0..10_000).map(|i| b.evaluate(&a, i as f64 / 9_999.0)).collect();
        let spline_monotone = values.windows(2).all(|w| w[1] >= w[0] - 1e-12);
        prop_assert_eq!(is_monotone(&a), spline_monotone);
        prop_assert_eq!(is_monotone(&a), !broken);
    }
}
