//! Frozen outputs for fixed seeds. Regenerate with `WASSPROJ_BLESS=1 cargo test -p wassproj-cli --test golden`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_wassproj");
const REL_TOL: f64 = 1e-9;
const ABS_TOL: f64 = 1e-12;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn run(args: &[&str]) {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ABS_TOL + REL_TOL * a.abs().max(b.abs())
}

fn compare_csv(got: &str, want: &str, name: &str) {
    let (g, w): (Vec<_>, Vec<_>) = (got.lines().collect(), want.lines().collect());
    assert_eq!(g.len(), w.len(), "{name}: row count");
    for (ln, (gl, wl)) in g.iter().zip(&w).enumerate() {
        let (gf, wf): (Vec<_>, Vec<_>) = (gl.split(',').collect(), wl.split(',').collect());
        assert_eq!(gf.len(), wf.len(), "{name}:{}", ln + 1);
        for (a, b) in gf.iter().zip(&wf) {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!(close(x, y), "{name}:{}: {x} vs {y}", ln + 1),
                _ => assert_eq!(a, b, "{name}:{}", ln + 1),
            }
        }
    }
}

fn compare_json(got: &Value, want: &Value, path: &str) {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!(close(x, y), "{path}: {x} vs {y}");
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                compare_json(x, y, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "{path}");
            for (k, x) in a {
                compare_json(x, &b[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

fn check(produced: &Path, name: &str) {
    let golden = golden_dir().join(name);
    let got = fs::read_to_string(produced).unwrap();
    if std::env::var_os("WASSPROJ_BLESS").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&golden, &got).unwrap();
        return;
    }
    let want = fs::read_to_string(&golden).unwrap_or_else(|_| panic!("missing golden file {name}"));
    if name.ends_with(".json") {
        compare_json(&serde_json::from_str(&got).unwrap(), &serde_json::from_str(&want).unwrap(), name);
    } else {
        compare_csv(&got, &want, name);
    }
}

#[test]
fn gaussian_mix_encoding_and_pca() {
    let dir = TempDir::new().unwrap();
    let d = |n: &str| dir.path().join(n);
    run(&["simulate", "gaussian-mix", "--n", "6", "--seed", "7", "--out", d("sim").to_str().unwrap()]);
    let dists = d("sim").join("distributions.csv");
    let coef = d("coef.csv");
    run(&["encode", dists.to_str().unwrap(), "--basis-size", "8", "--out", coef.to_str().unwrap()]);
    check(&coef, "gaussian_mix_coef.csv");
    run(&["pca", coef.to_str().unwrap(), "--dims", "2", "--out", d("pca").to_str().unwrap()]);
    check(&d("pca").join("diagnostics.csv"), "gaussian_mix_pca_diagnostics.csv");
    check(&d("pca").join("scores.csv"), "gaussian_mix_pca_scores.csv");
}

#[test]
fn small_regression_fit_and_prediction() {
    let dir = TempDir::new().unwrap();
    let d = |n: &str| dir.path().join(n);
    run(&["simulate", "reg-wasserstein", "--n", "8", "--seed", "3", "--out", d("sim").to_str().unwrap()]);
    let z = d("sim").join("distributions.csv");
    let y = d("sim").join("responses.csv");
    run(&[
        "regress", "--z", z.to_str().unwrap(), "--y", y.to_str().unwrap(), "--basis-size", "5",
        "--rho-grid", "1e-3,1e-1", "--folds", "4", "--out", d("fit").to_str().unwrap(),
    ]);
    check(&d("fit").join("cv.csv"), "regression_cv.csv");
    check(&d("fit").join("model.json"), "regression_model.json");
    let pred = d("pred.csv");
    run(&["predict", "--model", d("fit").join("model.json").to_str().unwrap(), z.to_str().unwrap(), "--out", pred.to_str().unwrap()]);
    check(&pred, "regression_predictions.csv");
}
