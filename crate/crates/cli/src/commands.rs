use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use wassproj::datagen::{Scenario, DEFAULT_MIXTURE_K};
use wassproj::distributions::{barycenter, wasserstein2, wasserstein2_quadrature, Encoder};
use wassproj::geodesic_pca::{fit_global_geodesic, fit_nested_geodesic};
use wassproj::io::{
    fmt_f64, read_coefficients, read_distributions, read_json, rows_to_splines, write_coefficients,
    write_histograms, write_json, write_samples, CoefficientRow, NamedDistribution, PcaDocument,
    RegressionDocument,
};
use wassproj::projected_pca::fit_pca;
use wassproj::projected_regression::{cross_validate_rho, default_rho_grid, fit_regression, Folds};
use wassproj::{EmpiricalDistribution, GeodesicOptions, GeodesicPcaResult, QuantileSpline, SplineBasis};

use crate::Method;

/// Levels of the evaluated quantile grid in prediction output.
const PREDICT_GRID: usize = 101;
const ENCODE_CHECK_POINTS: usize = 10_000;

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir.join(name))
}

fn read_dists(path: &Path) -> Result<Vec<NamedDistribution>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(read_distributions(text.as_bytes())?)
}

fn make_basis(j: usize) -> Result<Arc<SplineBasis<f64>>> {
    Ok(Arc::new(SplineBasis::new(j)?))
}

fn check_ids(reference: &[NamedDistribution], other: &[NamedDistribution], what: &str) -> Result<()> {
    if reference.len() != other.len() || reference.iter().zip(other).any(|(a, b)| a.id != b.id) {
        bail!("{what} must list the same dist_ids in the same order");
    }
    Ok(())
}

fn encode_named(enc: &Encoder<f64>, dists: &[NamedDistribution]) -> Result<Vec<QuantileSpline<f64>>> {
    let plain: Vec<EmpiricalDistribution<f64>> = dists.iter().map(|d| d.dist.clone()).collect();
    Ok(enc.encode_all(&plain)?)
}

pub fn encode(input: &Path, basis_size: usize, out: Option<&Path>) -> Result<()> {
    let dists = read_dists(input)?;
    let enc = Encoder::new(make_basis(basis_size)?)?;
    let splines = encode_named(&enc, &dists)?;
    let rows: Vec<CoefficientRow> = dists
        .iter()
        .zip(splines)
        .map(|(d, q)| CoefficientRow {
            id: d.id.clone(),
            encoding_w2: wasserstein2_quadrature(&q, &d.dist, ENCODE_CHECK_POINTS),
            coeffs: q.into_coeffs(),
        })
        .collect();
    let mut w = output(out)?;
    write_coefficients(&mut w, basis_size, &rows)?;
    w.flush()?;
    Ok(())
}

fn mean_distance_to_barycenter(data: &[QuantileSpline<f64>]) -> Result<f64> {
    let bary = barycenter(data)?;
    let b = bary.basis();
    Ok(data.iter().map(|x| b.distance(x.coeffs(), bary.coeffs())).sum::<f64>() / data.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn pca(
    input: &Path,
    dims: usize,
    method: Method,
    expected_size: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
    let (j, rows) = read_coefficients(text.as_bytes())?;
    if let Some(e) = expected_size {
        if e != j {
            bail!("--basis-size {e} does not match the {j} coefficient columns of the input");
        }
    }
    if rows.len() < 2 {
        bail!("PCA needs at least 2 observations, got {}", rows.len());
    }
    if dims == 0 || dims > j {
        bail!("--dims must be between 1 and the basis size {j}, got {dims}");
    }
    let basis = make_basis(j)?;
    let data = rows_to_splines(&basis, &rows)?;

    let mut diag = output(Some(&out_file(out, "diagnostics.csv")?))?;
    let mut scores = output(Some(&out_file(out, "scores.csv")?))?;
    let score_header: Vec<String> = (1..=dims).map(|h| format!("s{h}")).collect();
    writeln!(scores, "dist_id,{}", score_header.join(","))?;

    match method {
        Method::Projected => {
            let model = fit_pca(&data, None)?;
            let d = model.diagnostics(&data, dims)?;
            writeln!(diag, "k,eigenvalue,explained_variance,re,nre,is,gv")?;
            for k in 0..=dims {
                let (ev, is, gv) = if k == 0 {
                    (None, None, None)
                } else {
                    (Some(model.eigenvalues()[k - 1]), Some(d.is[k - 1]), Some(d.gv[k - 1]))
                };
                writeln!(
                    diag,
                    "{k},{},{},{},{},{},{}",
                    opt(ev),
                    fmt_f64(model.explained_variance_ratio(k)),
                    fmt_f64(d.re[k]),
                    fmt_f64(d.nre[k]),
                    opt(is),
                    opt(gv)
                )?;
            }
            for (row, p) in rows.iter().zip(model.project_all(&data, dims)?) {
                let s: Vec<String> = p.scores.iter().map(|v| fmt_f64(*v)).collect();
                writeln!(scores, "{},{}", row.id, s.join(","))?;
            }
            write_json(File::create(out_file(out, "model.json")?)?, &PcaDocument::from_model(&model))?;
        }
        Method::Global | Method::Nested => {
            let center = barycenter(&data)?;
            let spread = mean_distance_to_barycenter(&data)?;
            let opts = GeodesicOptions { seed, ..GeodesicOptions::default() };
            let fit = |k: usize| -> Result<GeodesicPcaResult<f64>> {
                let nested = fit_nested_geodesic(&data, &center, k, &opts)?;
                if method == Method::Nested {
                    return Ok(nested);
                }
                // The nested solution is a feasible start for the global problem.
                let seeded = GeodesicOptions { initial_directions: vec![nested.directions], ..opts.clone() };
                Ok(fit_global_geodesic(&data, &center, k, &seeded)?)
            };
            writeln!(diag, "k,objective,re,nre,converged")?;
            let re0 = spread;
            let nre0 = if spread > 0.0 { 1.0 } else { 0.0 };
            let f0: f64 = data.iter().map(|x| basis.norm_sq(&(x.coeffs() - center.coeffs()))).sum();
            writeln!(diag, "0,{},{},{},true", fmt_f64(f0), fmt_f64(re0), fmt_f64(nre0))?;
            let mut last = None;
            for k in 1..=dims {
                let res = fit(k)?;
                let re = res.reconstruction_error(&data);
                let nre = if spread > 0.0 { re / spread } else { 0.0 };
                writeln!(diag, "{k},{},{},{},{}", fmt_f64(res.objective), fmt_f64(re), fmt_f64(nre), res.converged)?;
                last = Some(res);
            }
            let res = last.expect("dims ≥ 1");
            for (i, row) in rows.iter().enumerate() {
                let s: Vec<String> = res.scores.row(i).iter().map(|v| fmt_f64(*v)).collect();
                writeln!(scores, "{},{}", row.id, s.join(","))?;
            }
            write_json(File::create(out_file(out, "model.json")?)?, &PcaDocument::from_geodesic(&res, &basis))?;
        }
    }
    diag.flush()?;
    scores.flush()?;
    Ok(())
}

pub fn parse_folds(s: &str) -> Result<Folds> {
    if s.eq_ignore_ascii_case("loo") {
        return Ok(Folds::LeaveOneOut);
    }
    match s.parse::<usize>() {
        Ok(k) if k >= 2 => Ok(Folds::KFold(k)),
        _ => bail!("--folds must be 'loo' or an integer ≥ 2, got '{s}'"),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn regress(
    z_paths: &[PathBuf],
    y_path: &Path,
    basis_size: usize,
    rho: Option<f64>,
    rho_grid: Option<Vec<f64>>,
    folds: Folds,
    include_intercept: bool,
    out: &Path,
) -> Result<()> {
    let y_named = read_dists(y_path)?;
    let z_named = z_paths.iter().map(|p| read_dists(p)).collect::<Result<Vec<_>>>()?;
    for z in &z_named {
        check_ids(&y_named, z, "predictor and response files")?;
    }
    let enc = Encoder::new(make_basis(basis_size)?)?;
    let y = encode_named(&enc, &y_named)?;
    let z = z_named.iter().map(|d| encode_named(&enc, d)).collect::<Result<Vec<_>>>()?;

    let rho = match rho {
        Some(r) => r,
        None => {
            let grid = rho_grid.unwrap_or_else(default_rho_grid);
            let cv = cross_validate_rho(&z, &y, &grid, folds, include_intercept)?;
            let mut w = output(Some(&out_file(out, "cv.csv")?))?;
            writeln!(w, "rho,cv_error")?;
            for (r, e) in &cv.table {
                writeln!(w, "{},{}", fmt_f64(*r), fmt_f64(*e))?;
            }
            w.flush()?;
            cv.best_rho
        }
    };
    let model = fit_regression(&z, &y, rho, include_intercept)?;
    write_json(File::create(out_file(out, "model.json")?)?, &RegressionDocument::from_model(&model))?;
    Ok(())
}

pub fn predict(model_path: &Path, inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let doc: RegressionDocument =
        read_json(File::open(model_path).with_context(|| format!("cannot read {}", model_path.display()))?)?;
    let model = doc.to_model()?;
    if inputs.len() != model.num_predictors() {
        bail!("model has {} predictors but {} input files were given", model.num_predictors(), inputs.len());
    }
    let enc = Encoder::new(model.basis.clone())?;
    let mut ids: Option<Vec<String>> = None;
    let mut z = Vec::with_capacity(inputs.len());
    for path in inputs {
        let (these, splines) = read_predictor(path, &enc)?;
        match &ids {
            Some(first) if *first != these => bail!("predictor files must list the same dist_ids in the same order"),
            Some(_) => {}
            None => ids = Some(these),
        }
        z.push(splines);
    }
    let ids = ids.unwrap_or_default();

    let j = model.basis.size();
    let mut w = output(out)?;
    let a_cols: Vec<String> = (1..=j).map(|c| format!("a{c}")).collect();
    let q_cols: Vec<String> = (0..PREDICT_GRID).map(|i| format!("q{i}")).collect();
    writeln!(w, "dist_id,{},{}", a_cols.join(","), q_cols.join(","))?;
    for (i, id) in ids.iter().enumerate() {
        let zi: Vec<&QuantileSpline<f64>> = z.iter().map(|pred| &pred[i]).collect();
        let p = model.predict(&zi)?;
        let mut fields = vec![id.clone()];
        fields.extend(p.coeffs().iter().map(|v| fmt_f64(*v)));
        fields.extend(p.quantile_grid(PREDICT_GRID).into_iter().map(fmt_f64));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads predictors either as raw distributions or as an `encode` coefficient CSV.
fn read_predictor(path: &Path, enc: &Encoder<f64>) -> Result<(Vec<String>, Vec<QuantileSpline<f64>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = text.lines().next().unwrap_or("");
    if header.split(',').any(|c| c.trim() == "a1") {
        let (j, rows) = read_coefficients(text.as_bytes())?;
        let basis = enc.basis();
        if j != basis.size() {
            bail!("{}: {j} coefficients per row but the model basis has {}", path.display(), basis.size());
        }
        let splines = rows_to_splines(basis, &rows)?;
        return Ok((rows.into_iter().map(|r| r.id).collect(), splines));
    }
    let named = if text.trim().is_empty() { Vec::new() } else { read_distributions(text.as_bytes())? };
    let splines = encode_named(enc, &named)?;
    Ok((named.into_iter().map(|d| d.id).collect(), splines))
}

pub fn wasserstein(a: &Path, b: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let da = read_dists(a)?;
    let db = match b {
        Some(p) => read_dists(p)?,
        None => da.clone(),
    };
    let mut w = output(out)?;
    let ids: Vec<&str> = db.iter().map(|d| d.id.as_str()).collect();
    writeln!(w, "dist_id,{}", ids.join(","))?;
    for x in &da {
        let row: Vec<String> = db.iter().map(|y| fmt_f64(wasserstein2(&x.dist, &y.dist))).collect();
        writeln!(w, "{},{}", x.id, row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_dists(path: &Path, dists: Vec<EmpiricalDistribution<f64>>) -> Result<()> {
    let width = dists.len().saturating_sub(1).to_string().len();
    let named: Vec<NamedDistribution> = dists
        .into_iter()
        .enumerate()
        .map(|(i, dist)| NamedDistribution { id: format!("d{i:0width$}"), dist })
        .collect();
    let mut w = output(Some(path))?;
    match named.first().map(|d| &d.dist) {
        Some(EmpiricalDistribution::Histogram { .. }) => write_histograms(&mut w, &named)?,
        _ => write_samples(&mut w, &named)?,
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest {
    scenario: Scenario,
    seed: u64,
    files: Vec<String>,
}

pub fn simulate(name: &str, n: usize, k: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let mut scenario = Scenario::from_name(name, n)?;
    match (&mut scenario, k) {
        (Scenario::Dpm { k: slot, .. } | Scenario::Bernstein { k: slot, .. }, Some(k)) => *slot = k,
        (_, Some(_)) => bail!("--k only applies to dpm and bernstein"),
        (_, None) => {}
    }
    let generated = scenario.generate(seed)?;
    let mut files = vec!["distributions.csv".to_string()];
    write_dists(&out_file(out, "distributions.csv")?, generated.predictors)?;
    if let Some(resp) = generated.responses {
        files.push("responses.csv".into());
        write_dists(&out_file(out, "responses.csv")?, resp)?;
    }
    let manifest = Manifest { scenario, seed, files };
    write_json(File::create(out_file(out, "manifest.json")?)?, &manifest)?;
    Ok(())
}

pub fn bench(basis_size: usize, n: usize, seed: u64) -> Result<()> {
    let mut timings = serde_json::Map::new();
    let mut time = |label: &str, start: Instant| {
        timings.insert(label.into(), json!(start.elapsed().as_secs_f64() * 1e3));
    };
    let t = Instant::now();
    let dists = Scenario::Dpm { n, k: DEFAULT_MIXTURE_K }.generate(seed)?.predictors;
    time("simulate_ms", t);
    let t = Instant::now();
    let enc = Encoder::new(make_basis(basis_size)?)?;
    let data = enc.encode_all(&dists)?;
    time("encode_ms", t);
    let t = Instant::now();
    let model = fit_pca(&data, None)?;
    let dims = 3.min(basis_size);
    model.diagnostics(&data, dims)?;
    time("projected_pca_ms", t);
    let t = Instant::now();
    let center = barycenter(&data)?;
    fit_nested_geodesic(&data, &center, 2.min(basis_size), &GeodesicOptions { seed, ..GeodesicOptions::default() })?;
    time("nested_geodesic_ms", t);
    let t = Instant::now();
    let half = data.len() / 2;
    if half >= 2 {
        fit_regression(&[data[..half].to_vec()], &data[half..2 * half], 1e-3, true)?;
    }
    time("regression_fit_ms", t);
    let report = json!({ "basis_size": basis_size, "n": n, "seed": seed, "timings": timings });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
