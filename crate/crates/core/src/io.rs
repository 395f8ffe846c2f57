//! File formats: long-format distribution CSV, coefficient CSV and JSON
//! model documents. Everything here is double precision.
//!
//! Distribution CSV comes in two layouts, told apart by the header:
//! `dist_id,value` (samples) and `dist_id,edge_lo,edge_hi,mass` (histogram
//! bins). Histogram masses are rescaled to unit total.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{EmpiricalDistribution, QuantileSpline};
use crate::error::{Error, Result};
use crate::geodesic_pca::GeodesicPcaResult;
use crate::projected_pca::PcaModel;
use crate::projected_regression::RegressionModel;
use crate::spline_basis::SplineBasis;

/// Formats a double with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} '{s}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("{what} is not finite") });
    }
    Ok(v)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}

/// A named distribution from a CSV file.
#[derive(Debug, Clone)]
pub struct NamedDistribution {
    pub id: String,
    pub dist: EmpiricalDistribution<f64>,
}

/// Reads a distribution CSV; ids keep their order of first appearance.
pub fn read_distributions(reader: impl Read) -> Result<Vec<NamedDistribution>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let layout = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["dist_id", "value"] => false,
        ["dist_id", "edge_lo", "edge_hi", "mass"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header 'dist_id,value' or 'dist_id,edge_lo,edge_hi,mass', got '{}'",
                    header.join(",")
                ),
            })
        }
    };
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(u64, Vec<f64>)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, message: "empty dist_id".into() });
        }
        let vals = rec
            .iter()
            .skip(1)
            .zip(header.iter().skip(1))
            .map(|(s, h)| parse_f64(s, line, h))
            .collect::<Result<Vec<_>>>()?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((line, vals));
    }
    order
        .into_iter()
        .map(|id| {
            let recs = rows.remove(&id).unwrap();
            let dist = if layout {
                histogram_from_rows(recs)?
            } else {
                EmpiricalDistribution::from_samples(recs.into_iter().map(|(_, v)| v[0]).collect())?
            };
            Ok(NamedDistribution { id, dist })
        })
        .collect()
}

// Sorts bins, fills gaps with empty bins and rejects overlaps.
fn histogram_from_rows(mut recs: Vec<(u64, Vec<f64>)>) -> Result<EmpiricalDistribution<f64>> {
    recs.sort_by(|a, b| a.1[0].partial_cmp(&b.1[0]).unwrap());
    let mut edges = vec![recs[0].1[0]];
    let mut masses = Vec::new();
    for (line, v) in &recs {
        let (lo, hi, mass) = (v[0], v[1], v[2]);
        if hi <= lo || mass < 0.0 {
            return Err(Error::Parse {
                line: *line,
                message: format!("invalid bin [{lo}, {hi}) with mass {mass}"),
            });
        }
        let last = *edges.last().unwrap();
        if lo < last {
            return Err(Error::Parse { line: *line, message: "overlapping histogram bins".into() });
        }
        if lo > last {
            edges.push(lo);
            masses.push(0.0);
        }
        edges.push(hi);
        masses.push(mass);
    }
    EmpiricalDistribution::from_weights(edges, masses)
}

/// Writes `dist_id,value` rows.
pub fn write_samples(mut w: impl Write, dists: &[NamedDistribution]) -> Result<()> {
    writeln!(w, "dist_id,value")?;
    for d in dists {
        if let EmpiricalDistribution::Samples(v) = &d.dist {
            for x in v {
                writeln!(w, "{},{}", d.id, fmt_f64(*x))?;
            }
        }
    }
    Ok(())
}

/// Writes histograms in the bin layout. Sample sets must use
/// [`write_samples`].
pub fn write_histograms(mut w: impl Write, dists: &[NamedDistribution]) -> Result<()> {
    writeln!(w, "dist_id,edge_lo,edge_hi,mass")?;
    for d in dists {
        match &d.dist {
            EmpiricalDistribution::Histogram { edges, masses } => {
                for (i, m) in masses.iter().enumerate() {
                    writeln!(w, "{},{},{},{}", d.id, fmt_f64(edges[i]), fmt_f64(edges[i + 1]), fmt_f64(*m))?;
                }
            }
            EmpiricalDistribution::Samples(_) => {
                return Err(Error::invalid("sample sets cannot be written as histograms"))
            }
        }
    }
    Ok(())
}

/// One row of a coefficient CSV.
#[derive(Debug, Clone)]
pub struct CoefficientRow {
    pub id: String,
    pub encoding_w2: f64,
    pub coeffs: DVector<f64>,
}

/// Writes `dist_id,encoding_w2,a1..aJ`.
pub fn write_coefficients(mut w: impl Write, size: usize, rows: &[CoefficientRow]) -> Result<()> {
    let cols: Vec<String> = (1..=size).map(|j| format!("a{j}")).collect();
    writeln!(w, "dist_id,encoding_w2,{}", cols.join(","))?;
    for r in rows {
        let vals: Vec<String> = r.coeffs.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{},{},{}", r.id, fmt_f64(r.encoding_w2), vals.join(","))?;
    }
    Ok(())
}

/// Reads a coefficient CSV. Only `dist_id` and the `a1..aJ` columns are
/// required; `encoding_w2` defaults to NaN when absent.
pub fn read_coefficients(reader: impl Read) -> Result<(usize, Vec<CoefficientRow>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("dist_id") {
        return Err(Error::Parse { line: 1, message: "first column must be dist_id".into() });
    }
    let enc_col = header.iter().position(|h| h == "encoding_w2");
    let mut a_cols = Vec::new();
    for j in 1.. {
        match header.iter().position(|h| *h == format!("a{j}")) {
            Some(c) => a_cols.push(c),
            None => break,
        }
    }
    if a_cols.is_empty() {
        return Err(Error::Parse { line: 1, message: "no coefficient columns a1..aJ".into() });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |c: usize| rec.get(c).ok_or_else(|| Error::Parse { line, message: "missing column".into() });
        let coeffs = a_cols
            .iter()
            .map(|&c| parse_f64(get(c)?, line, &header[c]))
            .collect::<Result<Vec<_>>>()?;
        let encoding_w2 = match enc_col {
            Some(c) => parse_f64(get(c)?, line, "encoding_w2")?,
            None => f64::NAN,
        };
        rows.push(CoefficientRow {
            id: get(0)?.to_string(),
            encoding_w2,
            coeffs: DVector::from_vec(coeffs),
        });
    }
    Ok((a_cols.len(), rows))
}

/// Wraps coefficient rows as quantile splines on a shared basis.
pub fn rows_to_splines(basis: &Arc<SplineBasis<f64>>, rows: &[CoefficientRow]) -> Result<Vec<QuantileSpline<f64>>> {
    rows.iter()
        .map(|r| {
            QuantileSpline::with_tolerance(basis.clone(), r.coeffs.clone(), 1e-10).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::invalid(format!("{}: {m}", r.id)),
                other => other,
            })
        })
        .collect()
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_columns(rows: usize, cols: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if cols.iter().any(|c| c.len() != rows) {
        return Err(Error::invalid("matrix column has the wrong length"));
    }
    Ok(DMatrix::from_fn(rows, cols.len(), |r, c| cols[c][r]))
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid("matrix row has the wrong length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// JSON document of a PCA model (projected, global or nested).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PcaDocument {
    pub method: String,
    pub basis_size: usize,
    pub knots: Vec<f64>,
    pub center: Vec<f64>,
    /// One entry per direction.
    pub directions: Vec<Vec<f64>>,
    /// Empty for geodesic methods.
    pub eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts_used: Option<usize>,
}

impl PcaDocument {
    pub fn from_model(model: &PcaModel<f64>) -> Self {
        Self {
            method: "projected".into(),
            basis_size: model.basis().size(),
            knots: model.basis().knots().to_vec(),
            center: model.center().iter().copied().collect(),
            directions: columns(model.directions()),
            eigenvalues: model.eigenvalues().iter().copied().collect(),
            objective: None,
            converged: None,
            restarts_used: None,
        }
    }

    pub fn from_geodesic(res: &GeodesicPcaResult<f64>, basis: &SplineBasis<f64>) -> Self {
        Self {
            method: res.method.as_str().into(),
            basis_size: basis.size(),
            knots: basis.knots().to_vec(),
            center: res.center.iter().copied().collect(),
            directions: columns(&res.directions),
            eigenvalues: Vec::new(),
            objective: Some(res.objective),
            converged: Some(res.converged),
            restarts_used: Some(res.restarts_used),
        }
    }

    /// Rebuilds a projected PCA model; geodesic documents have no eigenvalues
    /// and get zeros.
    pub fn to_model(&self) -> Result<PcaModel<f64>> {
        let basis = Arc::new(SplineBasis::new(self.basis_size)?);
        let w = from_columns(self.basis_size, &self.directions)?;
        let ev = if self.eigenvalues.is_empty() {
            DVector::zeros(w.ncols())
        } else {
            DVector::from_vec(self.eigenvalues.clone())
        };
        PcaModel::from_parts(basis, DVector::from_vec(self.center.clone()), w, ev)
    }
}

/// JSON document of a regression model. Kernel matrices are stored by rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegressionDocument {
    pub basis_size: usize,
    pub knots: Vec<f64>,
    pub rho: f64,
    pub include_intercept: bool,
    pub theta_alpha: Vec<f64>,
    pub thetas: Vec<Vec<Vec<f64>>>,
    pub z_means: Vec<Vec<f64>>,
    pub y_mean: Vec<f64>,
}

impl RegressionDocument {
    pub fn from_model(m: &RegressionModel<f64>) -> Self {
        Self {
            basis_size: m.basis.size(),
            knots: m.basis.knots().to_vec(),
            rho: m.rho,
            include_intercept: m.include_intercept,
            theta_alpha: m.theta_alpha.iter().copied().collect(),
            thetas: m.thetas.iter().map(rows_of).collect(),
            z_means: m.z_means.iter().map(|v| v.iter().copied().collect()).collect(),
            y_mean: m.y_mean.iter().copied().collect(),
        }
    }

    pub fn to_model(&self) -> Result<RegressionModel<f64>> {
        let j = self.basis_size;
        let basis = Arc::new(SplineBasis::new(j)?);
        let vec_of = |v: &Vec<f64>| -> Result<DVector<f64>> {
            if v.len() != j {
                return Err(Error::invalid("model vector has the wrong length"));
            }
            Ok(DVector::from_vec(v.clone()))
        };
        let thetas = self
            .thetas
            .iter()
            .map(|t| {
                if t.len() != j {
                    return Err(Error::invalid("kernel matrix has the wrong size"));
                }
                from_rows(t, j)
            })
            .collect::<Result<Vec<_>>>()?;
        if thetas.is_empty() || thetas.len() != self.z_means.len() {
            return Err(Error::invalid("model needs one mean per kernel"));
        }
        Ok(RegressionModel {
            basis,
            theta_alpha: vec_of(&self.theta_alpha)?,
            thetas,
            rho: self.rho,
            include_intercept: self.include_intercept,
            z_means: self.z_means.iter().map(vec_of).collect::<Result<_>>()?,
            y_mean: vec_of(&self.y_mean)?,
        })
    }
}

pub fn write_json<T: Serialize>(w: impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<T> {
    Ok(serde_json::from_reader(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_csv() {
        let data = "dist_id,value\nb,2\na,1\nb,0\n";
        let d = read_distributions(data.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].id, "b");
        assert_eq!(d[0].dist, EmpiricalDistribution::Samples(vec![0.0, 2.0]));
    }

    #[test]
    fn histogram_csv_with_gap() {
        let data = "dist_id,edge_lo,edge_hi,mass\nx,2,3,1\nx,0,1,1\n";
        let d = read_distributions(data.as_bytes()).unwrap();
        match &d[0].dist {
            EmpiricalDistribution::Histogram { edges, masses } => {
                assert_eq!(edges, &vec![0.0, 1.0, 2.0, 3.0]);
                assert_eq!(masses, &vec![0.5, 0.0, 0.5]);
            }
            _ => panic!("expected histogram"),
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        let data = "dist_id,value\na,1\na,oops\n";
        match read_distributions(data.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_distributions("x,y\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn coefficient_round_trip() {
        let rows = vec![CoefficientRow {
            id: "q".into(),
            encoding_w2: 0.125,
            coeffs: DVector::from_vec(vec![0.1, 0.2 + 1e-17, 1.0 / 3.0, 7.0]),
        }];
        let mut buf = Vec::new();
        write_coefficients(&mut buf, 4, &rows).unwrap();
        let (j, back) = read_coefficients(buf.as_slice()).unwrap();
        assert_eq!(j, 4);
        assert_eq!(back[0].coeffs, rows[0].coeffs);
        assert_eq!(back[0].encoding_w2, 0.125);
    }
}
