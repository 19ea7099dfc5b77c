//! Interbank exposure reconstruction from per-bank marginals (RAS).
//!
//! Starting point is the gravity matrix `A_ij = a_i l_j / Σa` with a zero
//! diagonal; each sweep rescales rows to the asset marginals `a` and then
//! columns to the (rescaled) liability marginals `l`. Since the start is
//! strictly positive wherever both marginals are, the result is a complete
//! weighted network.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::balance_sheet::BalanceSheetSet;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;
/// Guards the relative residual against zero marginals.
const MARGINAL_EPS: f64 = 1e-12;

/// Dense `N×N` exposure matrix, `values[[i, j]]` being the claim of bank `i`
/// on bank `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureMatrix {
    pub values: Array2<f64>,
    /// Interbank asset totals `a`.
    pub row_marginals: Array1<f64>,
    /// Interbank liability totals `l` after rescaling to `Σa`.
    pub col_marginals: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max relative marginal error over rows and columns.
    pub residual: f64,
    /// `Σa / Σl` applied to the liability marginals.
    pub liability_rescale_factor: f64,
}

impl ExposureMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Max over rows and columns of `|achieved - target| / max(target, ε)`.
pub fn marginal_residual(values: &Array2<f64>, rows: &Array1<f64>, cols: &Array1<f64>) -> f64 {
    let row_sums = values.sum_axis(ndarray::Axis(1));
    let col_sums = values.sum_axis(ndarray::Axis(0));
    let rel = |got: f64, want: f64| (got - want).abs() / want.max(MARGINAL_EPS);
    let r = row_sums
        .iter()
        .zip(rows)
        .fold(0.0f64, |m, (&g, &w)| m.max(rel(g, w)));
    col_sums
        .iter()
        .zip(cols)
        .fold(r, |m, (&g, &w)| m.max(rel(g, w)))
}

fn check_feasible(a: &Array1<f64>, l: &Array1<f64>) -> Result<()> {
    let positive = a
        .iter()
        .zip(l)
        .filter(|(&x, &y)| x > 0.0 || y > 0.0)
        .count();
    if positive < 2 {
        return Err(Error::InfeasibleMarginals(
            "at least two banks need positive interbank totals".into(),
        ));
    }
    let total_a: f64 = a.sum();
    let total_l: f64 = l.sum();
    let slack = 1.0 + 1e-12;
    for i in 0..a.len() {
        let others_l = total_l - l[i];
        if a[i] > others_l * slack {
            return Err(Error::InfeasibleMarginals(format!(
                "bank {i}: interbank assets {} exceed liabilities of all other banks {} \
                 (a_i ≤ Σ_{{j≠i}} l_j violated)",
                a[i], others_l
            )));
        }
        let others_a = total_a - a[i];
        if l[i] > others_a * slack {
            return Err(Error::InfeasibleMarginals(format!(
                "bank {i}: interbank liabilities {} exceed assets of all other banks {} \
                 (l_i ≤ Σ_{{j≠i}} a_j violated)",
                l[i], others_a
            )));
        }
    }
    Ok(())
}

/// RAS / iterative proportional fitting with a zero diagonal.
///
/// Non-convergence is not an error: the best iterate is returned with
/// `converged = false`.
pub fn ras_reconstruct(
    set: &BalanceSheetSet,
    tolerance: f64,
    max_iterations: usize,
) -> Result<ExposureMatrix> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be > 0, got {tolerance}"
        )));
    }
    let n = set.len();
    let a = Array1::from(set.interbank_assets());
    let l_raw = Array1::from(set.interbank_liabilities());
    if a.iter().chain(l_raw.iter()).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InfeasibleMarginals(
            "marginals must be finite and nonnegative".into(),
        ));
    }
    let total_a = a.sum();
    let total_l = l_raw.sum();
    if !(total_a > 0.0 && total_l > 0.0) {
        return Err(Error::InfeasibleMarginals(
            "total interbank assets and liabilities must be positive".into(),
        ));
    }
    let rescale = total_a / total_l;
    let l = &l_raw * rescale;
    check_feasible(&a, &l)?;

    let mut values = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values[[i, j]] = a[i] * l[j] / total_a;
            }
        }
    }

    let mut best = values.clone();
    let mut best_residual = marginal_residual(&values, &a, &l);
    let mut iterations = 0;
    while best_residual > tolerance && iterations < max_iterations {
        iterations += 1;
        for (mut row, &target) in values.rows_mut().into_iter().zip(a.iter()) {
            let s: f64 = row.sum();
            if s > 0.0 {
                row *= target / s;
            }
        }
        for (mut col, &target) in values.columns_mut().into_iter().zip(l.iter()) {
            let s: f64 = col.sum();
            if s > 0.0 {
                col *= target / s;
            }
        }
        let residual = marginal_residual(&values, &a, &l);
        if residual < best_residual {
            best_residual = residual;
            best.assign(&values);
        }
    }

    Ok(ExposureMatrix {
        values: best,
        row_marginals: a,
        col_marginals: l,
        converged: best_residual <= tolerance,
        iterations,
        residual: best_residual,
        liability_rescale_factor: rescale,
    })
}

/// Contents of the `<name>.meta.json` sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExposureMeta {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub liability_rescale_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_marginals: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_marginals: Option<Vec<f64>>,
    /// Effective run configuration, when written by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ExposureMeta {
    pub fn from_matrix(m: &ExposureMatrix) -> Self {
        ExposureMeta {
            converged: m.converged,
            iterations: m.iterations,
            residual: m.residual,
            liability_rescale_factor: m.liability_rescale_factor,
            row_marginals: Some(m.row_marginals.to_vec()),
            col_marginals: Some(m.col_marginals.to_vec()),
            config: None,
        }
    }
}

/// `exposures.csv` → `exposures.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes the dense matrix (header-less CSV, shortest round-trip float
/// formatting) and its meta sidecar.
pub fn write_exposures(matrix: &ExposureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_exposures_with_meta(matrix, path, ExposureMeta::from_matrix(matrix))
}

pub fn write_exposures_with_meta(
    matrix: &ExposureMatrix,
    path: impl AsRef<Path>,
    meta: ExposureMeta,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in matrix.values.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let meta_file = meta_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&meta_file, json + "\n").map_err(|e| Error::io(&meta_file, e))
}

/// Reads a dense exposure CSV and, when present, its meta sidecar. Without a
/// sidecar the marginals are taken from the matrix itself.
pub fn read_exposures(path: impl AsRef<Path>) -> Result<ExposureMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno as u64 + 1,
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Dimension(format!("{} is empty", path.display())));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::Dimension(format!(
            "{}: row {} has {} columns, expected {n} for an {n}×{n} matrix",
            path.display(),
            i + 1,
            r.len()
        )));
    }
    let values = Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect())
        .expect("shape checked above");
    for ((i, j), &v) in values.indexed_iter() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidValue(format!(
                "exposure ({i}, {j}) = {v} must be finite and nonnegative"
            )));
        }
        if i == j && v != 0.0 {
            return Err(Error::InvalidValue(format!(
                "diagonal exposure ({i}, {i}) = {v} must be zero"
            )));
        }
    }

    let row_sums = values.sum_axis(ndarray::Axis(1));
    let col_sums = values.sum_axis(ndarray::Axis(0));
    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        let text = std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
        Some(serde_json::from_str::<ExposureMeta>(&text)?)
    } else {
        None
    };
    let marginals = |m: Option<Vec<f64>>, fallback: Array1<f64>| -> Result<Array1<f64>> {
        match m {
            Some(v) if v.len() == n => Ok(Array1::from(v)),
            Some(v) => Err(Error::Dimension(format!(
                "meta marginals have length {}, matrix is {n}×{n}",
                v.len()
            ))),
            None => Ok(fallback),
        }
    };
    Ok(match meta {
        Some(meta) => ExposureMatrix {
            row_marginals: marginals(meta.row_marginals, row_sums)?,
            col_marginals: marginals(meta.col_marginals, col_sums)?,
            values,
            converged: meta.converged,
            iterations: meta.iterations,
            residual: meta.residual,
            liability_rescale_factor: meta.liability_rescale_factor,
        },
        None => ExposureMatrix {
            values,
            row_marginals: row_sums,
            col_marginals: col_sums,
            converged: true,
            iterations: 0,
            residual: 0.0,
            liability_rescale_factor: 1.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance_sheet::BankRecord;

    fn set_from(a: &[f64], l: &[f64]) -> BalanceSheetSet {
        let banks = a
            .iter()
            .zip(l)
            .enumerate()
            .map(|(i, (&a, &l))| BankRecord {
                id: i,
                name: format!("B{i}"),
                equity: 100.0,
                interbank_assets_total: a,
                interbank_liabilities_total: l,
                total_liabilities: None,
            })
            .collect();
        BalanceSheetSet::new(banks, "EUR")
    }

    #[test]
    fn two_banks_forced_by_marginals() {
        let m = ras_reconstruct(&set_from(&[50.0, 30.0], &[30.0, 50.0]), 1e-10, 1000).unwrap();
        assert!(m.converged);
        assert_eq!(m.values[[0, 0]], 0.0);
        assert_eq!(m.values[[1, 1]], 0.0);
        assert!((m.values[[0, 1]] - 50.0).abs() < 1e-12);
        assert!((m.values[[1, 0]] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_marginals_give_uniform_matrix() {
        let c = 7.0;
        let m = ras_reconstruct(&set_from(&[c; 4], &[c; 4]), 1e-10, 1000).unwrap();
        for ((i, j), &v) in m.values.indexed_iter() {
            let want = if i == j { 0.0 } else { c / 3.0 };
            assert!((v - want).abs() < 1e-12, "({i},{j}) = {v}");
        }
    }

    #[test]
    fn rescales_liabilities_to_asset_total() {
        let m = ras_reconstruct(&set_from(&[10.0, 20.0, 30.0], &[10.0, 10.0, 10.0]), 1e-10, 10_000)
            .unwrap();
        assert!((m.liability_rescale_factor - 2.0).abs() < 1e-15);
        assert!((m.col_marginals.sum() - 60.0).abs() < 1e-12);
        assert!(m.converged);
    }

    #[test]
    fn dominant_bank_is_infeasible() {
        let err = ras_reconstruct(&set_from(&[100.0, 1.0, 1.0], &[10.0, 46.0, 46.0]), 1e-10, 100)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bank 0"), "{msg}");
    }

    #[test]
    fn single_active_bank_is_infeasible() {
        let err = ras_reconstruct(&set_from(&[5.0, 0.0], &[5.0, 0.0]), 1e-10, 100).unwrap_err();
        assert!(matches!(err, Error::InfeasibleMarginals(_)));
    }

    #[test]
    fn zero_asset_bank_gets_zero_row() {
        let m = ras_reconstruct(&set_from(&[0.0, 20.0, 30.0], &[20.0, 20.0, 10.0]), 1e-10, 10_000)
            .unwrap();
        assert!(m.values.row(0).iter().all(|&v| v == 0.0));
        assert!(m.converged);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let m = ras_reconstruct(&set_from(&[10.0, 20.0, 30.0], &[30.0, 20.0, 10.0]), 1e-15, 1)
            .unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 1);
        assert!(m.residual > 1e-15);
    }
}
