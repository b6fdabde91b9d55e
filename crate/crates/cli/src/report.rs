//! Output files: CSV writers with fixed-width scientific formatting and the
//! JSON shapes for `summary.json`, `conjugate.json`, and `check.json`.
//!
//! CSV cells are written as `{:.16e}` (17 significant digits), so values
//! round-trip losslessly and repeated runs with the same configuration
//! produce byte-identical files. JSON numbers go through `serde_json`'s
//! shortest-round-trip formatting, which is likewise lossless and
//! deterministic.

use std::fs;
use std::path::{Path, PathBuf};

use extremal::conjugate::{ConjugateReport, DetScan, Formulation, OptimalityVerdict};
use extremal::control::{LegendreReport, LegendreVerdict};
use serde::Serialize;

use crate::CliError;

/// Machine token for an optimality verdict.
pub fn verdict_token(v: &OptimalityVerdict) -> &'static str {
    match v {
        OptimalityVerdict::Optimal => "optimal",
        OptimalityVerdict::NotOptimal => "not_optimal",
        OptimalityVerdict::Inconclusive => "inconclusive",
    }
}

/// Machine token for a Legendre classification.
pub fn legendre_token(v: &LegendreVerdict) -> &'static str {
    match v {
        LegendreVerdict::Strong => "strong",
        LegendreVerdict::WeakOnly => "weak_only",
        LegendreVerdict::Violated => "violated",
    }
}

/// Machine token for a formulation.
pub fn formulation_token(f: &Formulation) -> &'static str {
    match f {
        Formulation::Hamiltonian => "hamiltonian",
        Formulation::Lagrangian => "lagrangian",
    }
}

/// Compact summary of a Legendre scan (the per-node eigenvalue curve stays
/// out of the JSON reports; `overall_min` carries the classification).
#[derive(Debug, Serialize)]
pub struct LegendreJson {
    pub verdict: &'static str,
    /// Smallest eigenvalue of the symmetrized control Hessian over the whole
    /// trajectory.
    pub overall_min: f64,
    /// Number of trajectory nodes sampled.
    pub samples: usize,
}

impl LegendreJson {
    pub fn from_report(report: &LegendreReport) -> Self {
        LegendreJson {
            verdict: legendre_token(&report.verdict),
            overall_min: report.overall_min,
            samples: report.grid.len(),
        }
    }
}

/// `summary.json`: the outcome of a `solve` run.
#[derive(Debug, Serialize)]
pub struct SummaryJson {
    pub problem: String,
    pub nq: usize,
    pub m: usize,
    pub horizon: f64,
    pub converged: bool,
    /// Converged initial covector `z* = (κ(0), κ̇(0))` — or the best iterate
    /// when the shooting did not converge.
    pub z_star: Vec<f64>,
    /// Cost `J` along the extremal; absent without convergence.
    pub cost: Option<f64>,
    /// Boundary residual infinity norm at `z_star`.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after each Newton step, starting with the initial guess.
    pub residual_history: Vec<f64>,
    /// Legendre classification along the solved extremal; absent without
    /// convergence.
    pub legendre: Option<LegendreJson>,
    /// Standing assumptions behind every classification.
    pub assumptions: &'static str,
    pub notes: Vec<String>,
}

/// One determinant scan in `conjugate.json`.
#[derive(Debug, Serialize)]
pub struct DetScanJson {
    pub formulation: &'static str,
    /// Start of the scan window (past the structural zero at `t = 0`).
    pub t_skip: f64,
    /// First zero of the determinant, bisected to `tol_t`.
    pub first_zero: Option<f64>,
    /// Times where the determinant grazes zero without changing sign.
    pub touching_zeros: Vec<f64>,
    /// Scan grid.
    pub times: Vec<f64>,
    /// Determinant values on the grid.
    pub values: Vec<f64>,
}

impl DetScanJson {
    pub fn from_scan(scan: &DetScan) -> Self {
        DetScanJson {
            formulation: formulation_token(&scan.formulation),
            t_skip: scan.t_skip,
            first_zero: scan.first_zero,
            touching_zeros: scan.touching_zeros.clone(),
            times: scan.times.clone(),
            values: scan.values.clone(),
        }
    }
}

/// `conjugate.json`: the two-formulation conjugate-time report.
#[derive(Debug, Serialize)]
pub struct ConjugateJson {
    pub problem: String,
    pub horizon: f64,
    pub verdict: &'static str,
    /// Agreed first conjugate time when both formulations locate one.
    pub conjugate_time: Option<f64>,
    /// `|t_c(Hamiltonian) − t_c(Lagrangian)|` when both locate one.
    pub formulation_gap: Option<f64>,
    pub legendre: LegendreJson,
    pub hamiltonian: Option<DetScanJson>,
    pub lagrangian: Option<DetScanJson>,
    pub assumptions: &'static str,
    pub notes: Vec<String>,
}

impl ConjugateJson {
    pub fn from_report(problem: &str, horizon: f64, report: &ConjugateReport, notes: Vec<String>) -> Self {
        ConjugateJson {
            problem: problem.to_owned(),
            horizon,
            verdict: verdict_token(&report.verdict),
            conjugate_time: report.conjugate_time,
            formulation_gap: report.formulation_gap,
            legendre: LegendreJson::from_report(&report.legendre),
            hamiltonian: report.hamiltonian.as_ref().map(DetScanJson::from_scan),
            lagrangian: report.lagrangian.as_ref().map(DetScanJson::from_scan),
            assumptions: report.assumptions,
            notes,
        }
    }
}

/// One property row in `check.json`.
#[derive(Debug, Serialize)]
pub struct PropertyJson {
    pub name: &'static str,
    pub pass: bool,
    /// Largest error observed by the property's metric.
    pub max_error: f64,
    /// Pass threshold for `max_error`.
    pub tolerance: f64,
    pub detail: String,
}

/// `check.json`: per-property outcomes plus informational notes.
#[derive(Debug, Serialize)]
pub struct CheckJson {
    pub problem: String,
    pub nq: usize,
    pub m: usize,
    pub horizon: f64,
    pub all_pass: bool,
    pub properties: Vec<PropertyJson>,
    pub assumptions: &'static str,
    pub notes: Vec<String>,
}

/// Writes a CSV file: one header row, then one `{:.16e}` cell per value.
pub fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<PathBuf, CliError> {
    let mut text = String::with_capacity(64 + rows.len() * (header.len() * 25 + 1));
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            text.push_str(&format!("{x:.16e}"));
        }
        text.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes a pretty-printed JSON file with a trailing newline.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| {
        CliError::Config(format!("cannot serialize {name}: {e}"))
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Column names for `extremal.csv`: time, then each state block
/// component-wise, then the control.
pub fn extremal_csv_header(nq: usize, m: usize) -> Vec<String> {
    let mut header = vec!["t".to_owned()];
    for (block, count) in [
        ("q", nq),
        ("qdot", nq),
        ("kappa", nq),
        ("kappadot", nq),
        ("u", m),
    ] {
        for i in 1..=count {
            header.push(format!("{block}{i}"));
        }
    }
    header
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The CSV cell format is fixed-width scientific with 17 significant
    /// digits, so files are byte-stable and lossless.
    #[test]
    fn csv_cells_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values = [std::f64::consts::PI, -1.0 / 3.0, 6.0, 1.0e-300];
        let rows: Vec<Vec<f64>> = values.iter().map(|&x| vec![x]).collect();
        let path = write_csv(dir.path(), "cells.csv", &["x".to_owned()], &rows).unwrap();
        let text = fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x"));
        for (line, &expected) in lines.zip(&values) {
            assert_eq!(line.parse::<f64>().unwrap(), expected, "line {line}");
        }
    }

    /// Header layout for a two-dof, one-control problem.
    #[test]
    fn extremal_header_is_componentwise() {
        let header = extremal_csv_header(2, 1);
        assert_eq!(
            header,
            ["t", "q1", "q2", "qdot1", "qdot2", "kappa1", "kappa2", "kappadot1", "kappadot2", "u1"]
        );
    }
}
