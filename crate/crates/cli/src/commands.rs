//! The three subcommand drivers: `solve`, `conjugate`, and `check`.
//!
//! Each driver consumes a resolved configuration, runs the toolkit, writes
//! its output files into the run's output directory, and returns the
//! process exit code: `0` for success (for `solve`: convergence; for
//! `conjugate`: any computed verdict; for `check`: all properties passed),
//! `2` when the shooting iteration runs out of iterations, `1` for
//! everything else (reported by the caller on standard error).

use std::fs;
use std::path::Path;

use extremal::conjugate::{self, Formulation};
use extremal::control;
use extremal::shooting;
use extremal::Error;

use crate::config::Resolved;
use crate::report::{
    self, CheckJson, ConjugateJson, LegendreJson, SummaryJson,
};
use crate::{checks, progress, CliError};

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn describe(run: &Resolved) -> String {
    format!(
        "{} (nq = {}, m = {}, T = {})",
        run.problem.label, run.problem.dims.nq, run.problem.dims.m, run.problem.boundary.horizon
    )
}

/// `solve`: shoot for an extremal, then write `extremal.csv` and
/// `summary.json`.
pub fn solve(run: &Resolved, quiet: bool) -> Result<i32, CliError> {
    ensure_dir(&run.out_dir)?;
    progress(quiet, &format!("solving {}", describe(run)));
    let (nq, m) = (run.problem.dims.nq, run.problem.dims.m);

    match shooting::solve(&run.problem, &run.z0, &run.shooting) {
        Ok(extremal) => {
            let legendre = control::legendre_check(&extremal, run.conjugate.legendre_margin)?;
            let samples = extremal.sample(run.csv_samples)?;
            let rows: Vec<Vec<f64>> = samples
                .iter()
                .map(|s| {
                    let mut row = Vec::with_capacity(1 + 4 * nq + m);
                    row.push(s.t);
                    row.extend(s.state.iter().copied());
                    row.extend(s.u.iter().copied());
                    row
                })
                .collect();
            let csv = report::write_csv(
                &run.out_dir,
                "extremal.csv",
                &report::extremal_csv_header(nq, m),
                &rows,
            )?;
            let summary = SummaryJson {
                problem: run.problem.label.clone(),
                nq,
                m,
                horizon: run.problem.boundary.horizon,
                converged: true,
                z_star: extremal.z_star.iter().copied().collect(),
                cost: Some(extremal.cost),
                residual: extremal.boundary_residual,
                iterations: extremal.iterations,
                residual_history: extremal.residual_history.clone(),
                legendre: Some(LegendreJson::from_report(&legendre)),
                assumptions: conjugate::ASSUMPTIONS,
                notes: run.notes.clone(),
            };
            let json = report::write_json(&run.out_dir, "summary.json", &summary)?;
            progress(
                quiet,
                &format!(
                    "converged in {} iterations; J = {:.9}, boundary residual {:.3e}",
                    extremal.iterations, extremal.cost, extremal.boundary_residual
                ),
            );
            progress(quiet, &format!("wrote {} and {}", csv.display(), json.display()));
            Ok(0)
        }
        Err(Error::NoConvergence {
            iterations,
            residual,
            history,
            best,
        }) => {
            let summary = SummaryJson {
                problem: run.problem.label.clone(),
                nq,
                m,
                horizon: run.problem.boundary.horizon,
                converged: false,
                z_star: best,
                cost: None,
                residual,
                iterations,
                residual_history: history,
                legendre: None,
                assumptions: conjugate::ASSUMPTIONS,
                notes: run.notes.clone(),
            };
            let json = report::write_json(&run.out_dir, "summary.json", &summary)?;
            eprintln!(
                "shooting did not converge after {iterations} iterations \
                 (best residual {residual:.3e}); see {}",
                json.display()
            );
            Ok(2)
        }
        Err(e) => Err(e.into()),
    }
}

/// `conjugate`: solve, propagate both Jacobi bundles, classify, and write
/// `conjugate.json` plus `det.csv`.
pub fn conjugate(run: &Resolved, quiet: bool) -> Result<i32, CliError> {
    ensure_dir(&run.out_dir)?;
    progress(quiet, &format!("solving {}", describe(run)));
    let extremal = shooting::solve(&run.problem, &run.z0, &run.shooting)?;
    progress(
        quiet,
        &format!(
            "scanning Jacobi determinants ({} fields per picture)",
            2 * run.problem.dims.nq
        ),
    );
    let report = conjugate::optimality_verdict(&extremal, &run.conjugate)?;

    // Both determinant curves on one uniform grid over the whole horizon
    // (the scans in the report start at t_skip; the CSV shows the
    // structural zero at t = 0 as well). When the Legendre gate fails the
    // bundles do not exist and the file carries only its header.
    let mut rows = Vec::new();
    if report.hamiltonian.is_some() {
        let n = run.csv_samples;
        let ham = conjugate::propagate_bundle(&extremal, Formulation::Hamiltonian, &run.conjugate)?;
        let lag = conjugate::propagate_bundle(&extremal, Formulation::Lagrangian, &run.conjugate)?;
        let (times, d_ham) = conjugate::det_series(&ham, n)?;
        let (_, d_lag) = conjugate::det_series(&lag, n)?;
        rows = times
            .iter()
            .zip(d_ham.iter().zip(&d_lag))
            .map(|(&t, (&dh, &dl))| vec![t, dh, dl])
            .collect();
    }
    let header = ["t", "D_ham", "D_lag"].map(str::to_owned);
    let csv = report::write_csv(&run.out_dir, "det.csv", &header, &rows)?;

    let json_value = ConjugateJson::from_report(
        &run.problem.label,
        run.problem.boundary.horizon,
        &report,
        run.notes.clone(),
    );
    let json = report::write_json(&run.out_dir, "conjugate.json", &json_value)?;

    match report.conjugate_time {
        Some(tc) => progress(
            quiet,
            &format!("verdict: {} (first conjugate time {tc:.9})", json_value.verdict),
        ),
        None => progress(quiet, &format!("verdict: {}", json_value.verdict)),
    }
    progress(quiet, &format!("wrote {} and {}", csv.display(), json.display()));
    Ok(0)
}

/// `check`: run the identity/consistency suites and write `check.json`.
pub fn check(run: &Resolved, quiet: bool) -> Result<i32, CliError> {
    ensure_dir(&run.out_dir)?;
    progress(quiet, &format!("checking {}", describe(run)));
    let (properties, notes) = checks::run_suite(run, quiet)?;
    let all_pass = properties.iter().all(|p| p.pass);
    let value = CheckJson {
        problem: run.problem.label.clone(),
        nq: run.problem.dims.nq,
        m: run.problem.dims.m,
        horizon: run.problem.boundary.horizon,
        all_pass,
        properties,
        assumptions: conjugate::ASSUMPTIONS,
        notes,
    };
    let json = report::write_json(&run.out_dir, "check.json", &value)?;
    progress(quiet, &format!("wrote {}", json.display()));
    if all_pass {
        progress(quiet, "all properties passed");
        Ok(0)
    } else {
        let failed: Vec<&str> = value
            .properties
            .iter()
            .filter(|p| !p.pass)
            .map(|p| p.name)
            .collect();
        eprintln!("{} of {} properties failed: {}", failed.len(), value.properties.len(), failed.join(", "));
        Ok(1)
    }
}
