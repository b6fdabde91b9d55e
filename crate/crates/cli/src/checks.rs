//! Identity and consistency suites behind the `check` subcommand.
//!
//! Every configured problem runs three suites: the analytic-derivative check
//! against central differences, the pointwise agreement of the control
//! Lagrangian with the Pontryagin Hamiltonian under the coordinate
//! permutation relating them, and the equivalence of the Euler–Lagrange and
//! reduced costate flows from identified initial data. Problems with a
//! linear-quadratic form additionally verify that the control Hessian
//! reproduces the effort weight exactly and that both formulations locate
//! the same conjugate time. Random sampling uses fixed seeds, so repeated
//! runs produce identical reports.
//!
//! Two informational notes accompany the properties: the Kalman
//! controllability rank of a linear-quadratic problem, and the column rank
//! of `∂f/∂u` along the solved extremal (the second-variation theory assumes
//! it is full; a drop is reported as a warning, not a failure).

use std::cell::RefCell;

use extremal::conjugate;
use extremal::control;
use extremal::hamiltonian::{self, PhasePoint};
use extremal::lagrangian::{self, ExtendedPoint};
use extremal::lq::LqProblem;
use extremal::numerics::{integrate, IntegratorOptions};
use extremal::problem::Var;
use extremal::shooting::{self, Extremal};
use extremal::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Resolved;
use crate::report::PropertyJson;
use crate::{progress, CliError};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.gen_range(-scale..scale)))
}

/// Runs every applicable property and builds the notes list. Passes are
/// echoed as progress; failures always go to standard error.
pub fn run_suite(run: &Resolved, quiet: bool) -> Result<(Vec<PropertyJson>, Vec<String>), CliError> {
    let mut notes = run.notes.clone();
    let mut properties = vec![derivative_property(run)?, tulczyjew_property(run)?];

    // One tight solve feeds the flow comparison and the LQ suites.
    let extremal = solve_tight(run)?;
    properties.push(flow_property(run, &extremal)?);

    if let Some(lq) = &run.lq {
        properties.push(hessian_property(run, lq, &extremal)?);
        properties.push(conjugacy_property(run, &extremal)?);
        notes.push(kalman_note(lq));
    } else {
        notes.push("problem has no linear-quadratic form; LQ suites skipped".to_owned());
    }
    notes.push(control_rank_note(&extremal));

    for p in &properties {
        if p.pass {
            progress(
                quiet,
                &format!("  pass {} (max error {:.3e})", p.name, p.max_error),
            );
        } else {
            eprintln!(
                "  FAIL {} (max error {:.3e}, tolerance {:.3e}): {}",
                p.name, p.max_error, p.tolerance, p.detail
            );
        }
    }
    Ok((properties, notes))
}

/// Solves the configured problem with the configured guess but a tight
/// integrator, so the flow and conjugacy comparisons are not limited by a
/// coarse user tolerance.
fn solve_tight(run: &Resolved) -> Result<Extremal, CliError> {
    let mut opts = run.shooting;
    opts.integrator = IntegratorOptions::dp45(1e-10, 1e-10);
    Ok(shooting::solve(&run.problem, &run.z0, &opts)?)
}

/// Analytic derivative blocks against central differences at random points.
fn derivative_property(run: &Resolved) -> Result<PropertyJson, CliError> {
    let p = &run.problem;
    let (nq, m) = (p.dims.nq, p.dims.m);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c100);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let q = rand_vec(&mut rng, nq, 2.0);
        let v = rand_vec(&mut rng, nq, 2.0);
        let u = rand_vec(&mut rng, m, 2.0);
        let report = p.check_derivatives(&q, &v, &u, 1e-5)?;
        worst = worst.max(report.max_error);
    }
    let tolerance = 1e-6;
    Ok(PropertyJson {
        name: "analytic_derivatives_match_difference_quotients",
        pass: worst <= tolerance,
        max_error: worst,
        tolerance,
        detail: "worst relative block error over 100 random points (step 1e-5)".to_owned(),
    })
}

/// The control Lagrangian equals the Pontryagin Hamiltonian pointwise under
/// the coordinate permutation relating the two pictures.
fn tulczyjew_property(run: &Resolved) -> Result<PropertyJson, CliError> {
    let p = &run.problem;
    let (nq, m) = (p.dims.nq, p.dims.m);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c101);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let pt = ExtendedPoint::new(
            rand_vec(&mut rng, nq, 3.0),
            rand_vec(&mut rng, nq, 3.0),
            rand_vec(&mut rng, nq, 3.0),
            rand_vec(&mut rng, nq, 3.0),
            rand_vec(&mut rng, m, 3.0),
        );
        let l = lagrangian::eval(p, &pt)?;
        let (phase, u) = hamiltonian::tulczyjew_map(&pt);
        let h = hamiltonian::eval(p, &phase, &u)?;
        worst = worst.max((l - h).abs() / (1.0 + h.abs()));
    }
    let tolerance = 1e-12;
    Ok(PropertyJson {
        name: "lagrangian_equals_hamiltonian_pointwise",
        pass: worst <= tolerance,
        max_error: worst,
        tolerance,
        detail: "largest relative value gap over 1000 random extended points".to_owned(),
    })
}

/// Integrating the reduced costate flow from the identified initial point
/// reproduces the Euler–Lagrange trajectory.
fn flow_property(run: &Resolved, extremal: &Extremal) -> Result<PropertyJson, CliError> {
    let p = &run.problem;
    let nq = p.dims.nq;
    let u0 = extremal.node_controls[0].clone();
    let pt0 = hamiltonian::costate_from_lagrangian(p, &extremal.trajectory.states()[0], &u0)?;
    let copts = extremal.control_options;
    let warm = RefCell::new(u0);
    let mut rhs = |_t: f64, y: &Vector| -> extremal::Result<Vector> {
        let pt = PhasePoint::from_state(y, nq)?;
        let guess = warm.borrow().clone();
        let (dot, sol) = hamiltonian::reduced_rhs(p, &pt, &guess, &copts)?;
        *warm.borrow_mut() = sol.u;
        Ok(dot)
    };
    let horizon = p.boundary.horizon;
    let integrator = IntegratorOptions::dp45(1e-10, 1e-10).with_max_step(horizon / 1024.0);
    let ham = integrate(&mut rhs, (0.0, horizon), &pt0.to_state(), &integrator)?;

    let mut worst = 0.0_f64;
    for i in 0..=1000 {
        let t = horizon * i as f64 / 1000.0;
        let a = extremal.state_at(t);
        let b = ham.eval(t);
        for j in 0..2 * nq {
            worst = worst.max((a[j] - b[j]).abs());
        }
    }
    let tolerance = 1e-6;
    Ok(PropertyJson {
        name: "costate_flow_matches_euler_lagrange_flow",
        pass: worst <= tolerance,
        max_error: worst,
        tolerance,
        detail: "sup gap of (q, q̇) over 1001 uniform samples between the two flows".to_owned(),
    })
}

/// For linear-quadratic problems the negated control Hessian reproduces the
/// effort weight `R` exactly at every trajectory node.
fn hessian_property(
    run: &Resolved,
    lq: &LqProblem,
    extremal: &Extremal,
) -> Result<PropertyJson, CliError> {
    let nq = run.problem.dims.nq;
    let mut worst = 0.0_f64;
    for (state, u) in extremal
        .trajectory
        .states()
        .iter()
        .zip(&extremal.node_controls)
    {
        let q = state.rows(0, nq).into_owned();
        let v = state.rows(nq, nq).into_owned();
        let w = state.rows(2 * nq, nq).into_owned();
        let hess = control::control_hessian(&run.problem, &q, &v, u, &w)?;
        worst = worst.max(((-hess) - &lq.r).abs().max());
    }
    let tolerance = 1e-12;
    Ok(PropertyJson {
        name: "control_hessian_equals_effort_weight",
        pass: worst <= tolerance,
        max_error: worst,
        tolerance,
        detail: format!(
            "largest |(−∂²L̃/∂u²) − R| entry over {} trajectory nodes",
            extremal.node_controls.len()
        ),
    })
}

/// Both formulations must agree about the first conjugate time: same value
/// to within 1e-5 when one exists, or agreement that none does.
fn conjugacy_property(run: &Resolved, extremal: &Extremal) -> Result<PropertyJson, CliError> {
    let report = conjugate::optimality_verdict(extremal, &run.conjugate)?;
    let tolerance = 1e-5;
    let name = "conjugate_times_agree_across_formulations";
    let scans_ran = report.hamiltonian.is_some();
    let ham = report.hamiltonian.as_ref().and_then(|s| s.first_zero);
    let lag = report.lagrangian.as_ref().and_then(|s| s.first_zero);
    Ok(match (ham, lag) {
        (Some(th), Some(tl)) => {
            let gap = (th - tl).abs();
            PropertyJson {
                name,
                pass: gap <= tolerance,
                max_error: gap,
                tolerance,
                detail: format!("both pictures locate t_c ≈ {th:.6}"),
            }
        }
        (None, None) if scans_ran => PropertyJson {
            name,
            pass: true,
            max_error: 0.0,
            tolerance,
            detail: "neither picture finds a conjugate time on (0, T]".to_owned(),
        },
        (None, None) => PropertyJson {
            name,
            pass: false,
            max_error: f64::NAN,
            tolerance,
            detail: "Legendre gate failed; determinant scans unavailable".to_owned(),
        },
        (one, _) => PropertyJson {
            name,
            pass: false,
            max_error: f64::NAN,
            tolerance,
            detail: format!(
                "only the {} picture finds a conjugate time",
                if one.is_some() { "Hamiltonian" } else { "Lagrangian" }
            ),
        },
    })
}

fn kalman_note(lq: &LqProblem) -> String {
    let rank = lq.kalman_rank();
    let full = 2 * lq.nq();
    if lq.is_controllable() {
        format!("Kalman controllability rank {rank}/{full}: the linearized system is controllable")
    } else {
        format!(
            "Kalman controllability rank {rank}/{full}: the linearized system is NOT controllable"
        )
    }
}

/// Reports whether `∂f/∂u` keeps full column rank along the extremal; the
/// second-variation hypotheses require it, so a drop is worth a warning.
fn control_rank_note(extremal: &Extremal) -> String {
    let p = &extremal.problem;
    let (nq, m) = (p.dims.nq, p.dims.m);
    let mut min_rank = m;
    let mut worst_t = None;
    for (i, state) in extremal.trajectory.states().iter().enumerate() {
        let q = state.rows(0, nq).into_owned();
        let v = state.rows(nq, nq).into_owned();
        let fu = p.dynamics.jacobian(Var::U, &q, &v, &extremal.node_controls[i]);
        let rank = fu.rank(1e-9 * (1.0 + fu.abs().max()));
        if rank < min_rank {
            min_rank = rank;
            worst_t = Some(extremal.trajectory.times()[i]);
        }
    }
    match worst_t {
        None => format!("∂f/∂u has full column rank m = {m} at every trajectory node"),
        Some(t) => format!(
            "warning: ∂f/∂u rank drops to {min_rank} < m = {m} near t = {t:.6}; \
             second-variation conclusions assume full control rank"
        ),
    }
}
