//! Built-in demonstration problems, addressable by name.
//!
//! Three second-order problems with fully analytic derivatives:
//!
//! * `double_integrator` — `q̈ = u`, effort cost `½u²`, rest-to-rest transfer
//!   `(0,0) → (1,0)` on `[0, 1]`.  The optimal trajectory is the cubic
//!   `q(t) = 3t² − 2t³`.
//! * `min_effort_beam` — `q̈ = u`, indefinite cost `½u² − ½q²`, rest-to-rest
//!   transfer `(0,0) → (1,0)` on `[0, 6]`.  The horizon is long enough that a
//!   conjugate time appears in the interior of the interval.
//! * `forced_pendulum` — `q̈ = −sin q + u`, cost `½u² + ½q²`, swing from the
//!   origin to `(1, 0)` on `[0, 2]`.  Genuinely nonlinear dynamics.

use crate::lq::LqProblem;
use crate::problem::{BoundaryData, DifferentiableMap, Dims, SecondOrderOcp, Var};
use crate::{Error, Matrix, Result, Vector};

/// Names accepted by [`by_name`], in presentation order.
pub const PROBLEM_NAMES: [&str; 3] = ["double_integrator", "min_effort_beam", "forced_pendulum"];

fn scalar_lq(a1: f64, a2: f64, b: f64, q1: f64, q2: f64, r: f64) -> LqProblem {
    let m = |x: f64| Matrix::from_element(1, 1, x);
    LqProblem::new(m(a1), m(a2), m(b), m(q1), m(q2), m(r))
        .expect("built-in linear-quadratic data is well formed")
}

/// Linear-quadratic data for the double integrator: `q̈ = u`, cost `½u²`.
pub fn double_integrator_lq() -> LqProblem {
    scalar_lq(0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
}

/// Boundary data used by the `double_integrator` demonstration problem.
pub fn double_integrator_boundary() -> BoundaryData {
    BoundaryData::rest_to_rest(Vector::from_element(1, 0.0), Vector::from_element(1, 1.0), 1.0)
}

/// `q̈ = u`, cost `½u²`, rest-to-rest `(0,0) → (1,0)` on `[0, 1]`.
pub fn double_integrator() -> SecondOrderOcp {
    double_integrator_lq()
        .to_ocp("double_integrator", double_integrator_boundary())
        .expect("valid built-in problem")
}

/// Linear-quadratic data for the beam problem: `q̈ = u`, cost `½u² − ½q²`.
///
/// The running cost is indefinite (`Q₁ = −1`), so extremals stop being local
/// minimizers once the horizon passes the first conjugate time near
/// `t ≈ 4.7300407`.
pub fn min_effort_beam_lq() -> LqProblem {
    scalar_lq(0.0, 0.0, 1.0, -1.0, 0.0, 1.0)
}

/// Boundary data used by the `min_effort_beam` demonstration problem.
pub fn min_effort_beam_boundary() -> BoundaryData {
    BoundaryData::rest_to_rest(Vector::from_element(1, 0.0), Vector::from_element(1, 1.0), 6.0)
}

/// `q̈ = u`, cost `½u² − ½q²`, rest-to-rest `(0,0) → (1,0)` on `[0, 6]`.
pub fn min_effort_beam() -> SecondOrderOcp {
    min_effort_beam_lq()
        .to_ocp("min_effort_beam", min_effort_beam_boundary())
        .expect("valid built-in problem")
}

/// Boundary data used by the `forced_pendulum` demonstration problem.
pub fn forced_pendulum_boundary() -> BoundaryData {
    BoundaryData::rest_to_rest(Vector::from_element(1, 0.0), Vector::from_element(1, 1.0), 2.0)
}

/// `q̈ = −sin q + u`, cost `½u² + ½q²`, rest-to-rest `(0,0) → (1,0)` on `[0, 2]`.
pub fn forced_pendulum() -> SecondOrderOcp {
    let dynamics = DifferentiableMap::from_value(1, |q: &Vector, _v: &Vector, u: &Vector| {
        Vector::from_element(1, -q[0].sin() + u[0])
    })
    .with_jacobian(Var::Q, |q: &Vector, _v, _u| {
        Matrix::from_element(1, 1, -q[0].cos())
    })
    .with_jacobian(Var::V, |_q, _v, _u| Matrix::zeros(1, 1))
    .with_jacobian(Var::U, |_q, _v, _u| Matrix::from_element(1, 1, 1.0))
    .with_contracted_hessian(|a: Var, b: Var, w: &Vector, q: &Vector, _v, _u| {
        match (a, b) {
            (Var::Q, Var::Q) => Matrix::from_element(1, 1, w[0] * q[0].sin()),
            _ => Matrix::zeros(1, 1),
        }
    });

    let cost = DifferentiableMap::from_value(1, |q: &Vector, _v: &Vector, u: &Vector| {
        Vector::from_element(1, 0.5 * u[0] * u[0] + 0.5 * q[0] * q[0])
    })
    .with_jacobian(Var::Q, |q: &Vector, _v, _u| {
        Matrix::from_element(1, 1, q[0])
    })
    .with_jacobian(Var::V, |_q, _v, _u| Matrix::zeros(1, 1))
    .with_jacobian(Var::U, |_q, _v, u: &Vector| Matrix::from_element(1, 1, u[0]))
    .with_contracted_hessian(|a: Var, b: Var, w: &Vector, _q, _v, _u| match (a, b) {
        (Var::Q, Var::Q) | (Var::U, Var::U) => Matrix::from_element(1, 1, w[0]),
        _ => Matrix::zeros(1, 1),
    });

    SecondOrderOcp::new(
        "forced_pendulum",
        Dims { nq: 1, m: 1 },
        dynamics,
        cost,
        forced_pendulum_boundary(),
    )
    .expect("valid built-in problem")
}

/// Look a demonstration problem up by name.
pub fn by_name(name: &str) -> Result<SecondOrderOcp> {
    match name {
        "double_integrator" => Ok(double_integrator()),
        "min_effort_beam" => Ok(min_effort_beam()),
        "forced_pendulum" => Ok(forced_pendulum()),
        other => Err(Error::UnknownProblem {
            name: other.to_string(),
            known: PROBLEM_NAMES.join(", "),
        }),
    }
}

/// Linear-quadratic data for a registry problem, when it has any.
pub fn lq_by_name(name: &str) -> Option<LqProblem> {
    match name {
        "double_integrator" => Some(double_integrator_lq()),
        "min_effort_beam" => Some(min_effort_beam_lq()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_resolve_and_unknown_names_are_reported() {
        for name in PROBLEM_NAMES {
            let p = by_name(name).unwrap();
            assert_eq!(p.label, name);
        }
        match by_name("inverted_pendulum") {
            Err(Error::UnknownProblem { name, known }) => {
                assert_eq!(name, "inverted_pendulum");
                assert_eq!(known, PROBLEM_NAMES.join(", "));
            }
            other => panic!("expected UnknownProblem, got {other:?}"),
        }
    }

    #[test]
    fn pendulum_values_match_hand_formulas() {
        let p = forced_pendulum();
        let q = Vector::from_element(1, 0.7);
        let v = Vector::from_element(1, -0.3);
        let u = Vector::from_element(1, 1.1);
        let f = p.f(&q, &v, &u).unwrap();
        assert!((f[0] - (-0.7_f64.sin() + 1.1)).abs() < 1e-15);
        let c = p.running_cost(&q, &v, &u).unwrap();
        assert!((c - (0.5 * 1.1 * 1.1 + 0.5 * 0.7 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn every_problem_passes_derivative_checks_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
        for name in PROBLEM_NAMES {
            let p = by_name(name).unwrap();
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let q = Vector::from_fn(p.dims.nq, |_, _| rng.gen_range(-2.0..2.0));
                let v = Vector::from_fn(p.dims.nq, |_, _| rng.gen_range(-2.0..2.0));
                let u = Vector::from_fn(p.dims.m, |_, _| rng.gen_range(-2.0..2.0));
                let report = p.check_derivatives(&q, &v, &u, 1e-5).unwrap();
                worst = worst.max(report.max_error);
            }
            assert!(
                worst <= 1e-6,
                "{name}: derivative mismatch {worst:.3e} exceeds 1e-6"
            );
        }
    }

    #[test]
    fn default_boundaries_are_rest_to_rest() {
        let di = double_integrator();
        assert_eq!(di.boundary.horizon, 1.0);
        assert_eq!(di.boundary.q0[0], 0.0);
        assert_eq!(di.boundary.q_end[0], 1.0);
        assert_eq!(di.boundary.v0[0], 0.0);
        assert_eq!(di.boundary.v_end[0], 0.0);
        assert_eq!(min_effort_beam().boundary.horizon, 6.0);
        assert_eq!(forced_pendulum().boundary.horizon, 2.0);
        assert!(lq_by_name("double_integrator").is_some());
        assert!(lq_by_name("min_effort_beam").is_some());
        assert!(lq_by_name("forced_pendulum").is_none());
    }
}
