//! The phase-space side: Pontryagin Hamiltonian, adjoint system, reduced flow,
//! and the identification with the Lagrangian picture.
//!
//! For the fixed-endpoint problem `min ∫C dt` subject to `q̈ = f(q, q̇, u)`,
//! first-order necessary conditions are phrased on the phase space with state
//! `x = (q, v)` and costate `λ = (λ_q, λ_v)`:
//!
//! ```text
//! H(x, λ, u) = λ_q·v + λ_v·f(q, v, u) − C(q, v, u),
//! ẋ = ∂H/∂λ,   λ̇ = −∂H/∂x,   0 = ∂H/∂u,
//! ```
//!
//! in the normal case (cost multiplier fixed at −1).  Eliminating the control
//! from the stationarity equation produces the reduced Hamiltonian flow; its
//! linearization along an extremal drives the conjugate-point test.
//!
//! The module also houses the change of coordinates between this picture and
//! the extended-space Lagrangian picture of [`crate::lagrangian`]: a pure
//! permutation `(q, κ, v_q, v_κ, u) ↦ (q, v_q, v_κ, κ, u)` under which the
//! control Lagrangian and the Hamiltonian take equal values, and the costate
//! identification `λ_v = κ`, `λ_q = C_q̇ − f_q̇ᵀκ − κ̇` that matches their
//! flows.
//!
//! Stacked phase states are ordered `(q, v, λ_q, λ_v) ∈ ℝ^{4nq}` throughout.

use crate::control::{self, ControlOptions, ControlSolution};
use crate::lagrangian::{split_state, ExtendedPoint};
use crate::problem::{SecondOrderOcp, Var};
use crate::{Error, Matrix, Result, Vector};

/// Cost multiplier `λ⁰` of the Pontryagin function.
///
/// Only the normal case is represented: the multiplier is always `−1`, and
/// abnormal extremals are outside the scope of this toolkit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbnormalMultiplier(f64);

impl AbnormalMultiplier {
    pub const NORMAL: AbnormalMultiplier = AbnormalMultiplier(-1.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for AbnormalMultiplier {
    fn default() -> Self {
        AbnormalMultiplier::NORMAL
    }
}

/// A point of phase space: state `x = (q, v)` and costate `λ = (λ_q, λ_v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: Vector,
    pub v: Vector,
    pub lambda_q: Vector,
    pub lambda_v: Vector,
}

impl PhasePoint {
    pub fn new(q: Vector, v: Vector, lambda_q: Vector, lambda_v: Vector) -> Self {
        PhasePoint {
            q,
            v,
            lambda_q,
            lambda_v,
        }
    }

    /// Unstacks `(q, v, λ_q, λ_v)` from a flow state of length `4nq`.
    pub fn from_state(state: &Vector, nq: usize) -> Result<Self> {
        let (q, v, lambda_q, lambda_v) = split_state(state, nq)?;
        Ok(PhasePoint {
            q,
            v,
            lambda_q,
            lambda_v,
        })
    }

    /// Stacks the point into a flow state `(q, v, λ_q, λ_v)`.
    pub fn to_state(&self) -> Vector {
        let nq = self.q.len();
        let mut out = Vector::zeros(4 * nq);
        out.rows_mut(0, nq).copy_from(&self.q);
        out.rows_mut(nq, nq).copy_from(&self.v);
        out.rows_mut(2 * nq, nq).copy_from(&self.lambda_q);
        out.rows_mut(3 * nq, nq).copy_from(&self.lambda_v);
        out
    }

    fn check(&self, p: &SecondOrderOcp) -> Result<()> {
        let nq = p.dims.nq;
        if self.q.len() != nq
            || self.v.len() != nq
            || self.lambda_q.len() != nq
            || self.lambda_v.len() != nq
        {
            return Err(Error::InvalidArgument(format!(
                "phase point has shapes (q:{}, v:{}, λ_q:{}, λ_v:{}), expected nq={nq}",
                self.q.len(),
                self.v.len(),
                self.lambda_q.len(),
                self.lambda_v.len(),
            )));
        }
        Ok(())
    }
}

/// Evaluates the Pontryagin Hamiltonian `H = λ_q·v + λ_v·f − C` (normal case).
pub fn eval(p: &SecondOrderOcp, pt: &PhasePoint, u: &Vector) -> Result<f64> {
    pt.check(p)?;
    let f = p.f(&pt.q, &pt.v, u)?;
    let c = p.running_cost(&pt.q, &pt.v, u)?;
    Ok(pt.lambda_q.dot(&pt.v) + pt.lambda_v.dot(&f) + AbnormalMultiplier::NORMAL.value() * c)
}

/// Canonical vector field of the Pontryagin function at a phase point, for an
/// arbitrary (not necessarily stationary) control:
///
/// ```text
/// q̇ = v,              v̇ = f,
/// λ̇_q = C_q − f_qᵀλ_v,   λ̇_v = C_q̇ − λ_q − f_q̇ᵀλ_v.
/// ```
///
/// Returned stacked as `(q̇, v̇, λ̇_q, λ̇_v)`.
pub fn pmp_rhs(p: &SecondOrderOcp, pt: &PhasePoint, u: &Vector) -> Result<Vector> {
    pt.check(p)?;
    let nq = p.dims.nq;
    let f = p.f(&pt.q, &pt.v, u)?;
    let f_q = p.dynamics.jacobian(Var::Q, &pt.q, &pt.v, u);
    let f_v = p.dynamics.jacobian(Var::V, &pt.q, &pt.v, u);
    let c_q = p.cost.gradient(Var::Q, &pt.q, &pt.v, u);
    let c_v = p.cost.gradient(Var::V, &pt.q, &pt.v, u);

    let mut out = Vector::zeros(4 * nq);
    out.rows_mut(0, nq).copy_from(&pt.v);
    out.rows_mut(nq, nq).copy_from(&f);
    out.rows_mut(2 * nq, nq)
        .copy_from(&(c_q - f_q.transpose() * &pt.lambda_v));
    out.rows_mut(3 * nq, nq)
        .copy_from(&(c_v - &pt.lambda_q - f_v.transpose() * &pt.lambda_v));
    Ok(out)
}

/// Control stationarity residual `∂H/∂u = f_uᵀλ_v − C_u` at a phase point.
pub fn optimality_residual(p: &SecondOrderOcp, pt: &PhasePoint, u: &Vector) -> Result<Vector> {
    pt.check(p)?;
    control::optimality_residual(p, &pt.q, &pt.v, u, &pt.lambda_v)
}

/// Vector field of the reduced Hamiltonian: [`pmp_rhs`] evaluated at the
/// stationary control `u*(x, λ)` obtained by Newton elimination from
/// `u_guess`.  By stationarity, `∂H/∂u = 0` there, so this is exactly
/// `(∂Hʳ/∂λ, −∂Hʳ/∂x)` for `Hʳ(x, λ) = H(x, λ, u*(x, λ))`.
///
/// Returns the stacked rhs together with the eliminated control (useful for
/// warm-starting the next evaluation along a flow).
pub fn reduced_rhs(
    p: &SecondOrderOcp,
    pt: &PhasePoint,
    u_guess: &Vector,
    opts: &ControlOptions,
) -> Result<(Vector, ControlSolution)> {
    pt.check(p)?;
    let sol = control::eliminate_control(p, &pt.q, &pt.v, &pt.lambda_v, u_guess, opts)?;
    let rhs = pmp_rhs(p, pt, &sol.u)?;
    Ok((rhs, sol))
}

/// Second derivatives of the reduced Hamiltonian at a phase point with the
/// control already eliminated, obtained as Schur complements of the full
/// second-derivative blocks:
///
/// ```text
/// Hʳ_ab = H_ab − H_au H_uu⁻¹ H_ub,     a, b ∈ {x, λ}.
/// ```
#[derive(Clone, Debug)]
pub struct ReducedHessian {
    /// `∂²Hʳ/∂x²`, shape `2nq × 2nq`, symmetric.
    pub xx: Matrix,
    /// `∂²Hʳ/∂x∂λ`, shape `2nq × 2nq`, rows indexed by `x`.
    pub x_lambda: Matrix,
    /// `∂²Hʳ/∂λ²`, shape `2nq × 2nq`, symmetric.
    pub lambda_lambda: Matrix,
}

/// Computes the reduced-Hamiltonian second derivatives at a phase point.
///
/// `u` must be the stationary control at the point.  Fails with
/// `SingularControlHessian` when `H_uu = K_uu − C_uu` is singular.
pub fn reduced_hessian(p: &SecondOrderOcp, pt: &PhasePoint, u: &Vector) -> Result<ReducedHessian> {
    pt.check(p)?;
    let nq = p.dims.nq;
    let m = p.dims.m;
    let d = p.derivs(&pt.q, &pt.v, u, &pt.lambda_v)?;

    let mut h_xx = Matrix::zeros(2 * nq, 2 * nq);
    h_xx.view_mut((0, 0), (nq, nq)).copy_from(&(&d.k_qq - &d.c_qq));
    h_xx.view_mut((0, nq), (nq, nq)).copy_from(&(&d.k_qv - &d.c_qv));
    h_xx.view_mut((nq, 0), (nq, nq))
        .copy_from(&(&d.k_qv - &d.c_qv).transpose());
    h_xx.view_mut((nq, nq), (nq, nq)).copy_from(&(&d.k_vv - &d.c_vv));

    let mut h_xl = Matrix::zeros(2 * nq, 2 * nq);
    h_xl.view_mut((0, nq), (nq, nq)).copy_from(&d.f_q.transpose());
    h_xl.view_mut((nq, 0), (nq, nq))
        .copy_from(&Matrix::identity(nq, nq));
    h_xl.view_mut((nq, nq), (nq, nq)).copy_from(&d.f_v.transpose());

    let mut h_xu = Matrix::zeros(2 * nq, m);
    h_xu.view_mut((0, 0), (nq, m)).copy_from(&(&d.k_qu - &d.c_qu));
    h_xu.view_mut((nq, 0), (nq, m)).copy_from(&(&d.k_vu - &d.c_vu));

    let mut h_lu = Matrix::zeros(2 * nq, m);
    h_lu.view_mut((nq, 0), (nq, m)).copy_from(&d.f_u);

    let h_uu = &d.k_uu - &d.c_uu;
    let h_uu_lu = h_uu.lu();
    let huu_inv_ux = h_uu_lu
        .solve(&h_xu.transpose())
        .ok_or(Error::SingularControlHessian)?;
    let huu_inv_ul = h_uu_lu
        .solve(&h_lu.transpose())
        .ok_or(Error::SingularControlHessian)?;

    Ok(ReducedHessian {
        xx: &h_xx - &h_xu * &huu_inv_ux,
        x_lambda: &h_xl - &h_xu * &huu_inv_ul,
        lambda_lambda: -(&h_lu * &huu_inv_ul),
    })
}

/// Linearization of the reduced Hamiltonian flow at a phase point: the action
///
/// ```text
/// δẋ = (Hʳ_xλ)ᵀ δx + Hʳ_λλ δλ,
/// δλ̇ = −Hʳ_xx δx − Hʳ_xλ δλ,
/// ```
///
/// equivalently the full variational equations of the Pontryagin system with
/// the control variation eliminated through the stationarity condition.
pub fn reduced_variational_rhs_at(
    p: &SecondOrderOcp,
    pt: &PhasePoint,
    u: &Vector,
    dx: &Vector,
    dl: &Vector,
) -> Result<(Vector, Vector)> {
    let nq = p.dims.nq;
    if dx.len() != 2 * nq || dl.len() != 2 * nq {
        return Err(Error::InvalidArgument(format!(
            "variation has shapes (δx:{}, δλ:{}), expected 2nq = {}",
            dx.len(),
            dl.len(),
            2 * nq
        )));
    }
    let h = reduced_hessian(p, pt, u)?;
    let dxdot = h.x_lambda.transpose() * dx + &h.lambda_lambda * dl;
    let dldot = -(&h.xx * dx + &h.x_lambda * dl);
    Ok((dxdot, dldot))
}

/// The extended Tulczyjew permutation `(q, κ, v_q, v_κ, u) ↦ (q, v_q, v_κ, κ, u)`:
/// base velocity becomes state velocity, the multiplier pair becomes the
/// costate.  Under this map the control Lagrangian and the Pontryagin
/// Hamiltonian take equal values pointwise.
pub fn tulczyjew_map(pt: &ExtendedPoint) -> (PhasePoint, Vector) {
    (
        PhasePoint {
            q: pt.q.clone(),
            v: pt.v_q.clone(),
            lambda_q: pt.v_kappa.clone(),
            lambda_v: pt.kappa.clone(),
        },
        pt.u.clone(),
    )
}

/// Inverse of [`tulczyjew_map`]: `(q, v, λ_q, λ_v, u) ↦ (q, κ=λ_v, v_q=v, v_κ=λ_q, u)`.
pub fn tulczyjew_inverse(pt: &PhasePoint, u: &Vector) -> ExtendedPoint {
    ExtendedPoint {
        q: pt.q.clone(),
        kappa: pt.lambda_v.clone(),
        v_q: pt.v.clone(),
        v_kappa: pt.lambda_q.clone(),
        u: u.clone(),
    }
}

/// Identifies the costate of the Euler–Lagrange flow state `(q, q̇, κ, κ̇)`
/// with eliminated control `u`:
///
/// ```text
/// λ_v = κ,        λ_q = ∂C/∂q̇ − f_q̇ᵀκ − κ̇.
/// ```
///
/// Under this identification the Euler–Lagrange flow of the control
/// Lagrangian and the reduced Hamiltonian flow are the same dynamical system.
pub fn costate_from_lagrangian(p: &SecondOrderOcp, state: &Vector, u: &Vector) -> Result<PhasePoint> {
    let (q, qd, k, kd) = split_state(state, p.dims.nq)?;
    p.check_point(&q, &qd, u)?;
    let f_v = p.dynamics.jacobian(Var::V, &q, &qd, u);
    let c_v = p.cost.gradient(Var::V, &q, &qd, u);
    let lambda_q = c_v - f_v.transpose() * &k - &kd;
    Ok(PhasePoint {
        q,
        v: qd,
        lambda_q,
        lambda_v: k,
    })
}

/// Inverse of [`costate_from_lagrangian`]: recovers the Euler–Lagrange flow
/// state `(q, q̇, κ, κ̇)` from a phase point with eliminated control `u`,
/// using `κ = λ_v` and `κ̇ = ∂C/∂q̇ − f_q̇ᵀλ_v − λ_q`.
pub fn lagrangian_from_costate(p: &SecondOrderOcp, pt: &PhasePoint, u: &Vector) -> Result<Vector> {
    pt.check(p)?;
    let nq = p.dims.nq;
    let f_v = p.dynamics.jacobian(Var::V, &pt.q, &pt.v, u);
    let c_v = p.cost.gradient(Var::V, &pt.q, &pt.v, u);
    let kd = c_v - f_v.transpose() * &pt.lambda_v - &pt.lambda_q;
    let mut out = Vector::zeros(4 * nq);
    out.rows_mut(0, nq).copy_from(&pt.q);
    out.rows_mut(nq, nq).copy_from(&pt.v);
    out.rows_mut(2 * nq, nq).copy_from(&pt.lambda_v);
    out.rows_mut(3 * nq, nq).copy_from(&kd);
    Ok(out)
}

/// Variational right-hand side sampled along a solved extremal: identifies
/// the phase point at `t` through [`costate_from_lagrangian`] and applies
/// [`reduced_variational_rhs_at`].
pub fn reduced_variational_rhs(
    extremal: &crate::shooting::Extremal,
    t: f64,
    dx: &Vector,
    dl: &Vector,
) -> Result<(Vector, Vector)> {
    let horizon = extremal.horizon();
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside [0, {horizon}]"
        )));
    }
    let p = &extremal.problem;
    let state = extremal.state_at(t);
    let u = extremal.control_at(t)?;
    let pt = costate_from_lagrangian(p, &state, &u)?;
    reduced_variational_rhs_at(p, &pt, &u, dx, dl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::LqProblem;
    use crate::numerics::{integrate, IntegratorOptions};
    use crate::problem::BoundaryData;
    use crate::registry;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vecn(vals: &[f64]) -> Vector {
        Vector::from_vec(vals.to_vec())
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    fn random_lq(rng: &mut ChaCha8Rng, nq: usize, m: usize) -> LqProblem {
        let rand_mat = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
            Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
        };
        let sym = |mm: Matrix| (&mm + mm.transpose()) * 0.5;
        let a1 = rand_mat(rng, nq, nq);
        let a2 = rand_mat(rng, nq, nq);
        let b = rand_mat(rng, nq, m);
        let q1 = sym(rand_mat(rng, nq, nq));
        let q2 = sym(rand_mat(rng, nq, nq));
        let r0 = rand_mat(rng, m, m);
        let r = &r0 * r0.transpose() + Matrix::identity(m, m) * 0.5;
        LqProblem::new(a1, a2, b, q1, q2, r).unwrap()
    }

    fn lq_ocp(lq: &LqProblem) -> crate::problem::SecondOrderOcp {
        lq.to_ocp(
            "lq",
            BoundaryData::rest_to_rest(Vector::zeros(lq.nq()), Vector::zeros(lq.nq()), 1.0),
        )
        .unwrap()
    }

    fn lq_stationary_control(lq: &LqProblem, lambda_v: &Vector) -> Vector {
        lq.r.clone()
            .cholesky()
            .unwrap()
            .solve(&(lq.b.transpose() * lambda_v))
    }

    #[test]
    fn eval_matches_hand_value_on_double_integrator() {
        // H = λ_q v + λ_v u − ½u² at (0, 0, 12, 6) with u = 6: 0 + 36 − 18.
        let p = registry::double_integrator();
        let pt = PhasePoint::new(vecn(&[0.0]), vecn(&[0.0]), vecn(&[12.0]), vecn(&[6.0]));
        assert_eq!(eval(&p, &pt, &vecn(&[6.0])).unwrap(), 18.0);
    }

    #[test]
    fn eval_reduces_to_negative_cost_without_costate() {
        let p = registry::forced_pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0010);
        for _ in 0..20 {
            let q = random_vec(&mut rng, 1);
            let v = random_vec(&mut rng, 1);
            let u = random_vec(&mut rng, 1);
            let pt = PhasePoint::new(q.clone(), v.clone(), Vector::zeros(1), Vector::zeros(1));
            let c = p.running_cost(&q, &v, &u).unwrap();
            assert!((eval(&p, &pt, &u).unwrap() + c).abs() < 1e-15);
        }
    }

    #[test]
    fn hamiltonian_equals_lagrangian_through_tulczyjew_map() {
        // The permutation (q, κ, v_q, v_κ, u) ↦ (q, v_q, v_κ, κ, u) carries
        // the control Lagrangian onto the Hamiltonian pointwise.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0011);
        let lq = random_lq(&mut rng, 2, 2);
        let problems = vec![
            registry::double_integrator(),
            registry::forced_pendulum(),
            lq_ocp(&lq),
        ];
        for p in &problems {
            let nq = p.dims.nq;
            let m = p.dims.m;
            for _ in 0..1000 {
                let pt = ExtendedPoint::new(
                    random_vec(&mut rng, nq),
                    random_vec(&mut rng, nq),
                    random_vec(&mut rng, nq),
                    random_vec(&mut rng, nq),
                    random_vec(&mut rng, m),
                );
                let l_val = crate::lagrangian::eval(p, &pt).unwrap();
                let (phase, u) = tulczyjew_map(&pt);
                let h_val = eval(p, &phase, &u).unwrap();
                assert!(
                    (l_val - h_val).abs() <= 1e-12 * (1.0 + h_val.abs()),
                    "{}: L = {l_val}, H = {h_val}",
                    p.label
                );
            }
        }
    }

    #[test]
    fn pmp_rhs_matches_hand_value_on_double_integrator() {
        let p = registry::double_integrator();
        let pt = PhasePoint::new(vecn(&[0.0]), vecn(&[0.0]), vecn(&[12.0]), vecn(&[6.0]));
        let rhs = pmp_rhs(&p, &pt, &vecn(&[6.0])).unwrap();
        assert_eq!(rhs, vecn(&[0.0, 6.0, 0.0, -12.0]));
    }

    #[test]
    fn pmp_rhs_with_trivial_problem_only_transports_lambda_q() {
        // f ≡ 0·u (zero dynamics), C ≡ 0 → (v, 0, 0, −λ_q).
        use crate::problem::{DifferentiableMap, Dims, SecondOrderOcp};
        let dynamics =
            DifferentiableMap::from_value(1, |_q: &Vector, _v: &Vector, _u: &Vector| {
                Vector::zeros(1)
            });
        let cost = DifferentiableMap::from_value(1, |_q: &Vector, _v: &Vector, _u: &Vector| {
            Vector::zeros(1)
        });
        let p = SecondOrderOcp::new(
            "trivial",
            Dims { nq: 1, m: 1 },
            dynamics,
            cost,
            BoundaryData::rest_to_rest(Vector::zeros(1), Vector::zeros(1), 1.0),
        )
        .unwrap();
        let pt = PhasePoint::new(vecn(&[0.3]), vecn(&[0.7]), vecn(&[1.1]), vecn(&[-0.2]));
        let rhs = pmp_rhs(&p, &pt, &vecn(&[0.0])).unwrap();
        assert!((rhs - vecn(&[0.7, 0.0, 0.0, -1.1])).amax() < 1e-9);
    }

    #[test]
    fn pmp_rhs_matches_lq_matrix_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0012);
        for _ in 0..20 {
            let lq = random_lq(&mut rng, 2, 1);
            let p = lq_ocp(&lq);
            let m_ham = lq.hamiltonian_matrix();
            for _ in 0..10 {
                let state = random_vec(&mut rng, 8);
                let pt = PhasePoint::from_state(&state, 2).unwrap();
                let u = lq_stationary_control(&lq, &pt.lambda_v);
                let rhs = pmp_rhs(&p, &pt, &u).unwrap();
                let expected = &m_ham * &state;
                assert!((&rhs - &expected).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn optimality_residual_measures_stationarity_defect() {
        let p = registry::double_integrator();
        let pt = PhasePoint::new(vecn(&[0.0]), vecn(&[0.0]), vecn(&[12.0]), vecn(&[6.0]));
        assert_eq!(
            optimality_residual(&p, &pt, &vecn(&[6.0])).unwrap(),
            vecn(&[0.0])
        );
        assert_eq!(
            optimality_residual(&p, &pt, &vecn(&[0.0])).unwrap(),
            vecn(&[6.0])
        );
    }

    #[test]
    fn reduced_rhs_eliminates_the_control_internally() {
        let p = registry::double_integrator();
        let pt = PhasePoint::new(vecn(&[0.0]), vecn(&[0.0]), vecn(&[12.0]), vecn(&[6.0]));
        let (rhs, sol) = reduced_rhs(&p, &pt, &Vector::zeros(1), &ControlOptions::default()).unwrap();
        assert_eq!(rhs, vecn(&[0.0, 6.0, 0.0, -12.0]));
        assert!((sol.u[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_rhs_matches_lq_matrix_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0013);
        for _ in 0..10 {
            let lq = random_lq(&mut rng, 2, 2);
            let p = lq_ocp(&lq);
            let m_ham = lq.hamiltonian_matrix();
            for _ in 0..10 {
                let state = random_vec(&mut rng, 8);
                let pt = PhasePoint::from_state(&state, 2).unwrap();
                let (rhs, _) =
                    reduced_rhs(&p, &pt, &Vector::zeros(2), &ControlOptions::default()).unwrap();
                assert!((&rhs - &m_ham * &state).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn hamiltonian_is_conserved_along_reduced_flow() {
        // Autonomous system: H is a first integral of the reduced flow.
        let cases: Vec<(crate::problem::SecondOrderOcp, Vector, f64)> = vec![
            (
                registry::double_integrator(),
                vecn(&[0.0, 0.0, 12.0, 6.0]),
                10.0,
            ),
            (
                registry::forced_pendulum(),
                vecn(&[0.4, -0.2, 0.3, 0.1]),
                3.0,
            ),
        ];
        for (p, x0, horizon) in cases {
            let pt0 = PhasePoint::from_state(&x0, 1).unwrap();
            let (_, sol0) =
                reduced_rhs(&p, &pt0, &Vector::zeros(1), &ControlOptions::default()).unwrap();
            let h0 = eval(&p, &pt0, &sol0.u).unwrap();

            let warm = std::cell::RefCell::new(sol0.u.clone());
            let mut rhs_fn = |_t: f64, y: &Vector| -> Result<Vector> {
                let pt = PhasePoint::from_state(y, 1)?;
                let guess = warm.borrow().clone();
                let (rhs, sol) = reduced_rhs(&p, &pt, &guess, &ControlOptions::default())?;
                *warm.borrow_mut() = sol.u;
                Ok(rhs)
            };
            // The drift probe samples between integration nodes, so cap the
            // step to keep the dense interpolant as accurate as the nodes.
            let traj = integrate(
                &mut rhs_fn,
                (0.0, horizon),
                &x0,
                &IntegratorOptions::dp45(1e-10, 1e-10).with_max_step(horizon / 256.0),
            )
            .unwrap();

            let mut drift: f64 = 0.0;
            for k in 0..=200 {
                let t = horizon * k as f64 / 200.0;
                let pt = PhasePoint::from_state(&traj.eval(t), 1).unwrap();
                let (_, sol) =
                    reduced_rhs(&p, &pt, &Vector::zeros(1), &ControlOptions::default()).unwrap();
                let h = eval(&p, &pt, &sol.u).unwrap();
                drift = drift.max((h - h0).abs());
            }
            assert!(drift <= 1e-8, "{}: H drift {drift:.3e}", p.label);
        }
    }

    #[test]
    fn reduced_variational_rhs_matches_lq_matrix_action() {
        // For linear-quadratic problems the linearization coincides with the
        // system itself.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0014);
        for _ in 0..10 {
            let lq = random_lq(&mut rng, 2, 2);
            let p = lq_ocp(&lq);
            let m_ham = lq.hamiltonian_matrix();
            let state = random_vec(&mut rng, 8);
            let pt = PhasePoint::from_state(&state, 2).unwrap();
            let u = lq_stationary_control(&lq, &pt.lambda_v);
            for _ in 0..10 {
                let dstate = random_vec(&mut rng, 8);
                let dx = dstate.rows(0, 4).into_owned();
                let dl = dstate.rows(4, 4).into_owned();
                let (dxdot, dldot) = reduced_variational_rhs_at(&p, &pt, &u, &dx, &dl).unwrap();
                let expected = &m_ham * &dstate;
                assert!((&dxdot - expected.rows(0, 4).into_owned()).amax() <= 1e-12);
                assert!((&dldot - expected.rows(4, 4).into_owned()).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn reduced_variational_rhs_is_zero_on_zero_variation() {
        let p = registry::forced_pendulum();
        let pt = PhasePoint::new(vecn(&[0.4]), vecn(&[-0.2]), vecn(&[0.3]), vecn(&[0.1]));
        let (_, sol) = reduced_rhs(&p, &pt, &Vector::zeros(1), &ControlOptions::default()).unwrap();
        let (dxdot, dldot) =
            reduced_variational_rhs_at(&p, &pt, &sol.u, &Vector::zeros(2), &Vector::zeros(2))
                .unwrap();
        assert_eq!(dxdot, Vector::zeros(2));
        assert_eq!(dldot, Vector::zeros(2));
    }

    #[test]
    fn reduced_variational_rhs_matches_finite_differences_of_reduced_rhs() {
        let p = registry::forced_pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0015);
        let opts = ControlOptions::default();
        for _ in 0..20 {
            let state = random_vec(&mut rng, 4);
            let pt = PhasePoint::from_state(&state, 1).unwrap();
            let (_, sol) = reduced_rhs(&p, &pt, &Vector::zeros(1), &opts).unwrap();

            let dir = random_vec(&mut rng, 4);
            let h = 1e-6;
            let probe = |s: f64| -> Vector {
                let perturbed = &state + &dir * (s * h);
                let ppt = PhasePoint::from_state(&perturbed, 1).unwrap();
                reduced_rhs(&p, &ppt, &sol.u, &opts).unwrap().0
            };
            let fd = (probe(1.0) - probe(-1.0)) / (2.0 * h);

            let dx = dir.rows(0, 2).into_owned();
            let dl = dir.rows(2, 2).into_owned();
            let (dxdot, dldot) = reduced_variational_rhs_at(&p, &pt, &sol.u, &dx, &dl).unwrap();
            let mut lin = Vector::zeros(4);
            lin.rows_mut(0, 2).copy_from(&dxdot);
            lin.rows_mut(2, 2).copy_from(&dldot);

            let err = (&lin - &fd).amax() / (1.0 + fd.amax());
            assert!(err <= 1e-5, "linearization mismatch {err:.3e}");
        }
    }

    #[test]
    fn tulczyjew_map_matches_hand_permutation() {
        let pt = ExtendedPoint::new(vecn(&[1.0]), vecn(&[2.0]), vecn(&[3.0]), vecn(&[4.0]), vecn(&[5.0]));
        let (phase, u) = tulczyjew_map(&pt);
        assert_eq!(phase.q, vecn(&[1.0]));
        assert_eq!(phase.v, vecn(&[3.0]));
        assert_eq!(phase.lambda_q, vecn(&[4.0]));
        assert_eq!(phase.lambda_v, vecn(&[2.0]));
        assert_eq!(u, vecn(&[5.0]));
    }

    #[test]
    fn costate_identification_matches_hand_value_on_double_integrator() {
        let p = registry::double_integrator();
        let state = vecn(&[0.0, 0.0, 6.0, -12.0]);
        let pt = costate_from_lagrangian(&p, &state, &vecn(&[6.0])).unwrap();
        assert_eq!(pt.lambda_q, vecn(&[12.0]));
        assert_eq!(pt.lambda_v, vecn(&[6.0]));
        // Round trip back to the Euler–Lagrange state.
        let back = lagrangian_from_costate(&p, &pt, &vecn(&[6.0])).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn costate_identification_matches_lq_formula() {
        // λ_q = Q₂q̇ − A₂ᵀκ − κ̇ for linear-quadratic problems.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0016);
        for _ in 0..10 {
            let lq = random_lq(&mut rng, 2, 2);
            let p = lq_ocp(&lq);
            let state = random_vec(&mut rng, 8);
            let u = random_vec(&mut rng, 2);
            let pt = costate_from_lagrangian(&p, &state, &u).unwrap();
            let qd = state.rows(2, 2).into_owned();
            let k = state.rows(4, 2).into_owned();
            let kd = state.rows(6, 2).into_owned();
            let expected = &lq.q2 * &qd - lq.a2.transpose() * &k - &kd;
            assert!((&pt.lambda_q - &expected).amax() <= 1e-12);
            assert_eq!(pt.lambda_v, k);
        }
    }

    #[test]
    fn costate_identification_vanishes_without_multipliers() {
        // κ = κ̇ = 0 and a q̇-independent cost give λ = 0.
        let p = registry::double_integrator();
        let state = vecn(&[0.8, -0.4, 0.0, 0.0]);
        let pt = costate_from_lagrangian(&p, &state, &vecn(&[0.3])).unwrap();
        assert_eq!(pt.lambda_q, vecn(&[0.0]));
        assert_eq!(pt.lambda_v, vecn(&[0.0]));
    }

    #[test]
    fn el_rhs_pushes_forward_to_pmp_rhs_under_identification() {
        // Finite-difference the identification along the Euler–Lagrange flow
        // and compare with the canonical field at the identified point.  This
        // exercises the κ̈ formula against the λ̇ formulas end to end.
        let p = registry::forced_pendulum();
        let state0 = vecn(&[0.4, -0.2, 0.25, 0.15]);
        let opts = ControlOptions::default();
        let warm = std::cell::RefCell::new(Vector::zeros(1));
        let mut el_flow = |_t: f64, y: &Vector| -> Result<Vector> {
            let (q, qd, k, _) = split_state(y, 1)?;
            let guess = warm.borrow().clone();
            let sol = control::eliminate_control(&p, &q, &qd, &k, &guess, &opts)?;
            *warm.borrow_mut() = sol.u.clone();
            crate::lagrangian::el_rhs(&p, y, &sol.u)
        };
        let dt = 1e-4;
        let traj = integrate(
            &mut el_flow,
            (0.0, 2.0 * dt),
            &state0,
            &IntegratorOptions::dp45(1e-12, 1e-12),
        )
        .unwrap();

        let identify = |state: &Vector| -> PhasePoint {
            let (q, qd, k, _) = split_state(state, 1).unwrap();
            let sol = control::eliminate_control(&p, &q, &qd, &k, &Vector::zeros(1), &opts).unwrap();
            costate_from_lagrangian(&p, state, &sol.u).unwrap()
        };
        let minus = identify(&traj.eval(0.0)).to_state();
        let mid_state = traj.eval(dt);
        let plus = identify(&traj.eval(2.0 * dt)).to_state();
        let fd = (&plus - &minus) / (2.0 * dt);

        let (q, qd, k, _) = split_state(&mid_state, 1).unwrap();
        let sol = control::eliminate_control(&p, &q, &qd, &k, &Vector::zeros(1), &opts).unwrap();
        let mid = costate_from_lagrangian(&p, &mid_state, &sol.u).unwrap();
        let rhs = pmp_rhs(&p, &mid, &sol.u).unwrap();
        assert!(
            (&fd - &rhs).amax() <= 1e-7,
            "pushforward mismatch {:.3e}",
            (&fd - &rhs).amax()
        );
    }

    #[test]
    fn abnormal_multiplier_is_fixed_to_minus_one() {
        assert_eq!(AbnormalMultiplier::NORMAL.value(), -1.0);
        assert_eq!(AbnormalMultiplier::default(), AbnormalMultiplier::NORMAL);
    }

    proptest! {
        #[test]
        fn tulczyjew_round_trips_are_exact(vals in prop::collection::vec(-5.0..5.0f64, 5)) {
            let pt = ExtendedPoint::new(
                vecn(&[vals[0]]),
                vecn(&[vals[1]]),
                vecn(&[vals[2]]),
                vecn(&[vals[3]]),
                vecn(&[vals[4]]),
            );
            let (phase, u) = tulczyjew_map(&pt);
            let back = tulczyjew_inverse(&phase, &u);
            prop_assert_eq!(back, pt.clone());
            // And the other composition order.
            let (phase2, u2) = tulczyjew_map(&tulczyjew_inverse(&phase, &u));
            prop_assert_eq!(phase2, phase);
            prop_assert_eq!(u2, u);
        }
    }

    /// The extremal-sampling wrapper must agree with the pointwise
    /// variational coefficients at the identified phase point, and reject
    /// times outside the horizon.
    #[test]
    fn variational_wrapper_samples_the_extremal() {
        use crate::shooting::{solve, ShootingOptions};

        let p = registry::forced_pendulum();
        let extremal = solve(&p, &Vector::zeros(2), &ShootingOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0017);
        for &t in &[0.0, 0.7, 1.9] {
            let dx = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let dl = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let (dxd, dld) = reduced_variational_rhs(&extremal, t, &dx, &dl).unwrap();

            let state = extremal.state_at(t);
            let u = extremal.control_at(t).unwrap();
            let pt = costate_from_lagrangian(&p, &state, &u).unwrap();
            let (dxd_ref, dld_ref) = reduced_variational_rhs_at(&p, &pt, &u, &dx, &dl).unwrap();
            assert_eq!(dxd, dxd_ref);
            assert_eq!(dld, dld_ref);
        }

        let dx = Vector::zeros(2);
        let err = reduced_variational_rhs(&extremal, 2.5, &dx, &dx).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
