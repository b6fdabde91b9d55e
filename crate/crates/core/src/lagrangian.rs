//! The control Lagrangian on the extended space and its Euler–Lagrange flow.
//!
//! The indirect method used here rewrites the fixed-endpoint problem
//!
//! ```text
//! minimize   J = ∫ C(q, q̇, u) dt      subject to   q̈ = f(q, q̇, u)
//! ```
//!
//! as an unconstrained second-order variational problem on the doubled base
//! `y = (q, κ)`, where `κ` is a multiplier path enforcing the dynamics.  With
//! velocities `ẏ = (v_q, v_κ)` the control Lagrangian reads
//!
//! ```text
//! L(y, ẏ, u) = v_κ·v_q + κ·f(q, v_q, u) − C(q, v_q, u).
//! ```
//!
//! Its Euler–Lagrange equations in the `κ` slot reproduce the dynamics
//! `q̈ = f`, while the `q` slot propagates the multiplier; stationarity in `u`
//! recovers the pointwise control optimality condition.  The module provides
//! the Lagrangian itself, its conserved energy, the Euler–Lagrange vector
//! field in companion form, and the second-derivative blocks used by the
//! Legendre test and the Jacobi (conjugate-point) equations.
//!
//! States of the flow are stacked as `(q, q̇, κ, κ̇) ∈ ℝ^{4nq}` throughout.

use crate::problem::{PointDerivs, SecondOrderOcp};
use crate::{Error, Matrix, Result, Vector};

/// A point of the extended space carrying base `(q, κ)`, velocity
/// `(v_q, v_κ)`, and control `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedPoint {
    pub q: Vector,
    pub kappa: Vector,
    pub v_q: Vector,
    pub v_kappa: Vector,
    pub u: Vector,
}

impl ExtendedPoint {
    pub fn new(q: Vector, kappa: Vector, v_q: Vector, v_kappa: Vector, u: Vector) -> Self {
        ExtendedPoint {
            q,
            kappa,
            v_q,
            v_kappa,
            u,
        }
    }

    fn check(&self, p: &SecondOrderOcp) -> Result<()> {
        let nq = p.dims.nq;
        let m = p.dims.m;
        if self.q.len() != nq
            || self.kappa.len() != nq
            || self.v_q.len() != nq
            || self.v_kappa.len() != nq
            || self.u.len() != m
        {
            return Err(Error::InvalidArgument(format!(
                "extended point has shapes (q:{}, κ:{}, v_q:{}, v_κ:{}, u:{}), expected nq={nq}, m={m}",
                self.q.len(),
                self.kappa.len(),
                self.v_q.len(),
                self.v_kappa.len(),
                self.u.len(),
            )));
        }
        Ok(())
    }
}

/// Splits a stacked flow state `(q, q̇, κ, κ̇)` into its four blocks.
pub(crate) fn split_state(state: &Vector, nq: usize) -> Result<(Vector, Vector, Vector, Vector)> {
    if state.len() != 4 * nq {
        return Err(Error::InvalidArgument(format!(
            "flow state has length {}, expected 4nq = {}",
            state.len(),
            4 * nq
        )));
    }
    Ok((
        state.rows(0, nq).into_owned(),
        state.rows(nq, nq).into_owned(),
        state.rows(2 * nq, nq).into_owned(),
        state.rows(3 * nq, nq).into_owned(),
    ))
}

/// Evaluates the control Lagrangian `L = v_κ·v_q + κ·f(q, v_q, u) − C(q, v_q, u)`.
///
/// When `κ = v_κ = 0` this reduces to `−C`.
pub fn eval(p: &SecondOrderOcp, pt: &ExtendedPoint) -> Result<f64> {
    pt.check(p)?;
    let f = p.f(&pt.q, &pt.v_q, &pt.u)?;
    let c = p.running_cost(&pt.q, &pt.v_q, &pt.u)?;
    Ok(pt.v_kappa.dot(&pt.v_q) + pt.kappa.dot(&f) - c)
}

/// Energy of the control Lagrangian along a flow state `(q, q̇, κ, κ̇)`:
///
/// ```text
/// E = L − ⟨∂L/∂ẏ, ẏ⟩ = κ·f − C − κ̇·q̇ − q̇·(f_q̇ᵀκ − C_q̇),
/// ```
///
/// oriented so that it coincides with the Pontryagin Hamiltonian under the
/// costate identification.  `E` is constant along Euler–Lagrange flow with
/// stationary control.
pub fn energy(p: &SecondOrderOcp, state: &Vector, u: &Vector) -> Result<f64> {
    let (q, qd, k, kd) = split_state(state, p.dims.nq)?;
    p.check_point(&q, &qd, u)?;
    let f = p.f(&q, &qd, u)?;
    let c = p.running_cost(&q, &qd, u)?;
    let f_v = p.dynamics.jacobian(crate::problem::Var::V, &q, &qd, u);
    let c_v = p.cost.gradient(crate::problem::Var::V, &q, &qd, u);
    let dl_dvq = f_v.transpose() * &k - c_v;
    Ok(k.dot(&f) - c - kd.dot(&qd) - qd.dot(&dl_dvq))
}

/// Euler–Lagrange vector field in companion form.
///
/// Input is the stacked state `(q, q̇, κ, κ̇)` together with the control at
/// that point; output is `(q̇, q̈, κ̇, κ̈)` where
///
/// ```text
/// q̈ = f(q, q̇, u),
/// κ̈ = f_qᵀκ − C_q + (C_qq̇ − K_qq̇)ᵀ q̇ + (C_q̇q̇ − K_q̇q̇) f + (C_q̇u − K_q̇u) u̇ − f_q̇ᵀ κ̇,
/// ```
///
/// with `K_ab` the second derivatives of `κ·f` and `u̇` obtained by
/// differentiating the stationarity condition `f_uᵀκ = C_u` along the flow:
///
/// ```text
/// u̇ = −L_uu⁻¹ [ (K_qu − C_qu)ᵀ q̇ + (K_q̇u − C_q̇u)ᵀ f + f_uᵀ κ̇ ].
/// ```
///
/// The formula treats `u` as following the stationarity manifold; callers are
/// responsible for passing a control consistent with the state (usually the
/// eliminated optimal control).  Fails with `SingularControlHessian` when
/// `L_uu = K_uu − C_uu` is singular.
pub fn el_rhs(p: &SecondOrderOcp, state: &Vector, u: &Vector) -> Result<Vector> {
    let nq = p.dims.nq;
    let (q, qd, k, kd) = split_state(state, nq)?;
    let d = p.derivs(&q, &qd, u, &k)?;

    let luu = &d.k_uu - &d.c_uu;
    let luu_lu = luu.lu();
    let r_q = (&d.k_qu - &d.c_qu).transpose() * &qd;
    let r_v = (&d.k_vu - &d.c_vu).transpose() * &d.f;
    let r_k = d.f_u.transpose() * &kd;
    let udot = -luu_lu
        .solve(&(r_q + r_v + r_k))
        .ok_or(Error::SingularControlHessian)?;

    let kdd = d.f_q.transpose() * &k - &d.c_q
        + (&d.c_qv - &d.k_qv).transpose() * &qd
        + (&d.c_vv - &d.k_vv) * &d.f
        + (&d.c_vu - &d.k_vu) * &udot
        - d.f_v.transpose() * &kd;

    let mut out = Vector::zeros(4 * nq);
    out.rows_mut(0, nq).copy_from(&qd);
    out.rows_mut(nq, nq).copy_from(&d.f);
    out.rows_mut(2 * nq, nq).copy_from(&kd);
    out.rows_mut(3 * nq, nq).copy_from(&kdd);
    Ok(out)
}

/// Second-derivative blocks of the control Lagrangian at an extended point,
/// with respect to base `y = (q, κ)`, velocity `ẏ = (v_q, v_κ)`, and control.
///
/// Each field `a_b` holds `∂²L/∂a∂b` with rows indexed by `a`.  The velocity
/// block has the fixed structure `[[K_q̇q̇ − C_q̇q̇, I], [I, 0]]`, so its
/// determinant is `±1`: the Lagrangian is nondegenerate in `ẏ` no matter how
/// degenerate the underlying cost is.
#[derive(Clone, Debug)]
pub struct ExtendedHessian {
    /// `∂²L/∂y²`, shape `2nq × 2nq`.
    pub yy: Matrix,
    /// `∂²L/∂y∂ẏ`, shape `2nq × 2nq`.
    pub y_ydot: Matrix,
    /// `∂²L/∂ẏ²`, shape `2nq × 2nq`.
    pub ydot_ydot: Matrix,
    /// `∂²L/∂y∂u`, shape `2nq × m`.
    pub y_u: Matrix,
    /// `∂²L/∂ẏ∂u`, shape `2nq × m`.
    pub ydot_u: Matrix,
    /// `∂²L/∂u²`, shape `m × m`.  Strengthened Legendre requires `−L_uu ≻ 0`.
    pub uu: Matrix,
}

fn assemble_hessian(d: &PointDerivs, nq: usize, m: usize) -> ExtendedHessian {
    let mut yy = Matrix::zeros(2 * nq, 2 * nq);
    yy.view_mut((0, 0), (nq, nq)).copy_from(&(&d.k_qq - &d.c_qq));
    yy.view_mut((0, nq), (nq, nq)).copy_from(&d.f_q.transpose());
    yy.view_mut((nq, 0), (nq, nq)).copy_from(&d.f_q);

    let mut y_ydot = Matrix::zeros(2 * nq, 2 * nq);
    y_ydot
        .view_mut((0, 0), (nq, nq))
        .copy_from(&(&d.k_qv - &d.c_qv));
    y_ydot.view_mut((nq, 0), (nq, nq)).copy_from(&d.f_v);

    let mut ydot_ydot = Matrix::zeros(2 * nq, 2 * nq);
    ydot_ydot
        .view_mut((0, 0), (nq, nq))
        .copy_from(&(&d.k_vv - &d.c_vv));
    ydot_ydot
        .view_mut((0, nq), (nq, nq))
        .copy_from(&Matrix::identity(nq, nq));
    ydot_ydot
        .view_mut((nq, 0), (nq, nq))
        .copy_from(&Matrix::identity(nq, nq));

    let mut y_u = Matrix::zeros(2 * nq, m);
    y_u.view_mut((0, 0), (nq, m)).copy_from(&(&d.k_qu - &d.c_qu));
    y_u.view_mut((nq, 0), (nq, m)).copy_from(&d.f_u);

    let mut ydot_u = Matrix::zeros(2 * nq, m);
    ydot_u
        .view_mut((0, 0), (nq, m))
        .copy_from(&(&d.k_vu - &d.c_vu));

    ExtendedHessian {
        yy,
        y_ydot,
        ydot_ydot,
        y_u,
        ydot_u,
        uu: &d.k_uu - &d.c_uu,
    }
}

/// Computes all second-derivative blocks of the control Lagrangian at a point.
///
/// Only `(q, v_q, u)` and the multiplier `κ` enter the blocks; the Lagrangian
/// is linear in `v_κ`.
pub fn hessian_blocks(p: &SecondOrderOcp, pt: &ExtendedPoint) -> Result<ExtendedHessian> {
    pt.check(p)?;
    let d = p.derivs(&pt.q, &pt.v_q, &pt.u, &pt.kappa)?;
    Ok(assemble_hessian(&d, p.dims.nq, p.dims.m))
}

/// Second-derivative blocks of the reduced Lagrangian `L*(y, ẏ) = L(y, ẏ, u*(y, ẏ))`
/// obtained by eliminating the control through its stationarity condition.
///
/// These are the Schur complements of the `uu` block:
///
/// ```text
/// L*_ab = L_ab − L_au L_uu⁻¹ L_ub,      a, b ∈ {y, ẏ}.
/// ```
#[derive(Clone, Debug)]
pub struct ReducedBlocks {
    /// `∂²L*/∂ẏ²` — the coefficient of `δÿ` in the Jacobi equation.
    pub ydot_ydot: Matrix,
    /// `∂²L*/∂ẏ∂y`, rows indexed by `ẏ`.
    pub ydot_y: Matrix,
    /// `∂²L*/∂y²`.
    pub yy: Matrix,
}

/// Computes the reduced second-derivative blocks at a flow state `(q, q̇, κ, κ̇)`
/// with eliminated control `u`.
pub fn reduced_blocks(p: &SecondOrderOcp, state: &Vector, u: &Vector) -> Result<ReducedBlocks> {
    let nq = p.dims.nq;
    let (q, qd, k, _kd) = split_state(state, nq)?;
    let d = p.derivs(&q, &qd, u, &k)?;
    let h = assemble_hessian(&d, nq, p.dims.m);

    let luu_lu = h.uu.clone().lu();
    let luu_inv_uy = luu_lu
        .solve(&h.y_u.transpose())
        .ok_or(Error::SingularControlHessian)?;
    let luu_inv_uydot = luu_lu
        .solve(&h.ydot_u.transpose())
        .ok_or(Error::SingularControlHessian)?;

    let yy = &h.yy - &h.y_u * &luu_inv_uy;
    let y_ydot = &h.y_ydot - &h.y_u * &luu_inv_uydot;
    let ydot_ydot = &h.ydot_ydot - &h.ydot_u * &luu_inv_uydot;

    Ok(ReducedBlocks {
        ydot_ydot,
        ydot_y: y_ydot.transpose(),
        yy,
    })
}

/// Right-hand side of the Jacobi equation along a solved extremal, in the
/// variables of the reduced Lagrangian.
///
/// With `P = L*_ẏẏ`, `Q = L*_ẏy`, `R = L*_yy` evaluated along the extremal,
/// the accessory equation for a variation `δy = (δq, δκ)` reads
///
/// ```text
///     d/dt (P δẏ + Q δy) = R δy + Qᵀ δẏ
/// ⇔   δÿ = P⁻¹ [ (R − Q̇) δy + (Qᵀ − Q − Ṗ) δẏ ].
/// ```
///
/// `P` is always invertible here: its off-diagonal identity blocks survive
/// the control elimination untouched. The block time derivatives `Q̇`, `Ṗ`
/// are formed by finite differences of the blocks along the extremal
/// (central where the stencil fits inside `[0, T]`, one-sided second-order
/// at the ends).
///
/// Arguments follow the `y = (q, κ)` ordering: `dy = (δq, δκ)` and
/// `dydot = (δq̇, δκ̇)`, each of length `2 nq`; the result is
/// `δÿ = (δq̈, δκ̈)`.
pub fn reduced_jacobi_rhs(
    extremal: &crate::shooting::Extremal,
    t: f64,
    dy: &Vector,
    dydot: &Vector,
) -> Result<Vector> {
    let nq = extremal.problem.dims.nq;
    if dy.len() != 2 * nq || dydot.len() != 2 * nq {
        return Err(Error::InvalidArgument(format!(
            "variation blocks must have length {}, got {} and {}",
            2 * nq,
            dy.len(),
            dydot.len()
        )));
    }
    let (a, b) = jacobi_coefficients(extremal, t)?;
    Ok(a * dy + b * dydot)
}

/// Coefficient matrices `(A, B)` of the accessory equation
/// `δÿ = A δy + B δẏ` at time `t` along the extremal, with the leading
/// `P = L*_ẏẏ` already inverted. Shared by [`reduced_jacobi_rhs`] and the
/// conjugate-time bundle propagation, which applies the same coefficients
/// to every bundle field.
pub(crate) fn jacobi_coefficients(
    extremal: &crate::shooting::Extremal,
    t: f64,
) -> Result<(Matrix, Matrix)> {
    let p = &extremal.problem;
    let horizon = extremal.horizon();
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside [0, {horizon}]"
        )));
    }
    let blocks_at = |tau: f64| -> Result<ReducedBlocks> {
        let state = extremal.state_at(tau);
        let u = extremal.control_at(tau)?;
        reduced_blocks(p, &state, &u)
    };
    let b = blocks_at(t)?;
    let h = 1e-6 * horizon.max(1.0);
    let (p_dot, q_dot) = if t - h >= 0.0 && t + h <= horizon {
        let bp = blocks_at(t + h)?;
        let bm = blocks_at(t - h)?;
        (
            (&bp.ydot_ydot - &bm.ydot_ydot) / (2.0 * h),
            (&bp.ydot_y - &bm.ydot_y) / (2.0 * h),
        )
    } else if t + 2.0 * h <= horizon {
        let b1 = blocks_at(t + h)?;
        let b2 = blocks_at(t + 2.0 * h)?;
        (
            (&b.ydot_ydot * -3.0 + &b1.ydot_ydot * 4.0 - &b2.ydot_ydot) / (2.0 * h),
            (&b.ydot_y * -3.0 + &b1.ydot_y * 4.0 - &b2.ydot_y) / (2.0 * h),
        )
    } else if t - 2.0 * h >= 0.0 {
        let b1 = blocks_at(t - h)?;
        let b2 = blocks_at(t - 2.0 * h)?;
        (
            (&b.ydot_ydot * 3.0 - &b1.ydot_ydot * 4.0 + &b2.ydot_ydot) / (2.0 * h),
            (&b.ydot_y * 3.0 - &b1.ydot_y * 4.0 + &b2.ydot_y) / (2.0 * h),
        )
    } else {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} too short to differentiate blocks in time"
        )));
    };
    let p_lu = b.ydot_ydot.clone().lu();
    let a_coeff = p_lu
        .solve(&(&b.yy - &q_dot))
        .ok_or(Error::SingularJacobian)?;
    let b_coeff = p_lu
        .solve(&(b.ydot_y.transpose() - &b.ydot_y - &p_dot))
        .ok_or(Error::SingularJacobian)?;
    Ok((a_coeff, b_coeff))
}

/// A candidate variation of an extremal: configuration, its time derivative,
/// and control perturbations as functions of time.
pub struct Variation<'a> {
    /// Configuration variation `δq(t)`, length `nq`.
    pub dq: &'a dyn Fn(f64) -> Vector,
    /// Its time derivative `δq̇(t)`.
    pub dq_dot: &'a dyn Fn(f64) -> Vector,
    /// Control variation `δu(t)`, length `m`.
    pub du: &'a dyn Fn(f64) -> Vector,
}

/// Evaluates the second variation of the cost functional along a solved
/// extremal, with the multiplier frozen at the extremal's own:
///
/// ```text
///     δ²J = −∫ ( δxᵀ L_xx δx + 2 δxᵀ L_xu δu + δuᵀ L_uu δu ) dt,
/// ```
///
/// where `x = (q, q̇)`, `L` is the control Lagrangian and its second
/// derivatives are taken at the extremal's `(q, q̇, κ, u)`. The integral is
/// a composite Simpson rule over `samples` points (forced odd and at least
/// three).
///
/// The variation must vanish at both endpoints in `δq` and `δq̇`; otherwise
/// [`Error::NonAdmissibleVariation`] is returned. The endpoint test is
/// relative to the largest sampled variation magnitude.
pub fn second_variation(
    extremal: &crate::shooting::Extremal,
    variation: &Variation,
    samples: usize,
) -> Result<f64> {
    let p = &extremal.problem;
    let nq = p.dims.nq;
    let m = p.dims.m;
    let horizon = extremal.horizon();
    let n = samples.max(3) | 1;
    let step = horizon / (n - 1) as f64;

    let mut values = Vec::with_capacity(n);
    let mut scale = 0.0_f64;
    for i in 0..n {
        let t = if i + 1 == n { horizon } else { step * i as f64 };
        let dq = (variation.dq)(t);
        let dqd = (variation.dq_dot)(t);
        let du = (variation.du)(t);
        if dq.len() != nq || dqd.len() != nq || du.len() != m {
            return Err(Error::InvalidArgument(format!(
                "variation at t = {t} has lengths ({}, {}, {}), expected ({nq}, {nq}, {m})",
                dq.len(),
                dqd.len(),
                du.len()
            )));
        }
        scale = scale
            .max(dq.amax())
            .max(dqd.amax())
            .max(du.amax());
        values.push((t, dq, dqd, du));
    }
    let tol = 1e-9 * (1.0 + scale);
    for &idx in &[0, n - 1] {
        let (t, dq, dqd, _) = &values[idx];
        let magnitude = dq.amax().max(dqd.amax());
        if magnitude > tol {
            return Err(Error::NonAdmissibleVariation { t: *t, magnitude });
        }
    }

    let mut integrand = Vec::with_capacity(n);
    for (t, dq, dqd, du) in &values {
        let state = extremal.state_at(*t);
        let u = extremal.control_at(*t)?;
        let (q, qd, k, _) = split_state(&state, nq)?;
        let d = p.derivs(&q, &qd, &u, &k)?;
        let l_qq = &d.k_qq - &d.c_qq;
        let l_qv = &d.k_qv - &d.c_qv;
        let l_vv = &d.k_vv - &d.c_vv;
        let l_qu = &d.k_qu - &d.c_qu;
        let l_vu = &d.k_vu - &d.c_vu;
        let l_uu = &d.k_uu - &d.c_uu;
        let quad = dq.dot(&(&l_qq * dq))
            + 2.0 * dq.dot(&(&l_qv * dqd))
            + dqd.dot(&(&l_vv * dqd))
            + 2.0 * dq.dot(&(&l_qu * du))
            + 2.0 * dqd.dot(&(&l_vu * du))
            + du.dot(&(&l_uu * du));
        integrand.push(-quad);
    }

    let mut acc = integrand[0] + integrand[n - 1];
    for (i, &val) in integrand.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * val } else { 2.0 * val };
    }
    Ok(acc * step / 3.0)
}
