//! Problem descriptions: a second-order controlled ODE, a running cost, and
//! fixed boundary data, with first and second derivatives available for both
//! maps (analytic where supplied, finite differences otherwise).
//!
//! Dimensions are fixed per problem: `nq` configuration variables and `m`
//! controls. Both maps take `(q, q̇, u)`; the dynamics return the
//! acceleration (length `nq`), the cost returns a single value (length 1).
//!
//! Second derivatives are only ever needed *contracted against a weight
//! vector* (a multiplier), so the interface exposes
//! `Σ_k w_k ∂²g_k/∂a∂b` directly and never materializes a rank-3 tensor.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Relative step for first-derivative fallbacks and for differentiating an
/// analytic Jacobian once more: `h_i = FD_STEP · (1 + |x_i|)`.
const FD_STEP: f64 = 1e-6;
/// Relative step for the pure-value second-difference stencil (larger because
/// the roundoff error of a second difference grows like `ε/h²`).
const SECOND_FD_STEP: f64 = 1e-4;

/// Problem dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// Number of configuration variables (so states `(q, q̇)` have length
    /// `2·nq`).
    pub nq: usize,
    /// Number of controls.
    pub m: usize,
}

/// One of the three argument slots of a problem map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    /// Configuration `q`.
    Q,
    /// Velocity `q̇`.
    V,
    /// Control `u`.
    U,
}

impl Var {
    fn index(self) -> usize {
        match self {
            Var::Q => 0,
            Var::V => 1,
            Var::U => 2,
        }
    }

    /// Short label used in derivative reports ("q", "v", "u").
    pub fn label(self) -> &'static str {
        match self {
            Var::Q => "q",
            Var::V => "v",
            Var::U => "u",
        }
    }
}

type ValueFn = Arc<dyn Fn(&Vector, &Vector, &Vector) -> Vector + Send + Sync>;
type JacFn = Arc<dyn Fn(&Vector, &Vector, &Vector) -> Matrix + Send + Sync>;
/// Contracted second derivative: `(a, b, w, q, v, u) ↦ Σ_k w_k ∂²g_k/∂a∂b`,
/// shaped `dim(a) × dim(b)`.
type HessFn = Arc<dyn Fn(Var, Var, &Vector, &Vector, &Vector, &Vector) -> Matrix + Send + Sync>;

/// How many derivative levels of a map come from user closures rather than
/// finite differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeMode {
    /// All first derivatives and the contracted second derivative are
    /// analytic.
    Analytic,
    /// Some derivative levels are analytic, the rest fall back to finite
    /// differences.
    Mixed,
    /// Value only; every derivative is a finite difference.
    FiniteDifference,
}

/// A map `g(q, q̇, u)` with value, Jacobians, and contracted second
/// derivatives.
///
/// Only the value closure is mandatory. Missing first derivatives use central
/// differences with scale-aware steps `h_i = 1e-6 · (1 + |x_i|)`; missing
/// second derivatives difference an analytic Jacobian when one is available
/// and otherwise use a four-point value stencil with a wider step.
///
/// Jacobian convention: `jacobian(a)[(k, i)] = ∂g_k/∂a_i` (shape
/// `out_dim × dim(a)`). Contracted-Hessian convention:
/// `hessian_contracted(a, b, w)[(i, j)] = Σ_k w_k ∂²g_k/∂a_i∂b_j`.
#[derive(Clone)]
pub struct DifferentiableMap {
    out_dim: usize,
    value: ValueFn,
    jac: [Option<JacFn>; 3],
    hess: Option<HessFn>,
}

impl std::fmt::Debug for DifferentiableMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DifferentiableMap")
            .field("out_dim", &self.out_dim)
            .field("mode", &self.derivative_mode())
            .finish()
    }
}

impl DifferentiableMap {
    /// A map with only a value closure; all derivatives fall back to finite
    /// differences.
    pub fn from_value<F>(out_dim: usize, value: F) -> Self
    where
        F: Fn(&Vector, &Vector, &Vector) -> Vector + Send + Sync + 'static,
    {
        DifferentiableMap {
            out_dim,
            value: Arc::new(value),
            jac: [None, None, None],
            hess: None,
        }
    }

    /// Attaches an analytic Jacobian for one argument slot.
    pub fn with_jacobian<F>(mut self, var: Var, jac: F) -> Self
    where
        F: Fn(&Vector, &Vector, &Vector) -> Matrix + Send + Sync + 'static,
    {
        self.jac[var.index()] = Some(Arc::new(jac));
        self
    }

    /// Attaches an analytic contracted second derivative covering every
    /// `(a, b)` pair.
    pub fn with_contracted_hessian<F>(mut self, hess: F) -> Self
    where
        F: Fn(Var, Var, &Vector, &Vector, &Vector, &Vector) -> Matrix + Send + Sync + 'static,
    {
        self.hess = Some(Arc::new(hess));
        self
    }

    /// Output dimension of the map.
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        let jacs = self.jac.iter().filter(|j| j.is_some()).count();
        match (jacs, self.hess.is_some()) {
            (3, true) => DerivativeMode::Analytic,
            (0, false) => DerivativeMode::FiniteDifference,
            _ => DerivativeMode::Mixed,
        }
    }

    pub fn eval(&self, q: &Vector, v: &Vector, u: &Vector) -> Vector {
        (self.value)(q, v, u)
    }

    /// `∂g/∂a`, shaped `out_dim × dim(a)`.
    pub fn jacobian(&self, a: Var, q: &Vector, v: &Vector, u: &Vector) -> Matrix {
        if let Some(jf) = &self.jac[a.index()] {
            return jf(q, v, u);
        }
        self.fd_jacobian(a, q, v, u, FD_STEP)
    }

    /// Gradient of a scalar map (`out_dim == 1`) as a column vector.
    pub fn gradient(&self, a: Var, q: &Vector, v: &Vector, u: &Vector) -> Vector {
        debug_assert_eq!(self.out_dim, 1, "gradient() requires a scalar map");
        self.jacobian(a, q, v, u).row(0).transpose()
    }

    /// `Σ_k w_k ∂²g_k/∂a_i∂b_j`, shaped `dim(a) × dim(b)`.
    pub fn hessian_contracted(
        &self,
        a: Var,
        b: Var,
        w: &Vector,
        q: &Vector,
        v: &Vector,
        u: &Vector,
    ) -> Matrix {
        if let Some(hf) = &self.hess {
            return hf(a, b, w, q, v, u);
        }
        if self.jac[b.index()].is_some() {
            return self.fd_hessian_from_jacobian(a, b, w, q, v, u);
        }
        if self.jac[a.index()].is_some() {
            // ∂²g/∂a∂b = (∂²g/∂b∂a)ᵀ for C² maps.
            return self.fd_hessian_from_jacobian(b, a, w, q, v, u).transpose();
        }
        self.fd_hessian_from_value(a, b, w, q, v, u)
    }

    fn fd_jacobian(&self, a: Var, q: &Vector, v: &Vector, u: &Vector, step: f64) -> Matrix {
        let mut point = (q.clone(), v.clone(), u.clone());
        let dim_a = var_of(&point, a).len();
        let mut out = Matrix::zeros(self.out_dim, dim_a);
        for i in 0..dim_a {
            let base = var_of(&point, a)[i];
            let h = step * (1.0 + base.abs());
            var_of_mut(&mut point, a)[i] = base + h;
            let gp = (self.value)(&point.0, &point.1, &point.2);
            var_of_mut(&mut point, a)[i] = base - h;
            let gm = (self.value)(&point.0, &point.1, &point.2);
            var_of_mut(&mut point, a)[i] = base;
            for k in 0..self.out_dim {
                out[(k, i)] = (gp[k] - gm[k]) / (2.0 * h);
            }
        }
        out
    }

    /// Central difference over `a` of the (analytic) Jacobian in `b`,
    /// contracted with `w`.
    fn fd_hessian_from_jacobian(
        &self,
        a: Var,
        b: Var,
        w: &Vector,
        q: &Vector,
        v: &Vector,
        u: &Vector,
    ) -> Matrix {
        let jb = self.jac[b.index()].as_ref().expect("caller checked");
        let mut point = (q.clone(), v.clone(), u.clone());
        let dim_a = var_of(&point, a).len();
        let dim_b = var_of(&point, b).len();
        let mut out = Matrix::zeros(dim_a, dim_b);
        for i in 0..dim_a {
            let base = var_of(&point, a)[i];
            let h = FD_STEP * (1.0 + base.abs());
            var_of_mut(&mut point, a)[i] = base + h;
            let jp = jb(&point.0, &point.1, &point.2);
            var_of_mut(&mut point, a)[i] = base - h;
            let jm = jb(&point.0, &point.1, &point.2);
            var_of_mut(&mut point, a)[i] = base;
            for j in 0..dim_b {
                let mut acc = 0.0;
                for k in 0..self.out_dim {
                    acc += w[k] * (jp[(k, j)] - jm[(k, j)]) / (2.0 * h);
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// Four-point second-difference stencil on the raw values (used only when
    /// no analytic Jacobian exists on either side). Handles `a == b`
    /// naturally: the perturbations are applied cumulatively.
    fn fd_hessian_from_value(
        &self,
        a: Var,
        b: Var,
        w: &Vector,
        q: &Vector,
        v: &Vector,
        u: &Vector,
    ) -> Matrix {
        let point = (q.clone(), v.clone(), u.clone());
        let dim_a = var_of(&point, a).len();
        let dim_b = var_of(&point, b).len();
        let mut out = Matrix::zeros(dim_a, dim_b);
        for i in 0..dim_a {
            let ha = SECOND_FD_STEP * (1.0 + var_of(&point, a)[i].abs());
            for j in 0..dim_b {
                let hb = SECOND_FD_STEP * (1.0 + var_of(&point, b)[j].abs());
                let mut acc = 0.0;
                for (sa, sb, coeff) in [
                    (1.0, 1.0, 1.0),
                    (1.0, -1.0, -1.0),
                    (-1.0, 1.0, -1.0),
                    (-1.0, -1.0, 1.0),
                ] {
                    let mut p = point.clone();
                    var_of_mut(&mut p, a)[i] += sa * ha;
                    var_of_mut(&mut p, b)[j] += sb * hb;
                    let g = (self.value)(&p.0, &p.1, &p.2);
                    for k in 0..self.out_dim {
                        acc += coeff * w[k] * g[k];
                    }
                }
                out[(i, j)] = acc / (4.0 * ha * hb);
            }
        }
        out
    }
}

fn var_of(point: &(Vector, Vector, Vector), a: Var) -> &Vector {
    match a {
        Var::Q => &point.0,
        Var::V => &point.1,
        Var::U => &point.2,
    }
}

fn var_of_mut(point: &mut (Vector, Vector, Vector), a: Var) -> &mut Vector {
    match a {
        Var::Q => &mut point.0,
        Var::V => &mut point.1,
        Var::U => &mut point.2,
    }
}

/// Fixed-endpoint boundary data and the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub q0: Vector,
    pub v0: Vector,
    pub q_end: Vector,
    pub v_end: Vector,
    /// Final time `T > 0` (trajectories run on `[0, T]`).
    pub horizon: f64,
}

impl BoundaryData {
    /// Rest-to-rest boundary data between two configurations.
    pub fn rest_to_rest(q0: Vector, q_end: Vector, horizon: f64) -> Self {
        let n = q0.len();
        BoundaryData {
            q0,
            v0: Vector::zeros(n),
            q_end,
            v_end: Vector::zeros(n),
            horizon,
        }
    }
}

/// A fixed-endpoint optimal control problem for a second-order system:
/// minimize `∫₀ᵀ C(q, q̇, u) dt` subject to `q̈ = f(q, q̇, u)` and the
/// boundary data.
#[derive(Clone, Debug)]
pub struct SecondOrderOcp {
    pub label: String,
    pub dims: Dims,
    /// Acceleration map `f(q, q̇, u)`, output length `nq`.
    pub dynamics: DifferentiableMap,
    /// Running cost `C(q, q̇, u)`, output length 1.
    pub cost: DifferentiableMap,
    pub boundary: BoundaryData,
}

impl SecondOrderOcp {
    /// Validates dimensions (including probing both maps once at the initial
    /// boundary point) and assembles the problem.
    pub fn new(
        label: impl Into<String>,
        dims: Dims,
        dynamics: DifferentiableMap,
        cost: DifferentiableMap,
        boundary: BoundaryData,
    ) -> Result<Self> {
        if dims.nq == 0 || dims.m == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got nq={}, m={}",
                dims.nq, dims.m
            )));
        }
        if dynamics.out_dim() != dims.nq {
            return Err(Error::InvalidArgument(format!(
                "dynamics output length {} does not match nq={}",
                dynamics.out_dim(),
                dims.nq
            )));
        }
        if cost.out_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "cost output length {} must be 1",
                cost.out_dim()
            )));
        }
        for (name, vec) in [
            ("q0", &boundary.q0),
            ("v0", &boundary.v0),
            ("q_end", &boundary.q_end),
            ("v_end", &boundary.v_end),
        ] {
            if vec.len() != dims.nq {
                return Err(Error::InvalidArgument(format!(
                    "boundary vector {name} has length {}, expected nq={}",
                    vec.len(),
                    dims.nq
                )));
            }
        }
        if !(boundary.horizon > 0.0) || !boundary.horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {}",
                boundary.horizon
            )));
        }
        let probe_u = Vector::zeros(dims.m);
        let f0 = dynamics.eval(&boundary.q0, &boundary.v0, &probe_u);
        if f0.len() != dims.nq {
            return Err(Error::InvalidArgument(format!(
                "dynamics returned length {} at the initial point, expected {}",
                f0.len(),
                dims.nq
            )));
        }
        let c0 = cost.eval(&boundary.q0, &boundary.v0, &probe_u);
        if c0.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "cost returned length {} at the initial point, expected 1",
                c0.len()
            )));
        }
        Ok(SecondOrderOcp {
            label: label.into(),
            dims,
            dynamics,
            cost,
            boundary,
        })
    }

    pub(crate) fn check_point(&self, q: &Vector, v: &Vector, u: &Vector) -> Result<()> {
        if q.len() != self.dims.nq || v.len() != self.dims.nq || u.len() != self.dims.m {
            return Err(Error::InvalidArgument(format!(
                "point dims (|q|={}, |v|={}, |u|={}) do not match problem (nq={}, m={})",
                q.len(),
                v.len(),
                u.len(),
                self.dims.nq,
                self.dims.m
            )));
        }
        Ok(())
    }

    /// Acceleration `f(q, q̇, u)`.
    pub fn f(&self, q: &Vector, v: &Vector, u: &Vector) -> Result<Vector> {
        self.check_point(q, v, u)?;
        Ok(self.dynamics.eval(q, v, u))
    }

    /// Running cost `C(q, q̇, u)`.
    pub fn running_cost(&self, q: &Vector, v: &Vector, u: &Vector) -> Result<f64> {
        self.check_point(q, v, u)?;
        Ok(self.cost.eval(q, v, u)[0])
    }

    /// Evaluates every first derivative, the cost's second derivatives, and
    /// the dynamics' second derivatives contracted against the multiplier
    /// `w` (length `nq`), all at one point. This bundle is what the
    /// Lagrangian and Hamiltonian block assemblies consume.
    pub fn derivs(&self, q: &Vector, v: &Vector, u: &Vector, w: &Vector) -> Result<PointDerivs> {
        self.check_point(q, v, u)?;
        if w.len() != self.dims.nq {
            return Err(Error::InvalidArgument(format!(
                "contraction weight has length {}, expected nq={}",
                w.len(),
                self.dims.nq
            )));
        }
        let one = Vector::from_element(1, 1.0);
        let d = &self.dynamics;
        let c = &self.cost;
        Ok(PointDerivs {
            f: d.eval(q, v, u),
            c: c.eval(q, v, u)[0],
            f_q: d.jacobian(Var::Q, q, v, u),
            f_v: d.jacobian(Var::V, q, v, u),
            f_u: d.jacobian(Var::U, q, v, u),
            c_q: c.gradient(Var::Q, q, v, u),
            c_v: c.gradient(Var::V, q, v, u),
            c_u: c.gradient(Var::U, q, v, u),
            c_qq: c.hessian_contracted(Var::Q, Var::Q, &one, q, v, u),
            c_qv: c.hessian_contracted(Var::Q, Var::V, &one, q, v, u),
            c_qu: c.hessian_contracted(Var::Q, Var::U, &one, q, v, u),
            c_vv: c.hessian_contracted(Var::V, Var::V, &one, q, v, u),
            c_vu: c.hessian_contracted(Var::V, Var::U, &one, q, v, u),
            c_uu: c.hessian_contracted(Var::U, Var::U, &one, q, v, u),
            k_qq: d.hessian_contracted(Var::Q, Var::Q, w, q, v, u),
            k_qv: d.hessian_contracted(Var::Q, Var::V, w, q, v, u),
            k_qu: d.hessian_contracted(Var::Q, Var::U, w, q, v, u),
            k_vv: d.hessian_contracted(Var::V, Var::V, w, q, v, u),
            k_vu: d.hessian_contracted(Var::V, Var::U, w, q, v, u),
            k_uu: d.hessian_contracted(Var::U, Var::U, w, q, v, u),
        })
    }

    /// Compares the maps' reported derivatives against fresh central
    /// differences with relative step `h` at one point. See
    /// [`DerivativeReport`] for the error metric.
    pub fn check_derivatives(
        &self,
        q: &Vector,
        v: &Vector,
        u: &Vector,
        h: f64,
    ) -> Result<DerivativeReport> {
        self.check_point(q, v, u)?;
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "FD check step must be positive, got {h}"
            )));
        }
        let mut entries = Vec::new();

        // Deterministic, non-degenerate contraction weight for the dynamics.
        let w_dyn = Vector::from_iterator(
            self.dims.nq,
            (0..self.dims.nq).map(|k| 1.0 / (k + 1) as f64),
        );
        let one = Vector::from_element(1, 1.0);

        for (tag, map, w) in [
            ("f", &self.dynamics, &w_dyn),
            ("C", &self.cost, &one),
        ] {
            for a in [Var::Q, Var::V, Var::U] {
                let reported = map.jacobian(a, q, v, u);
                let reference = map.fd_jacobian(a, q, v, u, h);
                entries.push(BlockError {
                    block: format!("{tag}_{}", a.label()),
                    error: relative_block_error(&reported, &reference),
                });
            }
            for (a, b) in [
                (Var::Q, Var::Q),
                (Var::Q, Var::V),
                (Var::Q, Var::U),
                (Var::V, Var::V),
                (Var::V, Var::U),
                (Var::U, Var::U),
            ] {
                let reported = map.hessian_contracted(a, b, w, q, v, u);
                let reference = fd_contracted_reference(map, a, b, w, q, v, u, h);
                entries.push(BlockError {
                    block: format!("{tag}_{}{}", a.label(), b.label()),
                    error: relative_block_error(&reported, &reference),
                });
            }
        }

        let max_error = entries.iter().fold(0.0_f64, |m, e| m.max(e.error));
        Ok(DerivativeReport { entries, max_error })
    }
}

/// Central difference over `a` (step `h`, scale-aware) of `map.jacobian(b)`,
/// contracted with `w` — the reference for second-derivative checks.
fn fd_contracted_reference(
    map: &DifferentiableMap,
    a: Var,
    b: Var,
    w: &Vector,
    q: &Vector,
    v: &Vector,
    u: &Vector,
    h: f64,
) -> Matrix {
    let mut point = (q.clone(), v.clone(), u.clone());
    let dim_a = var_of(&point, a).len();
    let dim_b = var_of(&point, b).len();
    let mut out = Matrix::zeros(dim_a, dim_b);
    for i in 0..dim_a {
        let base = var_of(&point, a)[i];
        let hi = h * (1.0 + base.abs());
        var_of_mut(&mut point, a)[i] = base + hi;
        let jp = map.jacobian(b, &point.0, &point.1, &point.2);
        var_of_mut(&mut point, a)[i] = base - hi;
        let jm = map.jacobian(b, &point.0, &point.1, &point.2);
        var_of_mut(&mut point, a)[i] = base;
        for j in 0..dim_b {
            let mut acc = 0.0;
            for k in 0..map.out_dim() {
                acc += w[k] * (jp[(k, j)] - jm[(k, j)]) / (2.0 * hi);
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// `max_ij |reported - reference| / max(1, max_ij |reference|)` — a relative
/// error that degrades gracefully for near-zero blocks (an all-zero block
/// matched exactly reports 0, a factor-2 bug on an O(1) block reports ≈ 1).
fn relative_block_error(reported: &Matrix, reference: &Matrix) -> f64 {
    let diff = (reported - reference).abs().max();
    let scale = reference.abs().max().max(1.0);
    diff / scale
}

/// All derivative data of a problem at one point `(q, v, u)`, with the
/// dynamics' second derivatives contracted against a multiplier `w`.
///
/// Conventions: `f_a[(k, i)] = ∂f_k/∂a_i`; gradients `c_a` are column
/// vectors; `c_ab[(i, j)] = ∂²C/∂a_i∂b_j`; and
/// `k_ab[(i, j)] = Σ_k w_k ∂²f_k/∂a_i∂b_j`. Blocks for the transposed pairs
/// (`vq`, `uq`, `uv`) are the transposes of the stored ones.
#[derive(Clone, Debug)]
pub struct PointDerivs {
    pub f: Vector,
    pub c: f64,
    pub f_q: Matrix,
    pub f_v: Matrix,
    pub f_u: Matrix,
    pub c_q: Vector,
    pub c_v: Vector,
    pub c_u: Vector,
    pub c_qq: Matrix,
    pub c_qv: Matrix,
    pub c_qu: Matrix,
    pub c_vv: Matrix,
    pub c_vu: Matrix,
    pub c_uu: Matrix,
    pub k_qq: Matrix,
    pub k_qv: Matrix,
    pub k_qu: Matrix,
    pub k_vv: Matrix,
    pub k_vu: Matrix,
    pub k_uu: Matrix,
}

/// Per-block outcome of [`SecondOrderOcp::check_derivatives`].
#[derive(Clone, Debug)]
pub struct BlockError {
    /// Block name, e.g. `"f_q"` (Jacobian) or `"C_vu"` (second derivative).
    pub block: String,
    /// Relative error against the finite-difference reference.
    pub error: f64,
}

/// Outcome of [`SecondOrderOcp::check_derivatives`]: one entry per derivative
/// block of both maps. The error metric is
/// `max|reported − fd| / max(1, max|fd|)`, so a block that is off by a factor
/// of two reports an error near 1 rather than a tiny absolute number.
#[derive(Clone, Debug)]
pub struct DerivativeReport {
    pub entries: Vec<BlockError>,
    pub max_error: f64,
}

impl DerivativeReport {
    /// The worst block, if any.
    pub fn worst(&self) -> Option<&BlockError> {
        self.entries
            .iter()
            .max_by(|a, b| a.error.total_cmp(&b.error))
    }
}
