//! Shared numerical kernels: explicit Runge–Kutta integration with cubic
//! Hermite dense output, sign-change scanning and bisection, and a damped
//! Newton solver.
//!
//! Everything in this module is deterministic — fixed evaluation order, no
//! randomness, no threading — so repeated runs over the same inputs produce
//! bit-identical results. Right-hand sides and residual maps are fallible
//! (`Result`-returning closures); their errors propagate out unchanged.

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Signature of an ODE right-hand side `ẏ = g(t, y)`.
pub type OdeRhs<'a> = dyn FnMut(f64, &Vector) -> Result<Vector> + 'a;

// ---------------------------------------------------------------------------
// Integrator configuration
// ---------------------------------------------------------------------------

/// Which Runge–Kutta scheme [`integrate`] runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Classic fourth-order Runge–Kutta with fixed step `h` (the actual step
    /// is `span / ceil(span / h)` so the grid lands exactly on the end
    /// point).
    Rk4 { h: f64 },
    /// Dormand–Prince 5(4) embedded pair with proportional step control. A
    /// step is accepted when the embedded error estimate `e` satisfies
    /// `|e_i| ≤ atol + rtol · |y_i|` in the scaled RMS sense.
    Dp45 { atol: f64, rtol: f64 },
}

/// Options for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions {
    pub method: Method,
    /// Hard cap on accepted + rejected steps.
    pub max_steps: usize,
    /// Upper bound on the adaptive step size (ignored by fixed-step RK4).
    ///
    /// The dense-output interpolant is a cubic, so its error between nodes is
    /// O(h⁴) even when the integrator's per-step error is O(h⁵).  Capping the
    /// step keeps interpolated values between nodes as trustworthy as the
    /// nodes themselves, which matters wherever a trajectory is resampled on
    /// a fine grid.
    pub max_step: f64,
}

impl Default for IntegratorOptions {
    /// Adaptive DP45 at `atol = rtol = 1e-10`.
    fn default() -> Self {
        IntegratorOptions::dp45(1e-10, 1e-10)
    }
}

impl IntegratorOptions {
    pub fn dp45(atol: f64, rtol: f64) -> Self {
        IntegratorOptions {
            method: Method::Dp45 { atol, rtol },
            max_steps: 1_000_000,
            max_step: f64::INFINITY,
        }
    }

    pub fn rk4(h: f64) -> Self {
        IntegratorOptions {
            method: Method::Rk4 { h },
            max_steps: 1_000_000,
            max_step: f64::INFINITY,
        }
    }

    /// Returns the options with the adaptive step capped at `h`.
    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }
}

// ---------------------------------------------------------------------------
// Dense trajectories
// ---------------------------------------------------------------------------

/// A time grid with states and right-hand-side values at every node, queryable
/// anywhere on its span through the piecewise cubic Hermite interpolant.
///
/// At the nodes the interpolant reproduces the stored states exactly; between
/// nodes it is the unique cubic matching the states *and* derivatives at both
/// ends of the bracketing interval, which keeps the interpolation error of the
/// same order as the integrator's local error.
#[derive(Clone, Debug)]
pub struct DenseTrajectory {
    ts: Vec<f64>,
    ys: Vec<Vector>,
    dys: Vec<Vector>,
}

impl DenseTrajectory {
    /// Builds a trajectory from raw node data. The grid must be strictly
    /// increasing with at least two nodes, and the three slices must agree in
    /// length (and the vectors in dimension).
    pub fn from_nodes(ts: Vec<f64>, ys: Vec<Vector>, dys: Vec<Vector>) -> Result<Self> {
        if ts.len() < 2 || ts.len() != ys.len() || ts.len() != dys.len() {
            return Err(Error::InvalidArgument(format!(
                "node count mismatch: {} times, {} states, {} derivatives",
                ts.len(),
                ys.len(),
                dys.len()
            )));
        }
        if !ts.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "time grid is not strictly increasing".into(),
            ));
        }
        let dim = ys[0].len();
        if ys.iter().any(|y| y.len() != dim) || dys.iter().any(|d| d.len() != dim) {
            return Err(Error::InvalidArgument(
                "inconsistent state dimensions across nodes".into(),
            ));
        }
        Ok(DenseTrajectory { ts, ys, dys })
    }

    pub fn t0(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.ys[0].len()
    }

    pub fn times(&self) -> &[f64] {
        &self.ts
    }

    pub fn states(&self) -> &[Vector] {
        &self.ys
    }

    pub fn derivatives(&self) -> &[Vector] {
        &self.dys
    }

    /// Index of the node interval `[t_i, t_{i+1}]` containing `t` (clamped to
    /// the first/last interval outside the span).
    fn interval_of(&self, t: f64) -> usize {
        let n = self.ts.len();
        // Number of grid points strictly below t, minus one, clamped.
        let idx = self.ts.partition_point(|&tk| tk <= t);
        idx.saturating_sub(1).min(n - 2)
    }

    /// Evaluates the interpolant at `t`. Queries are clamped to the stored
    /// span, and node queries return the stored states exactly.
    pub fn eval(&self, t: f64) -> Vector {
        let i = self.interval_of(t);
        let (t0, t1) = (self.ts[i], self.ts[i + 1]);
        if t == t0 {
            return self.ys[i].clone();
        }
        if t == t1 {
            return self.ys[i + 1].clone();
        }
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        // Standard cubic Hermite basis on [0, 1].
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let mut out = &self.ys[i] * h00;
        out.axpy(h10 * h, &self.dys[i], 1.0);
        out.axpy(h01, &self.ys[i + 1], 1.0);
        out.axpy(h11 * h, &self.dys[i + 1], 1.0);
        out
    }

    /// Final state (exact node value, no interpolation).
    pub fn end_state(&self) -> &Vector {
        self.ys.last().unwrap()
    }
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

fn check_finite(y: &Vector, t: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

/// Integrates `ẏ = rhs(t, y)` forward over `t_span = (t0, t1)`, `t1 > t0`,
/// returning the full dense trajectory.
pub fn integrate(
    rhs: &mut OdeRhs,
    t_span: (f64, f64),
    y0: &Vector,
    opts: &IntegratorOptions,
) -> Result<DenseTrajectory> {
    let (t0, t1) = t_span;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "integration span ({t0}, {t1}) must be finite and increasing"
        )));
    }
    check_finite(y0, t0)?;
    match opts.method {
        Method::Rk4 { h } => rk4_fixed(rhs, t0, t1, y0, h, opts.max_steps),
        Method::Dp45 { atol, rtol } => {
            dp45(rhs, t0, t1, y0, atol, rtol, opts.max_steps, opts.max_step)
        }
    }
}

fn rk4_fixed(
    rhs: &mut OdeRhs,
    t0: f64,
    t1: f64,
    y0: &Vector,
    h_req: f64,
    max_steps: usize,
) -> Result<DenseTrajectory> {
    if !(h_req > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "RK4 step must be positive, got {h_req}"
        )));
    }
    let span = t1 - t0;
    let n = ((span / h_req).ceil() as usize).max(1);
    if n > max_steps {
        return Err(Error::TooManySteps {
            t: t0,
            max_steps,
        });
    }
    let h = span / n as f64;

    let mut ts = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    let mut dys = Vec::with_capacity(n + 1);

    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = rhs(t, &y)?;
    for step in 0..n {
        ts.push(t);
        ys.push(y.clone());
        dys.push(k1.clone());

        let half = 0.5 * h;
        let k2 = rhs(t + half, &(&y + &k1 * half))?;
        let k3 = rhs(t + half, &(&y + &k2 * half))?;
        let k4 = rhs(t + h, &(&y + &k3 * h))?;
        let mut incr = k1.clone();
        incr.axpy(2.0, &k2, 1.0);
        incr.axpy(2.0, &k3, 1.0);
        incr.axpy(1.0, &k4, 1.0);
        y.axpy(h / 6.0, &incr, 1.0);
        // Land exactly on t1 at the last step.
        t = if step + 1 == n {
            t1
        } else {
            t0 + (step + 1) as f64 * h
        };
        check_finite(&y, t)?;
        k1 = rhs(t, &y)?;
    }
    ts.push(t1);
    ys.push(y);
    dys.push(k1);
    DenseTrajectory::from_nodes(ts, ys, dys)
}

/// Dormand–Prince 5(4) Butcher tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (identical to the last row of `DP_A`: FSAL).
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Embedded fourth-order weights.
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dp45(
    rhs: &mut OdeRhs,
    t0: f64,
    t1: f64,
    y0: &Vector,
    atol: f64,
    rtol: f64,
    max_steps: usize,
    max_step: f64,
) -> Result<DenseTrajectory> {
    if !(atol > 0.0) || !(rtol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "DP45 tolerances must be positive, got atol={atol}, rtol={rtol}"
        )));
    }
    if !(max_step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_step must be positive, got {max_step}"
        )));
    }
    let span = t1 - t0;
    let dim = y0.len();

    let mut ts = vec![t0];
    let mut ys = vec![y0.clone()];
    let mut k1 = rhs(t0, y0)?;
    let mut dys = vec![k1.clone()];

    // Conservative initial step from the magnitude of the first derivative;
    // the controller corrects it within a few steps either way.
    let f_scale = 1.0 + k1.norm();
    let y_scale = 1.0 + y0.norm();
    let mut h = (0.01 * y_scale / f_scale)
        .clamp(1e-8 * span, span / 10.0)
        .min(max_step);

    let mut t = t0;
    let mut y = y0.clone();
    let mut k = vec![Vector::zeros(dim); 7];
    let min_h = 1e-13 * span;

    for _step in 0..max_steps {
        if t >= t1 {
            return DenseTrajectory::from_nodes(ts, ys, dys);
        }
        let last = h >= t1 - t;
        if last {
            h = t1 - t;
        }

        k[0] = k1.clone();
        for i in 1..7 {
            let mut stage = y.clone();
            for (j, a) in DP_A[i - 1].iter().enumerate().take(i) {
                if *a != 0.0 {
                    stage.axpy(h * a, &k[j], 1.0);
                }
            }
            k[i] = rhs(t + DP_C[i] * h, &stage)?;
        }
        // Fifth-order solution and embedded error estimate.
        let mut y_new = y.clone();
        let mut err = Vector::zeros(dim);
        for i in 0..7 {
            if DP_B5[i] != 0.0 {
                y_new.axpy(h * DP_B5[i], &k[i], 1.0);
            }
            let db = DP_B5[i] - DP_B4[i];
            if db != 0.0 {
                err.axpy(h * db, &k[i], 1.0);
            }
        }

        let mut sum = 0.0;
        for i in 0..dim {
            let scale = atol + rtol * y[i].abs().max(y_new[i].abs());
            let r = err[i] / scale;
            sum += r * r;
        }
        let err_norm = (sum / dim as f64).sqrt();

        if err_norm <= 1.0 {
            // Accept. k[6] = rhs(t+h, y_new) is the next step's first stage.
            t = if last { t1 } else { t + h };
            check_finite(&y_new, t)?;
            y = y_new;
            k1 = k[6].clone();
            ts.push(t);
            ys.push(y.clone());
            dys.push(k1.clone());
        }

        let factor = if err_norm == 0.0 {
            5.0
        } else {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(max_step);
        if h < min_h && t < t1 {
            return Err(Error::StepSizeUnderflow { t });
        }
        if !h.is_finite() {
            return Err(Error::NonFiniteState { t });
        }
    }
    if t >= t1 {
        return DenseTrajectory::from_nodes(ts, ys, dys);
    }
    Err(Error::TooManySteps { t, max_steps })
}

// ---------------------------------------------------------------------------
// Scalar root location
// ---------------------------------------------------------------------------

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Scans `g` at `n_scan + 1` uniformly spaced points over `[a, b]` and returns
/// the first subinterval across which `g` changes sign, or `None` if no sign
/// change is seen on the grid.
///
/// An exact zero at a grid point counts as part of whichever crossing it
/// belongs to: the bracket runs from the last point with a definite sign to
/// the first later point with the opposite sign. A zero value whose neighbors
/// share one sign (a touching zero) is *not* reported as a sign change.
pub fn find_sign_change(
    g: &mut dyn FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    n_scan: usize,
) -> Result<Option<(f64, f64)>> {
    if !(b > a) || n_scan < 1 {
        return Err(Error::InvalidArgument(format!(
            "scan interval ({a}, {b}) with {n_scan} subintervals is malformed"
        )));
    }
    let mut last_t = a;
    let mut last_sign = sign_of(g(a)?);
    for i in 1..=n_scan {
        let t = if i == n_scan {
            b
        } else {
            a + (b - a) * i as f64 / n_scan as f64
        };
        let s = sign_of(g(t)?);
        if s != 0 {
            if last_sign != 0 && s != last_sign {
                return Ok(Some((last_t, t)));
            }
            last_sign = s;
            last_t = t;
        }
        // s == 0: keep the previous definite sign and its location.
    }
    Ok(None)
}

/// Bisects a sign change of `g` inside `[a, b]` down to an interval of width
/// `tol_t` and returns its midpoint. The endpoint values must straddle zero.
pub fn bisect(
    g: &mut dyn FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    tol_t: f64,
) -> Result<f64> {
    if !(b > a) || !(tol_t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bisection interval ({a}, {b}) with tolerance {tol_t} is malformed"
        )));
    }
    let (mut lo, mut hi) = (a, b);
    let mut g_lo = g(lo)?;
    let g_hi = g(hi)?;
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if sign_of(g_lo) == sign_of(g_hi) {
        return Err(Error::InvalidBracket { a, b });
    }
    // Width halves each round; 200 rounds bottom out far below any tolerance
    // representable at f64 spacing.
    for _ in 0..200 {
        if hi - lo <= tol_t {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // interval is at floating-point resolution
        }
        let g_mid = g(mid)?;
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if sign_of(g_mid) == sign_of(g_lo) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Damped Newton
// ---------------------------------------------------------------------------

/// Options for [`newton_solve`].
#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    /// Convergence target on the residual infinity norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative step for the internal finite-difference Jacobian: column `i`
    /// uses `h_i = fd_step · (1 + |x_i|)` (central differences). Ignored when
    /// an analytic Jacobian is supplied.
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 50,
            fd_step: 1e-6,
        }
    }
}

/// Outcome of a converged [`newton_solve`].
#[derive(Clone, Debug)]
pub struct NewtonResult {
    pub x: Vector,
    /// Newton steps taken (zero when `x0` already met the tolerance).
    pub iterations: usize,
    /// Final residual infinity norm.
    pub residual: f64,
    /// Residual infinity norm before each step, plus the final one.
    pub history: Vec<f64>,
}

fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `F(x) = 0` by Newton's method with backtracking damping.
///
/// Each step solves `J Δ = -F` (analytic `jac` when given, otherwise central
/// finite differences of `f`) and then halves the step length until
/// `‖F(x + αΔ)‖₂² < ‖F(x)‖₂²`, giving up below `α = 2⁻²⁰`. Convergence is
/// declared on the residual infinity norm.
pub fn newton_solve(
    f: &mut dyn FnMut(&Vector) -> Result<Vector>,
    mut jac: Option<&mut dyn FnMut(&Vector) -> Result<Matrix>>,
    x0: &Vector,
    opts: &NewtonOptions,
) -> Result<NewtonResult> {
    let n = x0.len();
    let mut x = x0.clone();
    let mut fx = f(&x)?;
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "Newton residual at the initial guess".into(),
        });
    }
    let mut res = inf_norm(&fx);
    let mut history = vec![res];
    let mut best = (x.clone(), res);

    for iter in 0..opts.max_iter {
        if res <= opts.tol {
            return Ok(NewtonResult {
                x,
                iterations: iter,
                residual: res,
                history,
            });
        }

        let j = match jac.as_mut() {
            Some(jf) => jf(&x)?,
            None => fd_jacobian(f, &x, &fx, opts.fd_step)?,
        };
        if j.nrows() != fx.len() || j.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "Jacobian is {}x{}, expected {}x{}",
                j.nrows(),
                j.ncols(),
                fx.len(),
                n
            )));
        }
        let lu = j.lu();
        let delta = lu.solve(&(-&fx)).ok_or(Error::SingularJacobian)?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian);
        }

        // Backtracking on the squared 2-norm of the residual.
        let phi0 = fx.norm_squared();
        let mut alpha = 1.0_f64;
        let min_alpha = (2.0_f64).powi(-20);
        let (x_next, fx_next) = loop {
            let cand = &x + &delta * alpha;
            let f_cand = f(&cand)?;
            if f_cand.iter().all(|v| v.is_finite()) && f_cand.norm_squared() < phi0 {
                break (cand, f_cand);
            }
            alpha *= 0.5;
            if alpha < min_alpha {
                return Err(Error::LineSearchFailure { residual: res });
            }
        };
        x = x_next;
        fx = fx_next;
        res = inf_norm(&fx);
        history.push(res);
        if res < best.1 {
            best = (x.clone(), res);
        }
    }

    if res <= opts.tol {
        return Ok(NewtonResult {
            x,
            iterations: opts.max_iter,
            residual: res,
            history,
        });
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: best.1,
        history,
        best: best.0.iter().copied().collect(),
    })
}

/// Central-difference Jacobian with per-column scale-aware steps.
fn fd_jacobian(
    f: &mut dyn FnMut(&Vector) -> Result<Vector>,
    x: &Vector,
    fx: &Vector,
    fd_step: f64,
) -> Result<Matrix> {
    let n = x.len();
    let m = fx.len();
    let mut j = Matrix::zeros(m, n);
    let mut xp = x.clone();
    for col in 0..n {
        let h = fd_step * (1.0 + x[col].abs());
        xp[col] = x[col] + h;
        let fp = f(&xp)?;
        xp[col] = x[col] - h;
        let fm = f(&xp)?;
        xp[col] = x[col];
        for row in 0..m {
            j[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    Ok(j)
}
