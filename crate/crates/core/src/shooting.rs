//! Single shooting for the fixed-endpoint extremal boundary-value problem.
//!
//! An extremal is a solution of the Euler–Lagrange flow of the control
//! Lagrangian whose position and velocity hit the prescribed endpoints.  With
//! `(q(0), q̇(0))` fixed by the boundary data, the remaining unknowns are the
//! initial multiplier and its velocity, stacked as `z = (κ(0), κ̇(0))`.  The
//! shooting map sends `z` to the terminal mismatch `(q(T) − q_T, q̇(T) − v_T)`,
//! and a damped Newton iteration with finite-difference Jacobian drives it to
//! zero.
//!
//! The multipliers — rather than the Hamiltonian costates — are the unknowns;
//! the phase-space picture is recovered through the costate identification in
//! [`crate::hamiltonian`], and the agreement of the two flows is a checked
//! property of the solution, not an assumption.

use std::cell::RefCell;

use crate::control::{self, ControlOptions};
use crate::lagrangian::{self, split_state};
use crate::numerics::{
    integrate, newton_solve, DenseTrajectory, IntegratorOptions, NewtonOptions,
};
use crate::problem::SecondOrderOcp;
use crate::{Error, Result, Vector};

/// Options for [`solve`].
#[derive(Clone, Copy, Debug)]
pub struct ShootingOptions {
    /// Convergence target for the boundary residual infinity norm.
    pub tol: f64,
    /// Newton iteration cap.
    pub max_iter: usize,
    /// Integrator used for every shot.
    pub integrator: IntegratorOptions,
    /// Options for the pointwise control elimination along each shot.
    pub control: ControlOptions,
    /// Sample count for the cost quadrature (forced odd; composite Simpson).
    pub quadrature_samples: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            tol: 1e-9,
            max_iter: 30,
            integrator: IntegratorOptions::default(),
            control: ControlOptions::default(),
            quadrature_samples: 2001,
        }
    }
}

/// One sample of a solved extremal: time, stacked state `(q, q̇, κ, κ̇)`, and
/// the stationary control.
#[derive(Clone, Debug)]
pub struct ExtremalSample {
    pub t: f64,
    pub state: Vector,
    pub u: Vector,
}

/// A solved extremal: the Euler–Lagrange trajectory meeting the boundary
/// data, its stationary control at every node, and shooting diagnostics.
#[derive(Clone, Debug)]
pub struct Extremal {
    pub problem: SecondOrderOcp,
    /// Dense trajectory over `(q, q̇, κ, κ̇)`.
    pub trajectory: DenseTrajectory,
    /// Stationary control at each trajectory node.
    pub node_controls: Vec<Vector>,
    /// Converged initial covector `z* = (κ(0), κ̇(0))`.
    pub z_star: Vector,
    /// Cost `J = ∫ C dt` along the solution.
    pub cost: f64,
    /// Newton iterations taken.
    pub iterations: usize,
    /// Final boundary residual infinity norm.
    pub boundary_residual: f64,
    /// Residual infinity norm after each Newton step, starting with `z0`'s.
    pub residual_history: Vec<f64>,
    /// Elimination options used when sampling controls off the node grid.
    pub control_options: ControlOptions,
}

impl Extremal {
    pub fn horizon(&self) -> f64 {
        self.problem.boundary.horizon
    }

    /// Interpolated flow state `(q, q̇, κ, κ̇)` at `t ∈ [0, T]`.
    pub fn state_at(&self, t: f64) -> Vector {
        self.trajectory.eval(t)
    }

    /// Stationary control at `t`, eliminated from the interpolated state and
    /// warm-started at the nearest stored node control.
    pub fn control_at(&self, t: f64) -> Result<Vector> {
        let times = self.trajectory.times();
        let idx = times
            .partition_point(|&node| node <= t)
            .saturating_sub(1)
            .min(self.node_controls.len() - 1);
        let state = self.trajectory.eval(t);
        let (q, qd, k, _) = split_state(&state, self.problem.dims.nq)?;
        let sol = control::eliminate_control(
            &self.problem,
            &q,
            &qd,
            &k,
            &self.node_controls[idx],
            &self.control_options,
        )?;
        Ok(sol.u)
    }

    /// Uniformly spaced samples over `[0, T]`, endpoints included, with the
    /// control warm-started from one sample to the next.
    pub fn sample(&self, n: usize) -> Result<Vec<ExtremalSample>> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 samples, got {n}"
            )));
        }
        let horizon = self.horizon();
        let nq = self.problem.dims.nq;
        let mut samples = Vec::with_capacity(n);
        let mut warm = self.node_controls[0].clone();
        for i in 0..n {
            let t = horizon * i as f64 / (n - 1) as f64;
            let state = self.trajectory.eval(t);
            let (q, qd, k, _) = split_state(&state, nq)?;
            let sol =
                control::eliminate_control(&self.problem, &q, &qd, &k, &warm, &self.control_options)?;
            warm = sol.u.clone();
            samples.push(ExtremalSample {
                t,
                state,
                u: sol.u,
            });
        }
        Ok(samples)
    }
}

/// Builds the stacked initial state `(q₀, v₀, κ(0), κ̇(0))` from the boundary
/// data and the shooting unknown.
fn initial_state(p: &SecondOrderOcp, z: &Vector) -> Result<Vector> {
    let nq = p.dims.nq;
    if z.len() != 2 * nq {
        return Err(Error::InvalidArgument(format!(
            "shooting unknown has length {}, expected 2nq = {}",
            z.len(),
            2 * nq
        )));
    }
    let mut y0 = Vector::zeros(4 * nq);
    y0.rows_mut(0, nq).copy_from(&p.boundary.q0);
    y0.rows_mut(nq, nq).copy_from(&p.boundary.v0);
    y0.rows_mut(2 * nq, 2 * nq).copy_from(z);
    Ok(y0)
}

/// Integrates the Euler–Lagrange flow with pointwise control elimination from
/// the given initial state.  The control is warm-started across right-hand
/// side evaluations, starting from `u = 0`.
fn integrate_el_flow(
    p: &SecondOrderOcp,
    y0: &Vector,
    integrator: &IntegratorOptions,
    copts: &ControlOptions,
) -> Result<DenseTrajectory> {
    let nq = p.dims.nq;
    let warm = RefCell::new(Vector::zeros(p.dims.m));
    let mut rhs = |_t: f64, y: &Vector| -> Result<Vector> {
        let (q, qd, k, _) = split_state(y, nq)?;
        let guess = warm.borrow().clone();
        let sol = control::eliminate_control(p, &q, &qd, &k, &guess, copts)?;
        *warm.borrow_mut() = sol.u.clone();
        lagrangian::el_rhs(p, y, &sol.u)
    };
    integrate(&mut rhs, (0.0, p.boundary.horizon), y0, integrator)
}

fn boundary_mismatch(p: &SecondOrderOcp, end_state: &Vector) -> Result<Vector> {
    let nq = p.dims.nq;
    let (q_end, v_end, _, _) = split_state(end_state, nq)?;
    let mut res = Vector::zeros(2 * nq);
    res.rows_mut(0, nq).copy_from(&(&q_end - &p.boundary.q_end));
    res.rows_mut(nq, nq).copy_from(&(&v_end - &p.boundary.v_end));
    Ok(res)
}

/// Terminal mismatch of the Euler–Lagrange flow started at `z = (κ(0), κ̇(0))`:
/// `(q(T) − q_T, q̇(T) − v_T)`.
pub fn shoot_residual(p: &SecondOrderOcp, z: &Vector, opts: &ShootingOptions) -> Result<Vector> {
    let y0 = initial_state(p, z)?;
    let traj = integrate_el_flow(p, &y0, &opts.integrator, &opts.control)?;
    boundary_mismatch(p, traj.end_state())
}

/// Solves the extremal boundary-value problem by Newton iteration on
/// [`shoot_residual`], starting from `z0`.
///
/// The converged trajectory is re-integrated with a capped step so that
/// dense samples between nodes carry node-level accuracy, the stationary
/// control is recorded at every node, and the cost is evaluated by composite
/// Simpson quadrature on a uniform resampling.
pub fn solve(p: &SecondOrderOcp, z0: &Vector, opts: &ShootingOptions) -> Result<Extremal> {
    let nq = p.dims.nq;
    if z0.len() != 2 * nq {
        return Err(Error::InvalidArgument(format!(
            "initial covector guess has length {}, expected 2nq = {}",
            z0.len(),
            2 * nq
        )));
    }

    let mut residual_fn = |z: &Vector| shoot_residual(p, z, opts);
    let newton_opts = NewtonOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        fd_step: 1e-6,
    };
    let newton = newton_solve(&mut residual_fn, None, z0, &newton_opts)?;

    // Final pass: dense, step-capped trajectory for downstream consumers.
    let horizon = p.boundary.horizon;
    let final_integrator = opts
        .integrator
        .with_max_step(opts.integrator.max_step.min(horizon / 1024.0));
    let y0 = initial_state(p, &newton.x)?;
    let trajectory = integrate_el_flow(p, &y0, &final_integrator, &opts.control)?;
    let boundary_residual = boundary_mismatch(p, trajectory.end_state())?.amax();

    // Stationary control at every node, warm-started along the grid.
    let mut node_controls = Vec::with_capacity(trajectory.len());
    let mut warm = Vector::zeros(p.dims.m);
    for state in trajectory.states() {
        let (q, qd, k, _) = split_state(state, nq)?;
        let sol = control::eliminate_control(p, &q, &qd, &k, &warm, &opts.control)?;
        warm = sol.u.clone();
        node_controls.push(sol.u);
    }

    let mut extremal = Extremal {
        problem: p.clone(),
        trajectory,
        node_controls,
        z_star: newton.x,
        cost: 0.0,
        iterations: newton.iterations,
        boundary_residual,
        residual_history: newton.history,
        control_options: opts.control,
    };
    extremal.cost = cost(&extremal, opts.quadrature_samples)?;
    Ok(extremal)
}

/// Cost `J = ∫₀ᵀ C(q, q̇, u*) dt` along a solved extremal, by composite
/// Simpson quadrature on `samples` uniform points (forced odd, at least 3).
pub fn cost(extremal: &Extremal, samples: usize) -> Result<f64> {
    let n = samples.max(3) | 1;
    let pts = extremal.sample(n)?;
    let nq = extremal.problem.dims.nq;
    let h = extremal.horizon() / (n - 1) as f64;
    let mut acc = 0.0;
    for (i, s) in pts.iter().enumerate() {
        let (q, qd, _, _) = split_state(&s.state, nq)?;
        let c = extremal.problem.running_cost(&q, &qd, &s.u)?;
        let w = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * c;
    }
    Ok(acc * h / 3.0)
}
