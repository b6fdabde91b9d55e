//! Indirect-method optimal control for second-order systems.
//!
//! The problems handled here minimize an integral cost over trajectories of a
//! controlled second-order ODE,
//!
//! ```text
//!     minimize   J(u) = ∫₀ᵀ C(q, q̇, u) dt
//!     subject to q̈ = f(q, q̇, u),   q(0), q̇(0), q(T), q̇(T) fixed,
//! ```
//!
//! and the toolkit works with the *extremals* of that problem — trajectories
//! satisfying the first-order stationarity conditions — in two equivalent
//! forms:
//!
//! * a Hamiltonian (costate) form on `(q, v, λ_q, λ_v)` ([`hamiltonian`]),
//! * a Lagrangian form on the doubled configuration space `(q, κ)`
//!   ([`lagrangian`]), where the multiplier `κ` is promoted to a configuration
//!   variable of an augmented Lagrangian and the stationarity conditions
//!   become a fourth-order-in-`q` Euler–Lagrange system.
//!
//! The two pictures are linked by an explicit linear isomorphism whose
//! Jacobian has unit determinant, so second-order information (Legendre
//! conditions, Jacobi fields, conjugate times) can be computed on either side
//! and cross-checked. On top of the flows sit:
//!
//! * [`shooting`] — two-point boundary-value solves by damped Newton on the
//!   initial multiplier data,
//! * [`conjugate`] — Jacobi-field propagation, determinant scans, conjugate
//!   times, and an optimality verdict,
//! * [`lq`] — closed-form system matrices for linear-quadratic problems, used
//!   both as fast paths and as oracles for the generic code,
//! * [`control`] — pointwise elimination of the control from the stationarity
//!   condition when the control Hessian is invertible,
//! * [`numerics`] — the shared integrators, root finding, and Newton kernels.
//!
//! Problems are described by [`problem::SecondOrderOcp`]: dimensions, the two
//! differentiable maps `f` and `C` (analytic derivatives where available,
//! finite-difference fallback otherwise), and boundary data. A few classic
//! instances live in [`registry`].

pub mod conjugate;
pub mod control;
pub mod error;
pub mod hamiltonian;
pub mod lagrangian;
pub mod lq;
pub mod numerics;
pub mod problem;
pub mod registry;
pub mod shooting;

pub use error::{Error, Result};

/// Dynamically sized column vector of `f64`, the working type for states,
/// controls, and multipliers.
pub type Vector = nalgebra::DVector<f64>;
/// Dynamically sized dense matrix of `f64`.
pub type Matrix = nalgebra::DMatrix<f64>;
