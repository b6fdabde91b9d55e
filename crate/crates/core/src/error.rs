//! Crate-wide error type.
//!
//! One enum covers the whole pipeline (evaluation, integration, root finding,
//! Newton solves, control elimination, classification) so that right-hand
//! sides, solvers, and callers can pass failures through without adapter
//! layers.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in this crate.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A caller passed inconsistent dimensions or an otherwise malformed
    /// argument (empty bracket, non-positive horizon, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An evaluation produced NaN or infinity.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    /// The adaptive integrator could not satisfy its error tolerance even
    /// with the smallest admissible step.
    #[error("integrator step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    /// The integrator exceeded its step budget before reaching the end of
    /// the interval.
    #[error("integrator exceeded {max_steps} steps at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    /// The integrator state became NaN or infinite.
    #[error("non-finite state during integration at t = {t}")]
    NonFiniteState { t: f64 },

    /// `bisect` was called on an interval whose endpoint values do not have
    /// opposite signs.
    #[error("invalid bracket: g({a}) and g({b}) do not straddle zero")]
    InvalidBracket { a: f64, b: f64 },

    /// A linear solve met a singular (or numerically singular) matrix.
    #[error("singular Jacobian in Newton solve")]
    SingularJacobian,

    /// Backtracking could not reduce the residual even at the minimum step.
    #[error("Newton line search stalled (step below 2^-20, residual {residual:.3e})")]
    LineSearchFailure { residual: f64 },

    /// A Newton iteration ran out of iterations. Carries the best iterate
    /// seen and the per-iteration residual norms.
    #[error("no convergence after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
        best: Vec<f64>,
    },

    /// The control Hessian `∂²L̃/∂u²` is singular at the queried point, so
    /// the control cannot be eliminated there.
    #[error("control Hessian is singular at the queried point")]
    SingularControlHessian,

    /// The strengthened Legendre condition fails along the extremal, so
    /// Jacobi fields (which require the control-reduced flow) are not
    /// defined.
    #[error("strengthened Legendre condition fails along the extremal ({detail})")]
    LegendreViolation { detail: String },

    /// A variation passed to the second-variation quadrature does not vanish
    /// at the endpoints.
    #[error("variation does not vanish at the endpoints (|δ| = {magnitude:.3e} at t = {t})")]
    NonAdmissibleVariation { t: f64, magnitude: f64 },

    /// A registry lookup used an unknown problem name.
    #[error("unknown problem '{name}' (known: {known})")]
    UnknownProblem { name: String, known: String },
}
