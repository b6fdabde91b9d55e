//! Run configuration: the JSON schema, validation, and resolution into
//! ready-to-use toolkit options.
//!
//! A configuration is a single JSON document:
//!
//! ```json
//! {
//!   "problem": {"registry": "double_integrator"},
//!   "boundary": {"q0": [0.0], "v0": [0.0], "q_end": [1.0], "v_end": [0.0]},
//!   "horizon": 1.0,
//!   "integrator": {"method": "dp45", "atol": 1e-10, "rtol": 1e-10},
//!   "shooting": {"z0": [0.0, 0.0], "tol": 1e-9, "max_iter": 30},
//!   "conjugate": {"n_scan": 1000, "tol_t": 1e-6},
//!   "output_dir": "out",
//!   "csv_samples": 1001
//! }
//! ```
//!
//! The problem source is either a registry name or an inline
//! linear-quadratic problem with matrices as row-major nested arrays:
//! `{"problem": {"lq": {"a1": [[0.0]], "a2": [[0.0]], "b": [[1.0]],
//! "q1": [[0.0]], "q2": [[0.0]], "r": [[1.0]]}}}`. Exactly one source must
//! be present; `--problem <name>` on the command line replaces it. Inline
//! problems require `boundary` and `horizon`; registry problems carry
//! defaults for both and treat the config fields as overrides. Weight
//! matrices that arrive asymmetric are replaced by their symmetric part and
//! the substitution is recorded as a note. `v0` and `v_end` default to zero
//! (rest-to-rest boundaries).

use std::fs;
use std::path::PathBuf;

use extremal::conjugate::ConjugateOptions;
use extremal::lq::LqProblem;
use extremal::numerics::IntegratorOptions;
use extremal::problem::{BoundaryData, SecondOrderOcp};
use extremal::registry;
use extremal::shooting::ShootingOptions;
use extremal::{Matrix, Vector};
use serde::Deserialize;

use crate::{CliError, RunArgs};

/// Deserialized form of the JSON run configuration. Every field is optional
/// at the parse level; [`resolve`] enforces the per-command requirements.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<ProblemSource>,
    pub boundary: Option<BoundaryConfig>,
    /// Final time `T`. Required for inline problems; overrides the registry
    /// default otherwise.
    pub horizon: Option<f64>,
    pub integrator: Option<IntegratorConfig>,
    pub shooting: Option<ShootingConfig>,
    pub conjugate: Option<ConjugateConfig>,
    pub output_dir: Option<PathBuf>,
    /// Rows in the CSV outputs (uniform time grid, endpoints included).
    pub csv_samples: Option<usize>,
}

/// Exactly one problem source: a registry name or inline LQ data.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSource {
    Registry(String),
    Lq(LqConfig),
}

/// Inline linear-quadratic problem: `f = A₁q + A₂q̇ + Bu`,
/// `C = ½(qᵀQ₁q + q̇ᵀQ₂q̇ + uᵀRu)`, matrices as row-major nested arrays.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqConfig {
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q1: Vec<Vec<f64>>,
    pub q2: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

/// Boundary data; velocities default to zero.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub q0: Vec<f64>,
    pub v0: Option<Vec<f64>>,
    pub q_end: Vec<f64>,
    pub v_end: Option<Vec<f64>>,
}

/// Integrator selection for the shooting flow.
#[derive(Debug, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum IntegratorConfig {
    /// Adaptive Dormand–Prince 5(4) with dense output.
    Dp45 {
        atol: f64,
        rtol: f64,
        #[serde(default)]
        max_step: Option<f64>,
    },
    /// Fixed-step classical Runge–Kutta.
    Rk4 { h: f64 },
}

/// Newton shooting controls.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootingConfig {
    /// Initial covector guess `z₀ = (κ(0), κ̇(0))`, length `2·nq`.
    pub z0: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

/// Conjugate-time scan controls.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateConfig {
    /// Scan start; defaults past the structural zero of the determinant at
    /// `t = 0`.
    pub t_skip: Option<f64>,
    pub n_scan: Option<usize>,
    pub tol_t: Option<f64>,
    /// Margin for the strengthened-Legendre classification.
    pub legendre_margin: Option<f64>,
}

/// A fully validated run: the problem, all solver options, and the output
/// destination.
#[derive(Debug)]
pub struct Resolved {
    pub problem: SecondOrderOcp,
    /// The linear-quadratic form when one exists (inline problems and the
    /// registry entries that are linear-quadratic); enables the LQ-only
    /// check suites.
    pub lq: Option<LqProblem>,
    pub shooting: ShootingOptions,
    /// Initial covector guess for the shooting iteration.
    pub z0: Vector,
    pub conjugate: ConjugateOptions,
    pub out_dir: PathBuf,
    pub csv_samples: usize,
    /// Substitutions applied while reading the config (currently:
    /// symmetrized weight matrices).
    pub notes: Vec<String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn require_positive(name: &str, value: f64) -> Result<f64, CliError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(config_err(format!("{name} must be positive, got {value}")))
    }
}

/// Builds a matrix from row-major nested arrays, rejecting ragged or empty
/// input.
fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(config_err(format!("{name} must be a non-empty matrix")));
    }
    let ncols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(config_err(format!(
                "{name} is ragged: row 0 has {ncols} entries, row {i} has {}",
                row.len()
            )));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Replaces an asymmetric weight matrix by its symmetric part, recording the
/// substitution. Non-square input passes through for the problem constructor
/// to reject with a shape error.
fn symmetrized(name: &str, m: Matrix, notes: &mut Vec<String>) -> Matrix {
    if !m.is_square() {
        return m;
    }
    let asym = (&m - m.transpose()).abs().max();
    if asym > 0.0 {
        notes.push(format!(
            "{name} was not symmetric (max asymmetry {asym:.3e}); replaced by its symmetric part"
        ));
        (&m + m.transpose()) * 0.5
    } else {
        m
    }
}

fn build_lq(cfg: &LqConfig, notes: &mut Vec<String>) -> Result<LqProblem, CliError> {
    let a1 = matrix_from_rows("a1", &cfg.a1)?;
    let a2 = matrix_from_rows("a2", &cfg.a2)?;
    let b = matrix_from_rows("b", &cfg.b)?;
    let q1 = symmetrized("q1", matrix_from_rows("q1", &cfg.q1)?, notes);
    let q2 = symmetrized("q2", matrix_from_rows("q2", &cfg.q2)?, notes);
    let r = symmetrized("r", matrix_from_rows("r", &cfg.r)?, notes);
    LqProblem::new(a1, a2, b, q1, q2, r).map_err(|e| config_err(format!("lq problem: {e}")))
}

fn boundary_data(
    cfg: &BoundaryConfig,
    nq: usize,
    horizon: f64,
) -> Result<BoundaryData, CliError> {
    let vec_of = |name: &str, values: &[f64]| -> Result<Vector, CliError> {
        if values.len() != nq {
            return Err(config_err(format!(
                "boundary vector {name} has length {}, expected nq = {nq}",
                values.len()
            )));
        }
        Ok(Vector::from_column_slice(values))
    };
    let q0 = vec_of("q0", &cfg.q0)?;
    let v0 = match &cfg.v0 {
        Some(v) => vec_of("v0", v)?,
        None => Vector::zeros(nq),
    };
    let q_end = vec_of("q_end", &cfg.q_end)?;
    let v_end = match &cfg.v_end {
        Some(v) => vec_of("v_end", v)?,
        None => Vector::zeros(nq),
    };
    require_positive("horizon", horizon)?;
    Ok(BoundaryData {
        q0,
        v0,
        q_end,
        v_end,
        horizon,
    })
}

fn integrator_options(cfg: &IntegratorConfig) -> Result<IntegratorOptions, CliError> {
    match cfg {
        IntegratorConfig::Dp45 {
            atol,
            rtol,
            max_step,
        } => {
            require_positive("integrator.atol", *atol)?;
            require_positive("integrator.rtol", *rtol)?;
            let mut opts = IntegratorOptions::dp45(*atol, *rtol);
            if let Some(h) = max_step {
                opts = opts.with_max_step(require_positive("integrator.max_step", *h)?);
            }
            Ok(opts)
        }
        IntegratorConfig::Rk4 { h } => {
            Ok(IntegratorOptions::rk4(require_positive("integrator.h", *h)?))
        }
    }
}

/// Reads the config file (when given), applies command-line overrides, and
/// validates everything into a [`Resolved`] run.
pub fn resolve(args: &RunArgs) -> Result<Resolved, CliError> {
    let cfg: RunConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                config_err(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| config_err(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };

    let mut notes = Vec::new();
    let source = match (&args.problem, cfg.problem) {
        (Some(name), _) => ProblemSource::Registry(name.clone()),
        (None, Some(source)) => source,
        (None, None) => {
            return Err(config_err(
                "no problem selected: set \"problem\" in the config or pass --problem <name>",
            ))
        }
    };

    let (problem, lq) = match source {
        ProblemSource::Registry(name) => {
            let mut p = registry::by_name(&name).map_err(|e| config_err(e.to_string()))?;
            if let Some(bc) = &cfg.boundary {
                let horizon = cfg.horizon.unwrap_or(p.boundary.horizon);
                p.boundary = boundary_data(bc, p.dims.nq, horizon)?;
            } else if let Some(horizon) = cfg.horizon {
                p.boundary.horizon = require_positive("horizon", horizon)?;
            }
            let lq = registry::lq_by_name(&name);
            (p, lq)
        }
        ProblemSource::Lq(lq_cfg) => {
            let lq = build_lq(&lq_cfg, &mut notes)?;
            let bc = cfg.boundary.as_ref().ok_or_else(|| {
                config_err("inline lq problems need \"boundary\" in the config")
            })?;
            let horizon = cfg.horizon.ok_or_else(|| {
                config_err("inline lq problems need \"horizon\" (the final time T) in the config")
            })?;
            let boundary = boundary_data(bc, lq.nq(), horizon)?;
            let p = lq
                .to_ocp("lq", boundary)
                .map_err(|e| config_err(format!("lq problem: {e}")))?;
            (p, Some(lq))
        }
    };

    let mut shooting = ShootingOptions::default();
    if let Some(ic) = &cfg.integrator {
        shooting.integrator = integrator_options(ic)?;
    }
    if let Some(sc) = &cfg.shooting {
        if let Some(tol) = sc.tol {
            shooting.tol = require_positive("shooting.tol", tol)?;
        }
        if let Some(max_iter) = sc.max_iter {
            if max_iter == 0 {
                return Err(config_err("shooting.max_iter must be at least 1"));
            }
            shooting.max_iter = max_iter;
        }
    }
    let z0 = match cfg.shooting.as_ref().and_then(|s| s.z0.as_ref()) {
        Some(z) => {
            if z.len() != 2 * problem.dims.nq {
                return Err(config_err(format!(
                    "shooting.z0 has length {}, expected 2·nq = {}",
                    z.len(),
                    2 * problem.dims.nq
                )));
            }
            Vector::from_column_slice(z)
        }
        None => Vector::zeros(2 * problem.dims.nq),
    };

    let mut conjugate = ConjugateOptions::default();
    if let Some(cc) = &cfg.conjugate {
        if let Some(t_skip) = cc.t_skip {
            if !t_skip.is_finite() || t_skip < 0.0 {
                return Err(config_err(format!(
                    "conjugate.t_skip must be finite and non-negative, got {t_skip}"
                )));
            }
            conjugate.t_skip = Some(t_skip);
        }
        if let Some(n_scan) = cc.n_scan {
            if n_scan < 2 {
                return Err(config_err("conjugate.n_scan must be at least 2"));
            }
            conjugate.n_scan = n_scan;
        }
        if let Some(tol_t) = cc.tol_t {
            conjugate.tol_t = require_positive("conjugate.tol_t", tol_t)?;
        }
        if let Some(margin) = cc.legendre_margin {
            if !margin.is_finite() || margin < 0.0 {
                return Err(config_err(format!(
                    "conjugate.legendre_margin must be finite and non-negative, got {margin}"
                )));
            }
            conjugate.legendre_margin = margin;
        }
    }

    let csv_samples = cfg.csv_samples.unwrap_or(1001);
    if csv_samples < 2 {
        return Err(config_err("csv_samples must be at least 2"));
    }

    let out_dir = args
        .out
        .clone()
        .or(cfg.output_dir)
        .unwrap_or_else(|| PathBuf::from("."));

    Ok(Resolved {
        problem,
        lq,
        shooting,
        z0,
        conjugate,
        out_dir,
        csv_samples,
        notes,
    })
}
