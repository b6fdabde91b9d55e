//! Conjugate times by Jacobi-field determinants, in both variational
//! pictures.
//!
//! Along a solved extremal the linearized stationarity equations — the
//! Jacobi equations — admit a `2nq`-dimensional family of solutions whose
//! state variation vanishes at `t = 0`. Collecting the `(δq, δq̇)` components
//! of a basis of that family as columns gives a square matrix whose
//! determinant
//!
//! ```text
//!     D(t) = det [ δx₁(t) | δx₂(t) | … | δx_{2nq}(t) ]
//! ```
//!
//! vanishes exactly at the times conjugate to `0`. The first such time
//! decides optimality: an extremal with an interior conjugate time cannot be
//! a weak local minimizer, while a nondegenerate extremal with no conjugate
//! time on `(0, T]` and a strengthened Legendre condition is one.
//!
//! The bundle can be propagated in two independent ways:
//!
//! * [`Formulation::Hamiltonian`] — first-order variational equations of the
//!   reduced Pontryagin flow in `(δx, δλ)`;
//! * [`Formulation::Lagrangian`] — the accessory (Jacobi) equation of the
//!   reduced control Lagrangian in `(δy, δẏ)` with `y = (q, κ)`, initialized
//!   through the linearized costate identification.
//!
//! Exact arithmetic would make the two determinants identical; numerically
//! they follow different discretizations, so their agreement is a strong
//! self-check and [`optimality_verdict`] computes both.
//!
//! `D(t) → 0` as `t → 0` by construction (every field starts with zero state
//! variation), so scans exclude an initial window; see
//! [`ConjugateOptions::t_skip`].

use crate::control::{legendre_check, LegendreReport, LegendreVerdict};
use crate::error::{Error, Result};
use crate::hamiltonian;
use crate::lagrangian;
use crate::numerics::{bisect, find_sign_change, integrate, DenseTrajectory, IntegratorOptions};
use crate::shooting::Extremal;
use crate::{Matrix, Vector};

/// Qualifier attached to every verdict: the multiplier is normalized (the
/// abnormal case is out of scope) and conjugate times are assumed to be
/// simple determinant zeros.
pub const ASSUMPTIONS: &str = "normal, corank-1 assumed";

/// Which variational picture a Jacobi bundle is propagated in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// Linearized reduced Pontryagin flow in `(δx, δλ)`.
    Hamiltonian,
    /// Accessory equation of the reduced control Lagrangian in `(δy, δẏ)`.
    Lagrangian,
}

/// Options for bundle propagation and determinant scans.
#[derive(Clone, Debug)]
pub struct ConjugateOptions {
    /// Start of the scan window. `None` selects
    /// `max(10⁻³ T, 10 · first bundle step)`, past the structural zero of
    /// `D` at `t = 0`.
    pub t_skip: Option<f64>,
    /// Number of determinant evaluations on the scan window.
    pub n_scan: usize,
    /// Width to which a located sign change is bisected.
    pub tol_t: f64,
    /// Integrator for the bundle fields. The step is additionally capped at
    /// `T/1024` so interpolated determinant values stay at node accuracy.
    pub integrator: IntegratorOptions,
    /// Margin for the strengthened Legendre precondition; bundles are only
    /// propagated when the condition holds with this margin.
    pub legendre_margin: f64,
}

impl Default for ConjugateOptions {
    fn default() -> Self {
        ConjugateOptions {
            t_skip: None,
            n_scan: 1000,
            tol_t: 1e-6,
            integrator: IntegratorOptions::dp45(1e-8, 1e-8),
            legendre_margin: 1e-9,
        }
    }
}

/// A basis of Jacobi fields with vanishing initial state variation,
/// propagated as one stacked trajectory so all fields share the integration
/// grid.
#[derive(Clone, Debug)]
pub struct JacobiBundle {
    pub formulation: Formulation,
    trajectory: DenseTrajectory,
    nq: usize,
}

impl JacobiBundle {
    /// Number of fields in the bundle (`2 nq`).
    pub fn field_count(&self) -> usize {
        2 * self.nq
    }

    /// End of the propagation interval.
    pub fn t_end(&self) -> f64 {
        self.trajectory.t_end()
    }

    /// Size of the first integration step, used to pick the default scan
    /// start.
    pub fn first_step(&self) -> f64 {
        let ts = self.trajectory.times();
        ts[1] - ts[0]
    }

    /// The stacked trajectory; field `i` occupies rows
    /// `[4 nq i, 4 nq (i+1))`.
    pub fn trajectory(&self) -> &DenseTrajectory {
        &self.trajectory
    }

    /// Full variational state of field `i` at time `t`: `(δq, δq̇, δλ_q, δλ_v)`
    /// for the Hamiltonian picture, `(δq, δκ, δq̇, δκ̇)` for the Lagrangian
    /// one.
    pub fn field_at(&self, i: usize, t: f64) -> Result<Vector> {
        if i >= self.field_count() {
            return Err(Error::InvalidArgument(format!(
                "field index {i} out of range (bundle has {})",
                self.field_count()
            )));
        }
        let z = self.trajectory.eval(t);
        Ok(z.rows(4 * self.nq * i, 4 * self.nq).into_owned())
    }

    /// Determinant of the matrix of state variations `(δq_i, δq̇_i)` at `t`.
    pub fn det_at(&self, t: f64) -> f64 {
        let nq = self.nq;
        let z = self.trajectory.eval(t);
        let mut m = Matrix::zeros(2 * nq, 2 * nq);
        for i in 0..2 * nq {
            let field = z.rows(4 * nq * i, 4 * nq);
            match self.formulation {
                Formulation::Hamiltonian => {
                    // Field layout (δq, δq̇, δλ_q, δλ_v): the state variation
                    // is the leading half.
                    m.column_mut(i).copy_from(&field.rows(0, 2 * nq));
                }
                Formulation::Lagrangian => {
                    // Field layout (δq, δκ, δq̇, δκ̇): collect δq and δq̇.
                    m.view_mut((0, i), (nq, 1)).copy_from(&field.rows(0, nq));
                    m.view_mut((nq, i), (nq, 1))
                        .copy_from(&field.rows(2 * nq, nq));
                }
            }
        }
        m.determinant()
    }
}

/// Propagates the `2nq` Jacobi fields with `δx(0) = 0` and `δλ(0) = eᵢ`
/// over the extremal's horizon.
///
/// In the Lagrangian picture the same family is initialized through the
/// linearized costate identification at `t = 0` (where `δq = δq̇ = 0`):
///
/// ```text
///     δκ(0) = δλ_v(0),
///     δu(0) = −L_uu⁻¹ (∂f/∂u)ᵀ δκ(0),
///     δκ̇(0) = (C_q̇u − K_q̇u) δu(0) − (∂f/∂q̇)ᵀ δκ(0) − δλ_q(0),
/// ```
///
/// with `K_q̇u` the `λ`-contracted mixed dynamics Hessian.
///
/// Requires the strengthened Legendre condition along the extremal; fails
/// with [`Error::LegendreViolation`] otherwise, since the control
/// elimination underlying both variational systems is then untrustworthy.
pub fn propagate_bundle(
    extremal: &Extremal,
    formulation: Formulation,
    opts: &ConjugateOptions,
) -> Result<JacobiBundle> {
    let legendre = legendre_check(extremal, opts.legendre_margin)?;
    if legendre.verdict != LegendreVerdict::Strong {
        return Err(Error::LegendreViolation {
            detail: format!(
                "smallest control-Hessian eigenvalue along the extremal is {:.3e} ({:?}); \
                 Jacobi fields need the strengthened condition",
                legendre.overall_min, legendre.verdict
            ),
        });
    }

    let p = &extremal.problem;
    let nq = p.dims.nq;
    let n_fields = 2 * nq;
    let dim = 4 * nq * n_fields;
    let horizon = extremal.horizon();
    let integrator = opts
        .integrator
        .with_max_step(opts.integrator.max_step.min(horizon / 1024.0));

    let mut z0 = Vector::zeros(dim);
    match formulation {
        Formulation::Hamiltonian => {
            for i in 0..n_fields {
                // δx(0) = 0, δλ(0) = eᵢ.
                z0[4 * nq * i + 2 * nq + i] = 1.0;
            }
        }
        Formulation::Lagrangian => {
            let state0 = &extremal.trajectory.states()[0];
            let u0 = &extremal.node_controls[0];
            let q0 = state0.rows(0, nq).into_owned();
            let v0 = state0.rows(nq, nq).into_owned();
            let k0 = state0.rows(2 * nq, nq).into_owned();
            let d = p.derivs(&q0, &v0, u0, &k0)?;
            let luu_lu = (&d.k_uu - &d.c_uu).lu();
            let coupling = &d.c_vu - &d.k_vu;
            for i in 0..n_fields {
                let mut dl = Vector::zeros(2 * nq);
                dl[i] = 1.0;
                let dl_q = dl.rows(0, nq).into_owned();
                let dl_v = dl.rows(nq, nq).into_owned();
                let dkappa = dl_v;
                let du = luu_lu
                    .solve(&(-(d.f_u.transpose() * &dkappa)))
                    .ok_or(Error::SingularControlHessian)?;
                let dkappa_dot = &coupling * &du - d.f_v.transpose() * &dkappa - &dl_q;
                let off = 4 * nq * i;
                // δy = (δq, δκ) = (0, δκ), δẏ = (δq̇, δκ̇) = (0, δκ̇).
                z0.rows_mut(off + nq, nq).copy_from(&dkappa);
                z0.rows_mut(off + 3 * nq, nq).copy_from(&dkappa_dot);
            }
        }
    }

    let trajectory = match formulation {
        Formulation::Hamiltonian => {
            let mut rhs = |t: f64, z: &Vector| -> Result<Vector> {
                let state = extremal.state_at(t);
                let u = extremal.control_at(t)?;
                let pt = hamiltonian::costate_from_lagrangian(p, &state, &u)?;
                let rh = hamiltonian::reduced_hessian(p, &pt, &u)?;
                let mut out = Vector::zeros(dim);
                for i in 0..n_fields {
                    let off = 4 * nq * i;
                    let dx = z.rows(off, 2 * nq).into_owned();
                    let dl = z.rows(off + 2 * nq, 2 * nq).into_owned();
                    let dxd = rh.x_lambda.transpose() * &dx + &rh.lambda_lambda * &dl;
                    let dld = -(&rh.xx * &dx + &rh.x_lambda * &dl);
                    out.rows_mut(off, 2 * nq).copy_from(&dxd);
                    out.rows_mut(off + 2 * nq, 2 * nq).copy_from(&dld);
                }
                Ok(out)
            };
            integrate(&mut rhs, (0.0, horizon), &z0, &integrator)?
        }
        Formulation::Lagrangian => {
            let mut rhs = |t: f64, z: &Vector| -> Result<Vector> {
                let (a, b) = lagrangian::jacobi_coefficients(extremal, t)?;
                let mut out = Vector::zeros(dim);
                for i in 0..n_fields {
                    let off = 4 * nq * i;
                    let dy = z.rows(off, 2 * nq).into_owned();
                    let dyd = z.rows(off + 2 * nq, 2 * nq).into_owned();
                    let dydd = &a * &dy + &b * &dyd;
                    out.rows_mut(off, 2 * nq).copy_from(&dyd);
                    out.rows_mut(off + 2 * nq, 2 * nq).copy_from(&dydd);
                }
                Ok(out)
            };
            integrate(&mut rhs, (0.0, horizon), &z0, &integrator)?
        }
    };

    Ok(JacobiBundle {
        formulation,
        trajectory,
        nq,
    })
}

/// Uniform samples of the bundle determinant over the full horizon,
/// including both endpoints.
pub fn det_series(bundle: &JacobiBundle, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 determinant samples, got {n}"
        )));
    }
    let t_end = bundle.t_end();
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = if i + 1 == n {
            t_end
        } else {
            t_end * i as f64 / (n - 1) as f64
        };
        times.push(t);
        values.push(bundle.det_at(t));
    }
    Ok((times, values))
}

/// Determinant scan of a bundle over `[t_skip, T]`.
#[derive(Clone, Debug)]
pub struct DetScan {
    pub formulation: Formulation,
    /// Start of the scan window actually used.
    pub t_skip: f64,
    /// Scan grid (uniform, endpoints included).
    pub times: Vec<f64>,
    /// `D(t)` on the grid.
    pub values: Vec<f64>,
    /// First determinant sign change, bisected to `tol_t`.
    pub first_zero: Option<f64>,
    /// Grid times where `|D|` drops below `10⁻¹² max|D|` without a sign
    /// change — candidate even-order zeros the scan cannot classify.
    pub touching_zeros: Vec<f64>,
}

/// Scans the bundle determinant for its first zero past the skip window.
pub fn first_conjugate_time(bundle: &JacobiBundle, opts: &ConjugateOptions) -> Result<DetScan> {
    let horizon = bundle.t_end();
    let t_skip = match opts.t_skip {
        Some(v) => {
            if !(0.0..horizon).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "scan start {v} outside [0, {horizon})"
                )));
            }
            v
        }
        None => (1e-3 * horizon).max(10.0 * bundle.first_step()),
    };
    if t_skip >= horizon {
        return Err(Error::InvalidArgument(format!(
            "scan window [{t_skip}, {horizon}] is empty; the bundle grid is too coarse"
        )));
    }
    if opts.n_scan < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 scan points, got {}",
            opts.n_scan
        )));
    }
    if !(opts.tol_t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bisection tolerance must be positive, got {}",
            opts.tol_t
        )));
    }

    let n = opts.n_scan;
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = if i + 1 == n {
            horizon
        } else {
            t_skip + (horizon - t_skip) * i as f64 / (n - 1) as f64
        };
        times.push(t);
        values.push(bundle.det_at(t));
    }
    let max_abs = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !max_abs.is_finite() {
        return Err(Error::NonFinite {
            context: "Jacobi bundle determinant scan".into(),
        });
    }
    if max_abs == 0.0 {
        return Err(Error::InvalidArgument(
            "bundle determinant vanishes identically on the scan window".into(),
        ));
    }

    let mut g = |t: f64| -> Result<f64> { Ok(bundle.det_at(t)) };
    let first_zero = match find_sign_change(&mut g, t_skip, horizon, n - 1)? {
        Some((lo, hi)) => Some(bisect(&mut g, lo, hi, opts.tol_t)?),
        None => None,
    };
    let touching_zeros = touching_zeros(&times, &values, 1e-12 * max_abs);

    Ok(DetScan {
        formulation: bundle.formulation,
        t_skip,
        times,
        values,
        first_zero,
        touching_zeros,
    })
}

/// Times where the sampled determinant dips below `threshold` in magnitude
/// without changing sign across the dip. Each maximal sub-threshold run
/// contributes the time of its smallest `|D|`; runs touching the scan ends
/// count too, since the surrounding signs cannot both be checked there.
fn touching_zeros(times: &[f64], values: &[f64], threshold: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if values[i].abs() >= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && values[i].abs() < threshold {
            i += 1;
        }
        let sign_before = if start > 0 {
            Some(values[start - 1].signum())
        } else {
            None
        };
        let sign_after = if i < n { Some(values[i].signum()) } else { None };
        let crosses = matches!((sign_before, sign_after), (Some(a), Some(b)) if a != b);
        if !crosses {
            let best = (start..i)
                .min_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()))
                .unwrap();
            out.push(times[best]);
        }
    }
    out
}

/// The scan outcome for an extremal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimalityVerdict {
    /// Strengthened Legendre condition holds and no conjugate time was found
    /// on the scan window: the extremal is a weak local minimizer.
    Optimal,
    /// A conjugate time strictly inside the horizon was found in both
    /// pictures: the extremal is not a weak local minimizer.
    NotOptimal,
    /// The scan could not certify either way: Legendre failure, formulation
    /// disagreement, a boundary-grazing zero, or an unclassifiable touching
    /// zero.
    Inconclusive,
}

/// Everything [`optimality_verdict`] measured.
#[derive(Clone, Debug)]
pub struct ConjugateReport {
    pub legendre: LegendreReport,
    /// Determinant scan in the Hamiltonian picture (absent when the Legendre
    /// gate failed).
    pub hamiltonian: Option<DetScan>,
    /// Determinant scan in the Lagrangian picture.
    pub lagrangian: Option<DetScan>,
    /// Agreed first conjugate time (the Hamiltonian value when both pictures
    /// found one).
    pub conjugate_time: Option<f64>,
    /// `|t_c(Hamiltonian) − t_c(Lagrangian)|` when both pictures found one.
    pub formulation_gap: Option<f64>,
    pub verdict: OptimalityVerdict,
    /// Standing assumptions behind the verdict; see [`ASSUMPTIONS`].
    pub assumptions: &'static str,
}

/// Runs the full second-order analysis along a solved extremal: Legendre
/// scan, Jacobi bundles in both pictures, determinant scans, and the
/// cross-checked verdict.
///
/// A Legendre failure is reported as an inconclusive verdict rather than an
/// error; the two pictures must agree on the conjugate time to within
/// `10 · tol_t` for a definite answer, and a conjugate time within the same
/// slack of the horizon end is treated as boundary-grazing and therefore
/// inconclusive.
pub fn optimality_verdict(extremal: &Extremal, opts: &ConjugateOptions) -> Result<ConjugateReport> {
    let legendre = legendre_check(extremal, opts.legendre_margin)?;
    if legendre.verdict != LegendreVerdict::Strong {
        return Ok(ConjugateReport {
            legendre,
            hamiltonian: None,
            lagrangian: None,
            conjugate_time: None,
            formulation_gap: None,
            verdict: OptimalityVerdict::Inconclusive,
            assumptions: ASSUMPTIONS,
        });
    }

    let bundle_h = propagate_bundle(extremal, Formulation::Hamiltonian, opts)?;
    let bundle_l = propagate_bundle(extremal, Formulation::Lagrangian, opts)?;
    let scan_h = first_conjugate_time(&bundle_h, opts)?;
    let scan_l = first_conjugate_time(&bundle_l, opts)?;

    let horizon = extremal.horizon();
    let slack = 10.0 * opts.tol_t;
    let (conjugate_time, formulation_gap, verdict) = match (scan_h.first_zero, scan_l.first_zero) {
        (None, None) => {
            let touching =
                !scan_h.touching_zeros.is_empty() || !scan_l.touching_zeros.is_empty();
            let verdict = if touching {
                OptimalityVerdict::Inconclusive
            } else {
                OptimalityVerdict::Optimal
            };
            (None, None, verdict)
        }
        (Some(th), Some(tl)) => {
            let gap = (th - tl).abs();
            let verdict = if gap > slack {
                OptimalityVerdict::Inconclusive
            } else if th < horizon - slack {
                OptimalityVerdict::NotOptimal
            } else {
                OptimalityVerdict::Inconclusive
            };
            (Some(th), Some(gap), verdict)
        }
        (only_one, other) => (
            only_one.or(other),
            None,
            OptimalityVerdict::Inconclusive,
        ),
    };

    Ok(ConjugateReport {
        legendre,
        hamiltonian: Some(scan_h),
        lagrangian: Some(scan_l),
        conjugate_time,
        formulation_gap,
        verdict,
        assumptions: ASSUMPTIONS,
    })
}
