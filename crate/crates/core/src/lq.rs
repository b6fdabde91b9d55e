//! Linear-quadratic second-order problems in closed form.
//!
//! The problem class is
//!
//! ```text
//!     q̈ = A1 q + A2 q̇ + B u,
//!     C  = ½ (qᵀ Q1 q + q̇ᵀ Q2 q̇ + uᵀ R u),
//! ```
//!
//! with `R` symmetric positive definite and `Q1`, `Q2` merely symmetric —
//! indefinite or negative state weights are allowed (they are exactly what
//! produces conjugate points). For this class the extremal and Jacobi flows
//! are *linear with constant coefficients*, so this module writes down their
//! system matrices explicitly:
//!
//! * [`LqProblem::hamiltonian_matrix`] drives `(δq, δv, δλ_q, δλ_v)`,
//! * [`LqProblem::euler_lagrange_matrix`] drives `(δq, δq̇, δκ, δκ̇)`,
//! * [`LqProblem::formulation_transform`] is the constant linear map between
//!   those coordinates; it has unit determinant and intertwines the two
//!   system matrices exactly.
//!
//! These matrices double as oracles for the generic (nonlinear) code paths,
//! which must reproduce them when pointed at the same problem via
//! [`LqProblem::to_ocp`].

use crate::error::{Error, Result};
use crate::problem::{BoundaryData, DifferentiableMap, Dims, SecondOrderOcp, Var};
use crate::{Matrix, Vector};

/// Relative symmetry tolerance used by the constructor.
const SYM_TOL: f64 = 1e-12;

/// A linear-quadratic second-order problem (matrices only; boundary data is
/// supplied when converting to a [`SecondOrderOcp`]).
#[derive(Clone, Debug)]
pub struct LqProblem {
    /// Position coefficient of the dynamics (`nq × nq`).
    pub a1: Matrix,
    /// Velocity coefficient of the dynamics (`nq × nq`).
    pub a2: Matrix,
    /// Control matrix (`nq × m`).
    pub b: Matrix,
    /// Position cost weight (`nq × nq`, symmetric, any signature).
    pub q1: Matrix,
    /// Velocity cost weight (`nq × nq`, symmetric, any signature).
    pub q2: Matrix,
    /// Control cost weight (`m × m`, symmetric positive definite).
    pub r: Matrix,
}

fn require_symmetric(name: &str, m: &Matrix) -> Result<()> {
    let scale = 1.0 + m.abs().max();
    let asym = (m - m.transpose()).abs().max();
    if asym > SYM_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "{name} must be symmetric (asymmetry {asym:.3e})"
        )));
    }
    Ok(())
}

impl LqProblem {
    /// Validates shapes, symmetry of the weights, and positive definiteness
    /// of `R`.
    pub fn new(
        a1: Matrix,
        a2: Matrix,
        b: Matrix,
        q1: Matrix,
        q2: Matrix,
        r: Matrix,
    ) -> Result<Self> {
        let nq = a1.nrows();
        let m = b.ncols();
        if nq == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "LQ problem needs nq ≥ 1 and m ≥ 1".into(),
            ));
        }
        for (name, mat, shape) in [
            ("A1", &a1, (nq, nq)),
            ("A2", &a2, (nq, nq)),
            ("B", &b, (nq, m)),
            ("Q1", &q1, (nq, nq)),
            ("Q2", &q2, (nq, nq)),
            ("R", &r, (m, m)),
        ] {
            if mat.shape() != shape {
                return Err(Error::InvalidArgument(format!(
                    "{name} has shape {:?}, expected {:?}",
                    mat.shape(),
                    shape
                )));
            }
        }
        require_symmetric("Q1", &q1)?;
        require_symmetric("Q2", &q2)?;
        require_symmetric("R", &r)?;
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument(
                "R must be positive definite".into(),
            ));
        }
        Ok(LqProblem { a1, a2, b, q1, q2, r })
    }

    pub fn nq(&self) -> usize {
        self.a1.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `S = B R⁻¹ Bᵀ`, the control-elimination kernel.
    pub fn control_kernel(&self) -> Matrix {
        let chol = self
            .r
            .clone()
            .cholesky()
            .expect("R validated positive definite at construction");
        &self.b * chol.solve(&self.b.transpose())
    }

    /// System matrix of the extremal/Jacobi flow in Hamiltonian coordinates
    /// `(δq, δv, δλ_q, δλ_v)`:
    ///
    /// ```text
    ///     ⎡ 0    I    0    0   ⎤
    ///     ⎢ A1   A2   0    S   ⎥        S = B R⁻¹ Bᵀ.
    ///     ⎢ Q1   0    0   −A1ᵀ ⎥
    ///     ⎣ 0    Q2  −I   −A2ᵀ ⎦
    /// ```
    pub fn hamiltonian_matrix(&self) -> Matrix {
        let nq = self.nq();
        let s = self.control_kernel();
        let eye = Matrix::identity(nq, nq);
        let mut m = Matrix::zeros(4 * nq, 4 * nq);
        m.view_mut((0, nq), (nq, nq)).copy_from(&eye);
        m.view_mut((nq, 0), (nq, nq)).copy_from(&self.a1);
        m.view_mut((nq, nq), (nq, nq)).copy_from(&self.a2);
        m.view_mut((nq, 3 * nq), (nq, nq)).copy_from(&s);
        m.view_mut((2 * nq, 0), (nq, nq)).copy_from(&self.q1);
        m.view_mut((2 * nq, 3 * nq), (nq, nq))
            .copy_from(&(-self.a1.transpose()));
        m.view_mut((3 * nq, nq), (nq, nq)).copy_from(&self.q2);
        m.view_mut((3 * nq, 2 * nq), (nq, nq)).copy_from(&(-&eye));
        m.view_mut((3 * nq, 3 * nq), (nq, nq))
            .copy_from(&(-self.a2.transpose()));
        m
    }

    /// System matrix of the extremal/Jacobi flow in Lagrangian coordinates
    /// `(δq, δq̇, δκ, δκ̇)`:
    ///
    /// ```text
    ///     ⎡ 0        I      0        0   ⎤
    ///     ⎢ A1       A2     S        0   ⎥
    ///     ⎢ 0        0      0        I   ⎥
    ///     ⎣ Q2A1−Q1  Q2A2   A1ᵀ+Q2S −A2ᵀ ⎦
    /// ```
    pub fn euler_lagrange_matrix(&self) -> Matrix {
        let nq = self.nq();
        let s = self.control_kernel();
        let eye = Matrix::identity(nq, nq);
        let mut m = Matrix::zeros(4 * nq, 4 * nq);
        m.view_mut((0, nq), (nq, nq)).copy_from(&eye);
        m.view_mut((nq, 0), (nq, nq)).copy_from(&self.a1);
        m.view_mut((nq, nq), (nq, nq)).copy_from(&self.a2);
        m.view_mut((nq, 2 * nq), (nq, nq)).copy_from(&s);
        m.view_mut((2 * nq, 3 * nq), (nq, nq)).copy_from(&eye);
        m.view_mut((3 * nq, 0), (nq, nq))
            .copy_from(&(&self.q2 * &self.a1 - &self.q1));
        m.view_mut((3 * nq, nq), (nq, nq))
            .copy_from(&(&self.q2 * &self.a2));
        m.view_mut((3 * nq, 2 * nq), (nq, nq))
            .copy_from(&(self.a1.transpose() + &self.q2 * s));
        m.view_mut((3 * nq, 3 * nq), (nq, nq))
            .copy_from(&(-self.a2.transpose()));
        m
    }

    /// Constant linear map from Lagrangian to Hamiltonian coordinates,
    /// `(δq, δq̇, δκ, δκ̇) ↦ (δq, δv, δλ_q, δλ_v)` with
    /// `δλ_q = Q2 δq̇ − A2ᵀ δκ − δκ̇` and `δλ_v = δκ`:
    ///
    /// ```text
    ///     ⎡ I   0    0    0 ⎤
    ///     ⎢ 0   I    0    0 ⎥
    ///     ⎢ 0   Q2  −A2ᵀ −I ⎥
    ///     ⎣ 0   0    I    0 ⎦
    /// ```
    ///
    /// Its determinant is `±1` (the bottom-right `2nq × 2nq` corner is a
    /// symplectic-style swap), and it intertwines the two flows exactly:
    /// `T · M_el = M_ham · T`.
    pub fn formulation_transform(&self) -> Matrix {
        let nq = self.nq();
        let eye = Matrix::identity(nq, nq);
        let mut t = Matrix::zeros(4 * nq, 4 * nq);
        t.view_mut((0, 0), (nq, nq)).copy_from(&eye);
        t.view_mut((nq, nq), (nq, nq)).copy_from(&eye);
        t.view_mut((2 * nq, nq), (nq, nq)).copy_from(&self.q2);
        t.view_mut((2 * nq, 2 * nq), (nq, nq))
            .copy_from(&(-self.a2.transpose()));
        t.view_mut((2 * nq, 3 * nq), (nq, nq)).copy_from(&(-&eye));
        t.view_mut((3 * nq, 2 * nq), (nq, nq)).copy_from(&eye);
        t
    }

    /// Rank of the Kalman controllability matrix
    /// `[B̃, ÃB̃, …, Ã^{2nq−1}B̃]` for the first-order form
    /// `Ã = [[0, I], [A1, A2]]`, `B̃ = [[0], [B]]`, computed by
    /// column-pivoted QR with relative threshold `1e-10`.
    pub fn kalman_rank(&self) -> usize {
        let nq = self.nq();
        let m = self.m();
        let n = 2 * nq;
        let mut a = Matrix::zeros(n, n);
        a.view_mut((0, nq), (nq, nq))
            .copy_from(&Matrix::identity(nq, nq));
        a.view_mut((nq, 0), (nq, nq)).copy_from(&self.a1);
        a.view_mut((nq, nq), (nq, nq)).copy_from(&self.a2);
        let mut bt = Matrix::zeros(n, m);
        bt.view_mut((nq, 0), (nq, m)).copy_from(&self.b);

        let mut kalman = Matrix::zeros(n, n * m);
        let mut block = bt;
        for k in 0..n {
            kalman.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &a * block;
        }
        rank_col_piv_qr(&kalman, 1e-10)
    }

    /// Whether the underlying first-order pair is controllable
    /// (`kalman_rank == 2nq`).
    pub fn is_controllable(&self) -> bool {
        self.kalman_rank() == 2 * self.nq()
    }

    /// Wraps the LQ data as a generic problem with full analytic derivatives,
    /// attaching the given boundary data.
    pub fn to_ocp(&self, label: impl Into<String>, boundary: BoundaryData) -> Result<SecondOrderOcp> {
        let nq = self.nq();
        let m = self.m();
        let dims = Dims { nq, m };

        let (a1, a2, b) = (self.a1.clone(), self.a2.clone(), self.b.clone());
        let (q1, q2, r) = (self.q1.clone(), self.q2.clone(), self.r.clone());

        let dyn_dim = move |var: Var| match var {
            Var::Q | Var::V => nq,
            Var::U => m,
        };

        let dynamics = {
            let (a1, a2, b) = (a1.clone(), a2.clone(), b.clone());
            let (ja1, ja2, jb) = (a1.clone(), a2.clone(), b.clone());
            DifferentiableMap::from_value(nq, move |q: &Vector, v: &Vector, u: &Vector| {
                &a1 * q + &a2 * v + &b * u
            })
            .with_jacobian(Var::Q, move |_q, _v, _u| ja1.clone())
            .with_jacobian(Var::V, {
                let ja2 = ja2.clone();
                move |_q, _v, _u| ja2.clone()
            })
            .with_jacobian(Var::U, move |_q, _v, _u| jb.clone())
            .with_contracted_hessian(move |a, bb, _w, _q, _v, _u| {
                Matrix::zeros(dyn_dim(a), dyn_dim(bb))
            })
        };

        // 1×n dynamic row matrix from a column vector (the Jacobian shape of
        // a scalar map).
        fn as_row(v: Vector) -> Matrix {
            let n = v.len();
            Matrix::from_row_iterator(1, n, v.iter().copied())
        }

        let cost = {
            let (q1c, q2c, rc) = (q1.clone(), q2.clone(), r.clone());
            let (gq1, gq2, gr) = (q1.clone(), q2.clone(), r.clone());
            let (hq1, hq2, hr) = (q1.clone(), q2.clone(), r.clone());
            DifferentiableMap::from_value(1, move |q: &Vector, v: &Vector, u: &Vector| {
                let val = 0.5 * (q.dot(&(&q1c * q)) + v.dot(&(&q2c * v)) + u.dot(&(&rc * u)));
                Vector::from_element(1, val)
            })
            .with_jacobian(Var::Q, {
                let gq1 = gq1.clone();
                move |q: &Vector, _v, _u| as_row(&gq1 * q)
            })
            .with_jacobian(Var::V, {
                let gq2 = gq2.clone();
                move |_q, v: &Vector, _u| as_row(&gq2 * v)
            })
            .with_jacobian(Var::U, move |_q, _v, u: &Vector| as_row(&gr * u))
            .with_contracted_hessian(move |a, bb, w: &Vector, _q, _v, _u| match (a, bb) {
                (Var::Q, Var::Q) => w[0] * &hq1,
                (Var::V, Var::V) => w[0] * &hq2,
                (Var::U, Var::U) => w[0] * &hr,
                _ => Matrix::zeros(dyn_dim(a), dyn_dim(bb)),
            })
        };

        SecondOrderOcp::new(label, dims, dynamics, cost, boundary)
    }
}

/// Numerical rank by column-pivoted QR: diagonal entries of `R` below
/// `tol_rel · |R₀₀|` do not count.
fn rank_col_piv_qr(m: &Matrix, tol_rel: f64) -> usize {
    let qr = m.clone().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    if k == 0 {
        return 0;
    }
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return 0;
    }
    (0..k).take_while(|&i| r[(i, i)].abs() > tol_rel * lead).count()
}
