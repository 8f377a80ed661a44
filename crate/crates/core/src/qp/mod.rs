//! Convex QP solvers.
//!
//! [`solve_sparse_qp`] handles the structured search-direction QP of the SGCL
//! iteration. It is a proximal augmented Lagrangian method whose inner problems are
//! solved by semismooth Newton steps with an exact line search, so it needs neither
//! linearly independent active constraints nor a strictly feasible point.
//!
//! [`solve_projection_qp`] is a small dense primal active-set method for the
//! skewed projection onto a polyhedral set, with warm-started working sets.

mod projection;
mod sparse;

pub use projection::{solve_projection_qp, ProjectionSolution};
pub use sparse::{solve_penalty_qp, solve_sparse_qp, solve_sparse_qp_with, QpSettings};

use crate::linalg::{norm_inf, SparseMatrix};
use crate::{Error, Result};

/// `min ½ xᵀHx + gradientᵀx  s.t.  A_eq x = b_eq,  A_in x ≥ b_in`.
///
/// The multipliers follow the Lagrangian `½xᵀHx + gᵀx + yᵀ(A_eq x − b_eq) − zᵀ(A_in x − b_in)`
/// with `z ≥ 0`.
#[derive(Debug, Clone)]
pub struct SparseQp {
    pub hessian: SparseMatrix,
    pub gradient: Vec<f64>,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: SparseMatrix,
    pub b_in: Vec<f64>,
}

impl SparseQp {
    pub fn new(
        hessian: SparseMatrix,
        gradient: Vec<f64>,
        a_eq: SparseMatrix,
        b_eq: Vec<f64>,
        a_in: SparseMatrix,
        b_in: Vec<f64>,
    ) -> Result<Self> {
        let n = gradient.len();
        let bad = |what: &str| Err(Error::InvalidArgument(format!("QP dimension mismatch: {what}")));
        if hessian.nrows() != n || hessian.ncols() != n {
            return bad("hessian");
        }
        if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return bad("equality block");
        }
        if a_in.ncols() != n || a_in.nrows() != b_in.len() {
            return bad("inequality block");
        }
        if hessian.max_asymmetry() > 1e-12 {
            return Err(Error::InvalidArgument("QP hessian is not symmetric".into()));
        }
        Ok(Self {
            hessian,
            gradient,
            a_eq,
            b_eq,
            a_in,
            b_in,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn num_in(&self) -> usize {
        self.b_in.len()
    }

    /// KKT residual components at a primal-dual point.
    pub fn kkt_residuals(&self, x: &[f64], y: &[f64], z: &[f64]) -> KktResiduals {
        let mut stat = self.hessian.mul_vec(x);
        for (s, g) in stat.iter_mut().zip(&self.gradient) {
            *s += g;
        }
        self.a_eq.tr_mul_acc(y, 1.0, &mut stat);
        self.a_in.tr_mul_acc(z, -1.0, &mut stat);
        let eq: Vec<f64> = self
            .a_eq
            .mul_vec(x)
            .iter()
            .zip(&self.b_eq)
            .map(|(a, b)| a - b)
            .collect();
        let slack: Vec<f64> = self
            .a_in
            .mul_vec(x)
            .iter()
            .zip(&self.b_in)
            .map(|(a, b)| a - b)
            .collect();
        KktResiduals {
            stationarity: norm_inf(&stat),
            equality: norm_inf(&eq),
            inequality: slack.iter().fold(0.0_f64, |m, s| m.max(-s)),
            complementarity: slack.iter().zip(z).fold(0.0_f64, |m, (s, zi)| m.max((s * zi).abs())),
            dual_sign: z.iter().fold(0.0_f64, |m, zi| m.max(-zi)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub equality: f64,
    pub inequality: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.equality)
            .max(self.inequality)
            .max(self.complementarity)
            .max(self.dual_sign)
    }

    pub fn primal(&self) -> f64 {
        self.equality.max(self.inequality)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: Vec<f64>,
    pub eq_multipliers: Vec<f64>,
    pub in_multipliers: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub newton_steps: usize,
}
