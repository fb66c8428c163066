//! Self-contained dense real linear algebra.
//!
//! Everything at desk scale (n on the order of ten): row-major dense
//! storage, partial-pivoting LU, Cholesky, pivoted LDL^T semidefinite
//! checks, Kronecker products, a Pade matrix exponential, and an inverse
//! power iteration for the smallest eigenvalue of a symmetric
//! positive-definite matrix.

mod expm;
mod matrix;
mod solve;

pub use expm::expm;
pub use matrix::{kron, matmul, vec_dot, vec_inf_norm, Matrix};
pub use solve::{
    cholesky, lu_solve, lu_solve_with, min_eig_pair, min_eig_symmetric, semidefinite_check,
    PsdOutcome,
};

use thiserror::Error;

/// Errors of the numeric kernel. `NotPositiveDefinite` is a signal, not a
/// failure: certificate verification branches on it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular to working precision")]
    SingularMatrix,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e} exceeds {limit:.3e})")]
    NotSymmetric { asymmetry: f64, limit: f64 },
    #[error("iteration did not converge within {0} steps")]
    NoConvergence(usize),
}
