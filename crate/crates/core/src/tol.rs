//! Default numeric tolerances used across the crate.
//!
//! Every tolerance below is a module constant that callers may override per
//! call where the operation exposes a tolerance parameter. The environment
//! variable `PROOFBLOCKS_TOLERANCE_SCALE` multiplies all defaults, which is
//! useful for exploratory runs on badly scaled models; it does not affect
//! explicitly passed tolerances.

use std::sync::OnceLock;

/// LU pivot threshold, relative to the infinity norm of the matrix.
pub const LU_PIVOT_REL: f64 = 1e-12;
/// Residual bound for linear solves, relative to `1 + ||b||_inf`.
pub const LU_RESIDUAL_REL: f64 = 1e-10;
/// Asymmetry beyond this (relative to `||m||_inf`) is a caller bug.
pub const SYMMETRY_REL: f64 = 1e-6;
/// Default tolerance for the LDL^T positive-semidefinite check.
pub const PSD_DEFAULT: f64 = 1e-8;
/// Relative convergence tolerance of inverse power iteration.
pub const MIN_EIG_REL: f64 = 1e-9;
/// Iteration cap for inverse power iteration.
pub const MIN_EIG_MAX_ITERS: usize = 500;
/// Lyapunov equation residual bound, relative to `||Q||_inf`.
pub const LYAPUNOV_RESIDUAL_REL: f64 = 1e-8;
/// Riccati residual bound, relative to `1 + ||C^T C||_inf`.
pub const RICCATI_RESIDUAL_REL: f64 = 1e-7;
/// Newton iteration stop: `||P_{k+1} - P_k||_inf <= tol * (1 + ||P_k||_inf)`.
pub const NEWTON_STEP_REL: f64 = 1e-10;
/// Iteration cap for Newton-Kleinman.
pub const NEWTON_MAX_ITERS: usize = 100;
/// Relative step at which golden-section frequency refinement stops.
pub const FREQ_REFINE_REL: f64 = 1e-6;
/// Default assertion tolerance recorded in generated AssertLE0 blocks.
pub const ASSERT_DEFAULT: f64 = 1e-9;
/// Rate tolerance for finite-difference checks, relative to `1 + max|V|`.
pub const RATE_CHECK_REL: f64 = 1e-6;

static SCALE: OnceLock<f64> = OnceLock::new();

/// Global multiplier applied to all default tolerances, from
/// `PROOFBLOCKS_TOLERANCE_SCALE` (defaults to 1).
pub fn scale() -> f64 {
    *SCALE.get_or_init(|| {
        std::env::var("PROOFBLOCKS_TOLERANCE_SCALE")
            .ok()
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v > 0.0)
            .unwrap_or(1.0)
    })
}

/// A default tolerance after applying the global scale.
pub fn scaled(default: f64) -> f64 {
    default * scale()
}
