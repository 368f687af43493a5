//! Convex optimization kernels: dense simplex LP solver, projected
//! subgradient descent, bisection and grid search, plus shared projections.
//!
//! All tolerances are centralized in [`Tolerances`] so downstream modules pin
//! one set of numeric contracts.

pub mod lp;
pub mod project;
pub mod scalar;
pub mod subgradient;

pub use lp::{lp_debug_text, lp_solve, LinearProgram, LpOutcome, LpRow, LpSolution, Rel};
pub use scalar::{bisect, grid_min};
pub use subgradient::{projected_subgradient, SubgradientProblem, SubgradientReport};

use thiserror::Error;

/// Shared numeric tolerances. Downstream code reads these rather than
/// scattering magic numbers.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Max KKT residual accepted from an `Optimal` LP solve.
    pub lp_kkt: f64,
    /// Declared accuracy of subgradient solves (relative, best effort).
    pub subgradient: f64,
    /// Interval width at which scalar bisection stops.
    pub bisect: f64,
}

impl Tolerances {
    pub const fn default_const() -> Self {
        Tolerances {
            lp_kkt: 1e-7,
            subgradient: 1e-5,
            bisect: 1e-9,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::default_const()
    }
}

/// Default tolerances used by every module unless a caller overrides them.
pub const TOL: Tolerances = Tolerances::default_const();

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("malformed program: {0}")]
    BadProgram(String),
    #[error("iteration limit exceeded (cycling guard)")]
    IterationLimit,
    #[error("numerical failure: {0}")]
    Numerical(String),
}
