//! Worst-case expectation engines over Wasserstein-style ambiguity sets whose
//! transport cost is aggregated by a coherent risk measure (expectation, CVaR,
//! expectile, or essential supremum) instead of a plain mean.
//!
//! The crate is organized bottom-up:
//!
//! * [`domain`] - distributions, couplings, norms, support sets, piecewise
//!   linear losses, risk descriptors, ambiguity balls.
//! * [`risk`] - scalar risk measures (VaR, CVaR, expectile, ess-sup).
//! * [`solver`] - a dense simplex LP solver, projected subgradient, bisection
//!   and grid search. Everything downstream routes through these kernels.
//! * [`transport`] - oracle-grade risk-aggregated transport distances between
//!   small discrete distributions.
//! * [`worst_case`] - worst-case expectation engines: concave reductions,
//!   finite-dimensional convex programs, and closed forms, plus a brute-force
//!   grid oracle and attainability thresholds.
//! * [`applications`] - portfolio, regression and classification drivers.
//! * [`calibration`] - finite-sample and asymptotic radius selection.
//! * [`cli`] - command implementations behind the `wassrisk` binary.
//!
//! Determinism contract: every public computation is deterministic for fixed
//! inputs (and seed, where one is taken). Parallel execution only reorders
//! independent subproblem solves, never floating-point reductions; sums are
//! accumulated sequentially left-to-right over sample index.

pub mod applications;
pub mod calibration;
pub mod cli;
pub mod domain;
pub mod exec;
pub mod risk;
pub mod solver;
pub mod transport;
pub mod worst_case;
