//! Decision-layer drivers: worst-case utility portfolio selection and
//! distributionally robust regression and classification over risk-aggregated
//! transport balls, plus the plain sample-average baseline.
//!
//! Each driver minimizes, over the decision, a closed-form worst-case
//! objective built from two kinds of term evaluated per sample: the empirical
//! loss plus a norm-weighted Lipschitz shift (the regularized branch), and the
//! loss at the sample's radius-sphere extreme (the sphere branch). Tail
//! aggregation at level `alpha` takes the larger of the two sample averages
//! with shift coefficient `1 - alpha`; expectile aggregation takes the larger
//! term per sample with shift coefficient `(1 - alpha) / alpha`. Which branch
//! carries the optimum depends on the decision itself, so every solve reports
//! branch tallies instead of leaving the choice implicit.
//!
//! Sphere terms are kept convex in the decision by splitting the scalar loss
//! at its monotone split `t0`: the nonincreasing part is evaluated at the left
//! sphere end and the nondecreasing part at the right end, each flattened to
//! the split value past `t0`. The pointwise maximum of the two equals the
//! sphere maximum of the unsplit loss.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{dot, DomainError, NormKind, Pwl1d, RiskSpec};
use crate::exec;
use crate::solver::project::{project_box, project_simplex};
use crate::solver::subgradient::{projected_subgradient, SubgradientProblem};
use crate::worst_case::norm_subgradient;

/// Outer subgradient budget per start, split across step-scale phases.
pub const DEFAULT_ITERATIONS: usize = 2000;
/// Multi-start count; starts use fixed seeds derived from the problem seed.
pub const DEFAULT_STARTS: usize = 5;
/// Step-scale phases per start; each phase shrinks the scale fivefold and
/// warm-starts at the best point so far.
const PHASES: usize = 4;

#[derive(Debug, Error)]
pub enum ApplicationError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{0} aggregation is not supported here; use a tail or expectile level")]
    UnsupportedFamily(&'static str),
    #[error("feasible set is empty: {0}")]
    EmptyFeasibleSet(String),
    #[error("classification target at sample {0} is not -1 or +1")]
    BadLabel(usize),
    #[error("loss is not symmetric about zero and no split was declared")]
    MissingSplit,
}

/// Ambiguity ball parameters carried by a decision problem: aggregation
/// family with its level, radius, and the ground norm on the sample space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallParams {
    pub risk: RiskSpec,
    pub radius: f64,
    pub norm: NormKind,
}

impl BallParams {
    /// Shift coefficient of the regularized branch and whether branches are
    /// resolved per sample (expectile) or on the aggregate (tail levels).
    ///
    /// The mean ball is the level-zero tail ball, and the level-one-half
    /// expectile ball coincides with it, so both route to the aggregate
    /// shape with coefficient one.
    fn branch_shape(&self) -> Result<(f64, bool), ApplicationError> {
        self.risk.validate()?;
        if !self.radius.is_finite() || self.radius < 0.0 {
            return Err(DomainError::BadRadius(self.radius).into());
        }
        match self.risk {
            RiskSpec::Expectation => Ok((1.0, false)),
            RiskSpec::Cvar { alpha } => Ok((1.0 - alpha, false)),
            RiskSpec::Expectile { alpha } if alpha == 0.5 => Ok((1.0, false)),
            RiskSpec::Expectile { alpha } => Ok(((1.0 - alpha) / alpha, true)),
            RiskSpec::EssSup => Err(ApplicationError::UnsupportedFamily("ess-sup")),
        }
    }
}

/// Worst-case utility portfolio selection over the probability simplex.
#[derive(Debug, Clone)]
pub struct PortfolioProblem {
    /// Per-period simple return samples, one scenario per row.
    pub returns: Vec<Vec<f64>>,
    /// Concave nondecreasing utility `t -> min_k (s_k t + c_k)` as
    /// (slope, intercept) pairs; every slope must be nonnegative.
    pub utility: Vec<(f64, f64)>,
    /// Optional per-asset bounds intersected with the simplex.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub ball: BallParams,
    /// Seed mixed into the multi-start initial points.
    pub seed: u64,
    /// Subgradient iteration budget per start.
    pub iterations: usize,
}

impl PortfolioProblem {
    pub fn new(returns: Vec<Vec<f64>>, utility: Vec<(f64, f64)>, ball: BallParams) -> Self {
        PortfolioProblem {
            returns,
            utility,
            bounds: None,
            ball,
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
        }
    }

    pub fn validate(&self) -> Result<(), ApplicationError> {
        if self.returns.is_empty() {
            return Err(DomainError::Empty.into());
        }
        let n = self.returns[0].len();
        if n == 0 {
            return Err(DomainError::DimensionMismatch { expected: 1, got: 0 }.into());
        }
        for row in &self.returns {
            if row.len() != n {
                return Err(DomainError::DimensionMismatch { expected: n, got: row.len() }.into());
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DomainError::NonFinite("return sample").into());
            }
        }
        if self.utility.is_empty() {
            return Err(DomainError::BadLoss("utility has no pieces".into()).into());
        }
        for &(s, c) in &self.utility {
            if !s.is_finite() || !c.is_finite() {
                return Err(DomainError::NonFinite("utility piece").into());
            }
            if s < 0.0 {
                return Err(DomainError::BadLoss(format!(
                    "utility slope {s} decreases; utilities must be nondecreasing"
                ))
                .into());
            }
        }
        self.ball.branch_shape()?;
        if let Some(b) = &self.bounds {
            if b.len() != n {
                return Err(DomainError::DimensionMismatch { expected: n, got: b.len() }.into());
            }
            let mut lo_sum = 0.0;
            let mut hi_sum = 0.0;
            for (j, &(lo, hi)) in b.iter().enumerate() {
                if lo.is_nan() || hi.is_nan() {
                    return Err(DomainError::NonFinite("asset bound").into());
                }
                let l = lo.max(0.0);
                let h = hi.min(1.0);
                if l > h + 1e-12 {
                    return Err(ApplicationError::EmptyFeasibleSet(format!(
                        "asset {j} bounds [{lo}, {hi}] clash with the simplex"
                    )));
                }
                lo_sum += l;
                hi_sum += h;
            }
            if lo_sum > 1.0 + 1e-12 {
                return Err(ApplicationError::EmptyFeasibleSet(format!(
                    "lower bounds claim total mass {lo_sum} > 1"
                )));
            }
            if hi_sum < 1.0 - 1e-12 {
                return Err(ApplicationError::EmptyFeasibleSet(format!(
                    "upper bounds cap total mass at {hi_sum} < 1"
                )));
            }
        }
        Ok(())
    }

    /// Bounds clipped to what the simplex allows, when any were given.
    fn effective_caps(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.bounds.as_ref().map(|b| {
            (
                b.iter().map(|&(lo, _)| lo.max(0.0)).collect(),
                b.iter().map(|&(_, hi)| hi.min(1.0)).collect(),
            )
        })
    }
}

/// Linear-predictor learning data shared by the regression and
/// classification drivers.
#[derive(Debug, Clone)]
pub struct LearningProblem {
    /// Feature rows.
    pub features: Vec<Vec<f64>>,
    /// Regression targets, or class labels in {-1, +1}.
    pub targets: Vec<f64>,
    /// Scalar convex loss `t -> max_k (s_k t + c_k)` applied to the residual
    /// (regression) or the margin (classification).
    pub loss: Pwl1d,
    /// Argument where the loss turns from nonincreasing to nondecreasing.
    /// Regression infers 0 for symmetric losses when omitted; classification
    /// ignores it (nonincreasing losses never turn).
    pub split: Option<f64>,
    /// Optional box for the coefficient vector; unconstrained otherwise.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub ball: BallParams,
    /// Seed mixed into the multi-start initial points.
    pub seed: u64,
    /// Subgradient iteration budget per start.
    pub iterations: usize,
}

impl LearningProblem {
    /// Regression problem with the absolute loss.
    pub fn regression(features: Vec<Vec<f64>>, targets: Vec<f64>, ball: BallParams) -> Self {
        LearningProblem {
            features,
            targets,
            loss: absolute_loss(),
            split: None,
            bounds: None,
            ball,
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
        }
    }

    /// Classification problem with the hinge loss.
    pub fn classification(features: Vec<Vec<f64>>, targets: Vec<f64>, ball: BallParams) -> Self {
        LearningProblem {
            features,
            targets,
            loss: hinge_loss(),
            split: None,
            bounds: None,
            ball,
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
        }
    }

    fn validate_common(&self) -> Result<(), ApplicationError> {
        if self.features.is_empty() || self.targets.len() != self.features.len() {
            return Err(DomainError::Empty.into());
        }
        let d = self.features[0].len();
        if d == 0 {
            return Err(DomainError::DimensionMismatch { expected: 1, got: 0 }.into());
        }
        for row in &self.features {
            if row.len() != d {
                return Err(DomainError::DimensionMismatch { expected: d, got: row.len() }.into());
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DomainError::NonFinite("feature").into());
            }
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite("target").into());
        }
        if self.loss.pieces.is_empty() {
            return Err(DomainError::BadLoss("loss has no pieces".into()).into());
        }
        if self.loss.pieces.iter().any(|&(s, c)| !s.is_finite() || !c.is_finite()) {
            return Err(DomainError::NonFinite("loss piece").into());
        }
        self.ball.branch_shape()?;
        if let Some(b) = &self.bounds {
            if b.len() != d {
                return Err(DomainError::DimensionMismatch { expected: d, got: b.len() }.into());
            }
            for (j, &(lo, hi)) in b.iter().enumerate() {
                if lo.is_nan() || hi.is_nan() {
                    return Err(DomainError::NonFinite("coefficient bound").into());
                }
                if lo > hi {
                    return Err(ApplicationError::EmptyFeasibleSet(format!(
                        "coefficient {j} bounds [{lo}, {hi}] are empty"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The declared split, validated, or 0 for symmetric losses.
    fn regression_split(&self) -> Result<f64, ApplicationError> {
        if let Some(t0) = self.split {
            if !t0.is_finite() {
                return Err(DomainError::NonFinite("split").into());
            }
            let left = self.loss.one_sided_slope(t0, false);
            let right = self.loss.one_sided_slope(t0, true);
            if left > 1e-9 || right < -1e-9 {
                return Err(DomainError::BadLoss(format!(
                    "split {t0} is not a monotone split (slopes {left}, {right})"
                ))
                .into());
            }
            return Ok(t0);
        }
        // Symmetric losses split at zero; symmetry is certified by every
        // piece having a slope-mirrored twin.
        let mirrored = self.loss.pieces.iter().all(|&(s, c)| {
            self.loss
                .pieces
                .iter()
                .any(|&(s2, c2)| (s2 + s).abs() <= 1e-9 && (c2 - c).abs() <= 1e-9)
        });
        if mirrored {
            Ok(0.0)
        } else {
            Err(ApplicationError::MissingSplit)
        }
    }

    fn check_labels(&self) -> Result<(), ApplicationError> {
        for (i, &y) in self.targets.iter().enumerate() {
            if y != 1.0 && y != -1.0 {
                return Err(ApplicationError::BadLabel(i));
            }
        }
        Ok(())
    }

    fn check_nonincreasing_loss(&self) -> Result<(), ApplicationError> {
        for &(s, _) in &self.loss.pieces {
            if s > 1e-12 {
                return Err(DomainError::BadLoss(format!(
                    "classification loss must be nonincreasing; found slope {s}"
                ))
                .into());
            }
        }
        Ok(())
    }
}

/// `|t|` as two affine pieces.
pub fn absolute_loss() -> Pwl1d {
    Pwl1d { pieces: vec![(1.0, 0.0), (-1.0, 0.0)] }
}

/// `max(0, 1 - t)` as two affine pieces.
pub fn hinge_loss() -> Pwl1d {
    Pwl1d { pieces: vec![(-1.0, 1.0), (0.0, 0.0)] }
}

/// Tangent-line surrogate of the saturating utility `1 - exp(-t)` at the
/// given touchpoints: concave, nondecreasing, exact wherever it touches.
pub fn exponential_utility(touchpoints: &[f64]) -> Vec<(f64, f64)> {
    touchpoints
        .iter()
        .map(|&t| {
            let s = (-t).exp();
            (s, 1.0 - s - t * s)
        })
        .collect()
}

/// Branch tallies from one driver solve. `shift` counts samples whose active
/// term is the Lipschitz shift (the norm-regularized branch); the rest sit on
/// sphere terms. Tail aggregation resolves the branch globally, so its counts
/// are always 0 or the full sample count.
#[derive(Debug, Clone, Serialize)]
pub struct BranchReport {
    /// Shift-active samples at the returned decision; ties report sphere.
    pub final_shift_count: usize,
    pub n_samples: usize,
    /// Shift-active samples at each objective evaluation of the winning
    /// start, in call order across all step phases.
    pub shift_counts: Vec<usize>,
    /// Subgradient iterations spent by the winning start.
    pub iterations: usize,
}

/// Decision, optimal worst-case objective value, and branch diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct DriverSolution {
    pub decision: Vec<f64>,
    pub value: f64,
    pub report: BranchReport,
}

/// Objective value at a fixed decision together with its branch tally.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveProbe {
    pub value: f64,
    /// Samples whose active term is the Lipschitz shift at this decision.
    pub shift_count: usize,
}

/// The worst-case objective of one driver, reduced to scalar form: sample
/// `i` contributes through the affine argument `r_i = carrier_i . v + offset_i`
/// and the dual-norm factor `q(v)` scales both the shift and the sphere reach.
struct Objective {
    carriers: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    f: Pwl1d,
    /// Monotone split of `f`; +inf when `f` never turns upward.
    split: f64,
    lip: f64,
    eps: f64,
    shift_coeff: f64,
    per_sample: bool,
    norm: NormKind,
    /// Append a fixed -1 coordinate before taking the dual norm, for losses
    /// of a residual `carrier . v - target` perturbed jointly with the target.
    augmented: bool,
}

/// Slope of the first active piece of `f` at `t`; ties break to the earliest
/// listed piece, matching the loss subgradient convention.
fn active_slope(f: &Pwl1d, t: f64) -> f64 {
    let v = f.eval(t);
    for &(s, c) in &f.pieces {
        if (s * t + c - v).abs() <= 1e-9 * (1.0 + v.abs()) {
            return s;
        }
    }
    f.pieces[0].0
}

impl Objective {
    fn dim(&self) -> usize {
        self.carriers[0].len()
    }

    /// Dual-norm factor `q(v)` with a subgradient written into `gq`.
    fn norm_factor(&self, v: &[f64], gq: &mut [f64]) -> f64 {
        let dual = self.norm.dual();
        if self.augmented {
            let mut aug = Vec::with_capacity(v.len() + 1);
            aug.extend_from_slice(v);
            aug.push(-1.0);
            let mut full = vec![0.0; aug.len()];
            norm_subgradient(dual, &aug, &mut full);
            gq.copy_from_slice(&full[..v.len()]);
            dual.eval(&aug)
        } else {
            norm_subgradient(dual, v, gq);
            dual.eval(v)
        }
    }

    /// Endpoint terms of the sphere branch: value and (clamped) slope of the
    /// nonincreasing part at `r - delta` and of the nondecreasing part at
    /// `r + delta`. Flattening past the split keeps each term convex in the
    /// decision without changing their maximum.
    fn endpoint_terms(&self, r: f64, delta: f64) -> (f64, f64, f64, f64) {
        let lo = r - delta;
        let hi = r + delta;
        let (t_lo, s_lo) = if lo < self.split {
            (self.f.eval(lo), active_slope(&self.f, lo).min(0.0))
        } else if self.split.is_finite() {
            (self.f.eval(self.split), 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        let (t_hi, s_hi) = if hi > self.split {
            (self.f.eval(hi), active_slope(&self.f, hi).max(0.0))
        } else if self.split.is_finite() {
            (self.f.eval(self.split), 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        (t_lo, s_lo, t_hi, s_hi)
    }

    /// Objective value at `v`, one subgradient written into `g`, and the
    /// count of shift-active samples. Ties go to the sphere terms, so a
    /// strict shift win is required to count; this matches the closed forms,
    /// where exact ties are attained by sphere maximizers.
    fn eval(&self, v: &[f64], g: &mut [f64]) -> (f64, usize) {
        let n = self.carriers.len();
        let w = 1.0 / n as f64;
        let mut gq = vec![0.0; v.len()];
        let q = self.norm_factor(v, &mut gq);
        let delta = self.eps * q;
        let shift_add = self.lip * self.shift_coeff * self.eps * q;
        let shift_slope = self.lip * self.shift_coeff * self.eps;
        g.fill(0.0);
        if self.per_sample {
            let mut total = 0.0;
            let mut shifts = 0;
            for (c, &d) in self.carriers.iter().zip(&self.offsets) {
                let r = dot(c, v) + d;
                let t1 = self.f.eval(r) + shift_add;
                let (t_lo, s_lo, t_hi, s_hi) = self.endpoint_terms(r, delta);
                let sphere = t_lo.max(t_hi);
                if t1 > sphere {
                    total += w * t1;
                    shifts += 1;
                    let s1 = active_slope(&self.f, r);
                    for j in 0..v.len() {
                        g[j] += w * (s1 * c[j] + shift_slope * gq[j]);
                    }
                } else if t_lo >= t_hi {
                    total += w * t_lo;
                    for j in 0..v.len() {
                        g[j] += w * s_lo * (c[j] - self.eps * gq[j]);
                    }
                } else {
                    total += w * t_hi;
                    for j in 0..v.len() {
                        g[j] += w * s_hi * (c[j] + self.eps * gq[j]);
                    }
                }
            }
            (total, shifts)
        } else {
            let mut erm = 0.0;
            let mut sphere = 0.0;
            for (c, &d) in self.carriers.iter().zip(&self.offsets) {
                let r = dot(c, v) + d;
                erm += w * self.f.eval(r);
                let (t_lo, _, t_hi, _) = self.endpoint_terms(r, delta);
                sphere += w * t_lo.max(t_hi);
            }
            let regularized = erm + shift_add;
            if regularized > sphere {
                for (c, &d) in self.carriers.iter().zip(&self.offsets) {
                    let r = dot(c, v) + d;
                    let s1 = active_slope(&self.f, r);
                    for j in 0..v.len() {
                        g[j] += w * s1 * c[j];
                    }
                }
                for j in 0..v.len() {
                    g[j] += shift_slope * gq[j];
                }
                (regularized, n)
            } else {
                for (c, &d) in self.carriers.iter().zip(&self.offsets) {
                    let r = dot(c, v) + d;
                    let (t_lo, s_lo, t_hi, s_hi) = self.endpoint_terms(r, delta);
                    if t_lo >= t_hi {
                        for j in 0..v.len() {
                            g[j] += w * s_lo * (c[j] - self.eps * gq[j]);
                        }
                    } else {
                        for j in 0..v.len() {
                            g[j] += w * s_hi * (c[j] + self.eps * gq[j]);
                        }
                    }
                }
                (sphere, 0)
            }
        }
    }
}

fn build_portfolio(p: &PortfolioProblem) -> Result<Objective, ApplicationError> {
    p.validate()?;
    let (shift_coeff, per_sample) = p.ball.branch_shape()?;
    // Minimizing the worst-case disutility -u; negating the concave utility
    // turns min-of-affine into the convex max-of-affine profile.
    let f = Pwl1d { pieces: p.utility.iter().map(|&(s, c)| (-s, -c)).collect() };
    let lip = f.max_abs_slope();
    Ok(Objective {
        carriers: p.returns.clone(),
        offsets: vec![0.0; p.returns.len()],
        f,
        split: f64::INFINITY,
        lip,
        eps: p.ball.radius,
        shift_coeff,
        per_sample,
        norm: p.ball.norm,
        augmented: false,
    })
}

fn build_regression(p: &LearningProblem) -> Result<Objective, ApplicationError> {
    p.validate_common()?;
    let split = p.regression_split()?;
    let (shift_coeff, per_sample) = p.ball.branch_shape()?;
    let lip = p.loss.max_abs_slope();
    Ok(Objective {
        carriers: p.features.clone(),
        offsets: p.targets.iter().map(|&y| -y).collect(),
        f: p.loss.clone(),
        split,
        lip,
        eps: p.ball.radius,
        shift_coeff,
        per_sample,
        norm: p.ball.norm,
        augmented: true,
    })
}

fn build_classification(p: &LearningProblem) -> Result<Objective, ApplicationError> {
    p.validate_common()?;
    p.check_labels()?;
    p.check_nonincreasing_loss()?;
    let (shift_coeff, per_sample) = p.ball.branch_shape()?;
    let lip = p.loss.max_abs_slope();
    // Labels are never perturbed, so they fold into the margin carriers and
    // the norm factor stays on the coefficient vector alone.
    let carriers = p
        .features
        .iter()
        .zip(&p.targets)
        .map(|(row, &y)| row.iter().map(|&v| y * v).collect())
        .collect();
    Ok(Objective {
        carriers,
        offsets: vec![0.0; p.features.len()],
        f: p.loss.clone(),
        split: f64::INFINITY,
        lip,
        eps: p.ball.radius,
        shift_coeff,
        per_sample,
        norm: p.ball.norm,
        augmented: false,
    })
}

struct RunOutcome {
    decision: Vec<f64>,
    value: f64,
    tallies: Vec<usize>,
    iterations: usize,
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Multi-start projected subgradient descent. Starts run concurrently; the
/// lowest final value wins, with exact ties broken toward the
/// lexicographically smaller decision, so the outcome does not depend on
/// scheduling.
fn minimize<P: Fn(&mut [f64]) + Sync>(
    obj: &Objective,
    project: &P,
    starts: Vec<Vec<f64>>,
    step_scale: f64,
    max_iters: usize,
) -> RunOutcome {
    let per_phase = (max_iters / PHASES).max(1);
    let runs = exec::par_map(starts, |start| {
        let tallies = RefCell::new(Vec::new());
        let objective = |v: &[f64], g: &mut [f64]| {
            let (val, shifts) = obj.eval(v, g);
            tallies.borrow_mut().push(shifts);
            val
        };
        let projector: &dyn Fn(&mut [f64]) = project;
        let mut best_v = f64::INFINITY;
        let mut best_x = start.clone();
        let mut x0 = start;
        let mut iterations = 0;
        for phase in 0..PHASES {
            let rep = projected_subgradient(&SubgradientProblem {
                objective: &objective,
                project: projector,
                x0: x0.clone(),
                step_scale: step_scale / 5f64.powi(phase as i32),
                max_iters: per_phase,
            });
            iterations += rep.iterations;
            if rep.value < best_v {
                best_v = rep.value;
                best_x = rep.x;
            }
            x0 = best_x.clone();
        }
        RunOutcome { decision: best_x, value: best_v, tallies: tallies.into_inner(), iterations }
    });
    let mut best = 0;
    for k in 1..runs.len() {
        let take = runs[k].value < runs[best].value
            || (runs[k].value == runs[best].value
                && lex_less(&runs[k].decision, &runs[best].decision));
        if take {
            best = k;
        }
    }
    runs.into_iter().nth(best).expect("at least one start")
}

/// Fixed-seed start points: a canonical feasible point first, then projected
/// uniform draws.
fn make_starts<P: Fn(&mut [f64])>(
    first: Vec<f64>,
    lo: f64,
    hi: f64,
    count: usize,
    seed: u64,
    project: &P,
) -> Vec<Vec<f64>> {
    let dim = first.len();
    let mut out = Vec::with_capacity(count);
    let mut canonical = first;
    project(&mut canonical);
    out.push(canonical);
    for k in 1..count {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_add((k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        );
        let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(lo..hi)).collect();
        project(&mut x);
        out.push(x);
    }
    out
}

fn finish(obj: &Objective, run: RunOutcome) -> DriverSolution {
    let mut scratch = vec![0.0; run.decision.len()];
    let (_, final_shifts) = obj.eval(&run.decision, &mut scratch);
    DriverSolution {
        decision: run.decision,
        value: run.value,
        report: BranchReport {
            final_shift_count: final_shifts,
            n_samples: obj.carriers.len(),
            shift_counts: run.tallies,
            iterations: run.iterations,
        },
    }
}

/// Exact Euclidean projection onto `{ lo <= x <= hi, sum x = 1 }` by
/// bisection on the simplex shift: the clamped coordinate map is monotone in
/// the shift, so the mass equation has a root in the bracket.
fn project_capped_simplex(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    let mass = |theta: f64| -> f64 {
        x.iter()
            .zip(lo.iter().zip(hi.iter()))
            .map(|(&v, (&l, &h))| (v - theta).clamp(l, h))
            .sum()
    };
    let mut a = f64::INFINITY;
    let mut b = f64::NEG_INFINITY;
    for ((&v, &l), &h) in x.iter().zip(lo).zip(hi) {
        a = a.min(v - h);
        b = b.max(v - l);
    }
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if mass(mid) >= 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let theta = 0.5 * (a + b);
    for (v, (&l, &h)) in x.iter_mut().zip(lo.iter().zip(hi.iter())) {
        *v = (*v - theta).clamp(l, h);
    }
}

/// Minimize the worst-case expected disutility over the simplex. The
/// reported value is the minimized objective; its negation is the utility
/// guaranteed against every distribution in the ball.
pub fn portfolio_optimize(problem: &PortfolioProblem) -> Result<DriverSolution, ApplicationError> {
    let obj = build_portfolio(problem)?;
    let n_assets = obj.dim();
    let caps = problem.effective_caps();
    let project = move |x: &mut [f64]| match &caps {
        Some((lo, hi)) => project_capped_simplex(x, lo, hi),
        None => project_simplex(x),
    };
    let uniform = vec![1.0 / n_assets as f64; n_assets];
    let starts = make_starts(uniform, 0.0, 1.0, DEFAULT_STARTS, problem.seed, &project);
    let run = minimize(&obj, &project, starts, 1.0, problem.iterations.max(PHASES));
    Ok(finish(&obj, run))
}

/// Minimize the worst-case expected regression loss over the coefficient
/// set. The sample space is the joint feature-target space, so the dual-norm
/// factor rides the augmented vector `(beta, -1)`.
pub fn dr_regression(problem: &LearningProblem) -> Result<DriverSolution, ApplicationError> {
    let obj = build_regression(problem)?;
    run_learning(problem, obj)
}

/// Minimize the worst-case expected classification loss over the coefficient
/// set. Labels are exempt from perturbation, so the dual-norm factor is on
/// the coefficient vector alone and sphere terms only push margins down.
pub fn dr_classification(problem: &LearningProblem) -> Result<DriverSolution, ApplicationError> {
    let obj = build_classification(problem)?;
    run_learning(problem, obj)
}

fn run_learning(
    problem: &LearningProblem,
    obj: Objective,
) -> Result<DriverSolution, ApplicationError> {
    let d = obj.dim();
    let bounds = problem.bounds.clone();
    let project = move |x: &mut [f64]| {
        if let Some(b) = &bounds {
            let lo: Vec<f64> = b.iter().map(|&(l, _)| l).collect();
            let hi: Vec<f64> = b.iter().map(|&(_, h)| h).collect();
            project_box(x, &lo, &hi);
        }
    };
    let starts = make_starts(vec![0.0; d], -1.0, 1.0, DEFAULT_STARTS, problem.seed, &project);
    let run = minimize(&obj, &project, starts, 4.0, problem.iterations.max(PHASES));
    Ok(finish(&obj, run))
}

/// A decision problem routed to its driver.
#[derive(Debug, Clone)]
pub enum Problem {
    Portfolio(PortfolioProblem),
    Regression(LearningProblem),
    Classification(LearningProblem),
}

/// The radius-zero specialization of the corresponding driver: plain sample
/// average minimization with the same decision set, solver, and tie-breaks.
pub fn saa_baseline(problem: &Problem) -> Result<(Vec<f64>, f64), ApplicationError> {
    match problem {
        Problem::Portfolio(p) => {
            let mut q = p.clone();
            q.ball.radius = 0.0;
            let s = portfolio_optimize(&q)?;
            Ok((s.decision, s.value))
        }
        Problem::Regression(p) => {
            let mut q = p.clone();
            q.ball.radius = 0.0;
            let s = dr_regression(&q)?;
            Ok((s.decision, s.value))
        }
        Problem::Classification(p) => {
            let mut q = p.clone();
            q.ball.radius = 0.0;
            let s = dr_classification(&q)?;
            Ok((s.decision, s.value))
        }
    }
}

/// Worst-case portfolio objective at a fixed allocation. Feasibility of the
/// allocation is the caller's concern; the value is well defined either way.
pub fn portfolio_objective(
    problem: &PortfolioProblem,
    x: &[f64],
) -> Result<ObjectiveProbe, ApplicationError> {
    let obj = build_portfolio(problem)?;
    probe(&obj, x)
}

/// Worst-case regression objective at fixed coefficients.
pub fn regression_objective(
    problem: &LearningProblem,
    beta: &[f64],
) -> Result<ObjectiveProbe, ApplicationError> {
    let obj = build_regression(problem)?;
    probe(&obj, beta)
}

/// Worst-case classification objective at fixed coefficients.
pub fn classification_objective(
    problem: &LearningProblem,
    beta: &[f64],
) -> Result<ObjectiveProbe, ApplicationError> {
    let obj = build_classification(problem)?;
    probe(&obj, beta)
}

fn probe(obj: &Objective, v: &[f64]) -> Result<ObjectiveProbe, ApplicationError> {
    if v.len() != obj.dim() {
        return Err(DomainError::DimensionMismatch { expected: obj.dim(), got: v.len() }.into());
    }
    let mut g = vec![0.0; v.len()];
    let (value, shift_count) = obj.eval(v, &mut g);
    Ok(ObjectiveProbe { value, shift_count })
}
