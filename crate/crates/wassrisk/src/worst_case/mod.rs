//! Worst-case expectation of a loss over risk-aggregated transport balls.
//!
//! Engines split by loss shape. Concave (min-affine) losses keep one atom per
//! sample, so `concave` searches those atoms directly and prices them through
//! a conjugate dual. Convex piecewise linear losses split each sample across
//! up to one atom per piece; `cvar` and `expectile` solve the resulting
//! finite dimensional programs and collapse to two-branch closed forms on
//! unconstrained supports. `oracle` holds a gridded search used to
//! cross-check everything else.
//!
//! Worst cases that are only approached in the limit (mass escaping along a
//! steepest direction) are reported as symbolic [`AsymptoticFamily`] values
//! rather than huge finite atoms, so feasibility checks stay exact.

pub mod attain;
pub mod concave;
pub mod cvar;
pub mod expectile;
pub mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    dot, AffinePiece, AmbiguityBall, DiscreteDistribution, DomainError, LossFunction, NormKind,
    RiskSpec, SupportSet,
};
use crate::solver::SolverError;
use crate::transport::TransportError;

pub use attain::{attainability_threshold, AttainabilityReport, ThresholdFamily};
pub use concave::{wce_concave_dual, wce_concave_primal};
pub use cvar::{cvar_finite_dim_program, wce_closed_form_cvar, wce_cvx_pwl_cvar};
pub use expectile::{
    wce_closed_form_expectile, wce_cvx_pwl_expectile_dual, wce_cvx_pwl_expectile_primal,
};
pub use oracle::{brute_force_oracle, GridSpec};

#[derive(Debug, Error)]
pub enum WorstCaseError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("candidate grid needs {candidates} evaluations, over the cap {cap}")]
    GridTooLarge { candidates: u128, cap: u128 },
    #[error("dual program is unbounded; the ball has empty interior against this support")]
    DualUnbounded,
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

/// Which engine produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    ConcavePrimal,
    ConcaveDual,
    CvarFiniteDim,
    CvarClosedForm,
    ExpectilePrimal,
    ExpectileDual,
    ExpectileClosedForm,
    BruteForce,
}

/// Which part of a closed form carried the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveBranch {
    /// Every sample sits on its radius sphere maximizer.
    SphereMax,
    /// The budget rides the steepest slope as escaping mass.
    LipschitzShift,
    /// Per-sample split: how many samples take the slope branch.
    PerSample { lipschitz_count: usize },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub duality_gap: Option<f64>,
    pub active_branch: Option<ActiveBranch>,
}

/// Limit shape of one sample's mass inside a worst-case family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleLimit {
    /// The sample's whole mass sits at a fixed point for every scale.
    Fixed { point: Vec<f64> },
    /// Mass `mass_coefficient / s_n` escapes to `center + s_n * direction`
    /// while the rest stays at the center; `direction` has unit ball norm.
    TwoPoint { direction: Vec<f64>, mass_coefficient: f64 },
}

/// A sequence of distributions indexed by an escape scale, feasible at every
/// index and with objective increasing to the reported worst-case value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFamily {
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub per_sample: Vec<SampleLimit>,
    /// Escape scale at index `n` is `base_scale * n`. Invariant:
    /// `base_scale >= max(1, every mass_coefficient, ball radius)`, so member
    /// weights are probabilities and the risk budget holds at every `n >= 1`.
    pub base_scale: f64,
}

impl AsymptoticFamily {
    pub fn member(&self, n: usize) -> Result<DiscreteDistribution, DomainError> {
        let s = self.base_scale * n.max(1) as f64;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (i, limit) in self.per_sample.iter().enumerate() {
            match limit {
                SampleLimit::Fixed { point } => {
                    points.push(point.clone());
                    weights.push(self.weights[i]);
                }
                SampleLimit::TwoPoint { direction, mass_coefficient } => {
                    let q = mass_coefficient / s;
                    let far: Vec<f64> = self.centers[i]
                        .iter()
                        .zip(direction.iter())
                        .map(|(c, d)| c + s * d)
                        .collect();
                    points.push(self.centers[i].clone());
                    weights.push(self.weights[i] * (1.0 - q));
                    points.push(far);
                    weights.push(self.weights[i] * q);
                }
            }
        }
        DiscreteDistribution::new(points, weights)
    }
}

/// Worst case as a distribution when it exists, as a family otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstCaseDistribution {
    pub exact: Option<DiscreteDistribution>,
    pub family: Option<AsymptoticFamily>,
    pub attained: bool,
}

impl WorstCaseDistribution {
    pub fn exact(d: DiscreteDistribution) -> Self {
        WorstCaseDistribution { exact: Some(d), family: None, attained: true }
    }

    pub fn escaping(family: AsymptoticFamily) -> Self {
        WorstCaseDistribution { exact: None, family: Some(family), attained: false }
    }

    /// Optimum not attained and no certified family extracted.
    pub fn unresolved() -> Self {
        WorstCaseDistribution { exact: None, family: None, attained: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WceResult {
    pub value: f64,
    pub method: Method,
    pub worst_case: Option<WorstCaseDistribution>,
    pub diagnostics: Diagnostics,
}

impl WceResult {
    pub(crate) fn exact(
        value: f64,
        method: Method,
        dist: DiscreteDistribution,
        diagnostics: Diagnostics,
    ) -> Self {
        WceResult {
            value,
            method,
            worst_case: Some(WorstCaseDistribution::exact(dist)),
            diagnostics,
        }
    }

    pub fn attained(&self) -> bool {
        self.worst_case.as_ref().map(|w| w.attained).unwrap_or(false)
    }
}

/// Convert a convex loss into explicit affine pieces; composite losses fold
/// the scalar profile through the linear map.
pub(crate) fn pieces_for_convex(loss: &LossFunction) -> Result<Vec<AffinePiece>, WorstCaseError> {
    match loss {
        LossFunction::MaxAffine { pieces } => Ok(pieces.clone()),
        LossFunction::ScalarComposite { x, f, .. } => Ok(f
            .pieces
            .iter()
            .map(|&(s, c)| AffinePiece {
                gradient: x.iter().map(|&v| s * v).collect(),
                offset: c,
            })
            .collect()),
        LossFunction::MinAffine { .. } => Err(WorstCaseError::Unsupported(
            "convex engine got a concave loss; use the concave engines".into(),
        )),
    }
}

/// Unit (ball norm) direction realizing the largest growth rate of a convex
/// piecewise linear loss, with that rate. The first steepest piece wins ties,
/// so composite losses escape along their first-listed steepest tail.
pub(crate) fn escaping_direction(pieces: &[AffinePiece], norm: NormKind) -> (Vec<f64>, f64) {
    let mut best = 0;
    let mut rate = f64::NEG_INFINITY;
    for (j, p) in pieces.iter().enumerate() {
        let r = norm.dual_eval(&p.gradient);
        if r > rate {
            rate = r;
            best = j;
        }
    }
    (norm.unit_dual_realizer(&pieces[best].gradient), rate)
}

pub(crate) fn family_base_scale(eps: f64, mass_coefficients: &[f64]) -> f64 {
    mass_coefficients.iter().fold(eps.max(1.0), |m, &c| m.max(c))
}

/// A minimization loop for exact-penalty formulations: projected subgradient
/// steps with geometrically restarted step sizes, tracking the best value of
/// a caller-supplied feasibility restoration at every iterate. Returns the
/// best restored value (a certified feasible objective for the caller's
/// maximization), the restored variables and the iteration count.
pub(crate) struct PenaltyLoop<'a> {
    pub objective_grad: &'a dyn Fn(&[f64], &mut [f64]) -> f64,
    pub project: &'a dyn Fn(&mut [f64]),
    /// Maps an iterate to (feasible objective value to maximize, restored x).
    pub restore: &'a dyn Fn(&[f64]) -> (f64, Vec<f64>),
    pub x0: Vec<f64>,
    pub step0: f64,
    pub restarts: usize,
    pub iters: usize,
}

pub(crate) fn run_penalty_loop(p: &PenaltyLoop<'_>) -> (f64, Vec<f64>, usize) {
    let n = p.x0.len();
    let mut x = p.x0.clone();
    (p.project)(&mut x);
    let mut g = vec![0.0; n];
    let (mut best_v, mut best_x) = (p.restore)(&x);
    let mut total = 0;
    for r in 0..p.restarts {
        let step0 = p.step0 / (1u64 << r.min(48)) as f64;
        for k in 1..=p.iters {
            (p.objective_grad)(&x, &mut g);
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn <= 1e-15 {
                break;
            }
            let step = step0 / (k as f64).sqrt() / gn;
            for j in 0..n {
                x[j] -= step * g[j];
            }
            (p.project)(&mut x);
            total += 1;
            let (v, rx) = (p.restore)(&x);
            if v > best_v {
                best_v = v;
                best_x = rx;
            }
        }
    }
    (best_v, best_x, total)
}

/// Subgradient of the ball norm at `y`, written into `out`.
pub(crate) fn norm_subgradient(norm: NormKind, y: &[f64], out: &mut [f64]) {
    match norm {
        NormKind::L1 => {
            for (o, &v) in out.iter_mut().zip(y) {
                *o = if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
        }
        NormKind::L2 => {
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n <= 1e-15 {
                out.fill(0.0);
            } else {
                for (o, &v) in out.iter_mut().zip(y) {
                    *o = v / n;
                }
            }
        }
        NormKind::Linf => {
            out.fill(0.0);
            let mut best = 0;
            let mut mag = 0.0;
            for (k, &v) in y.iter().enumerate() {
                if v.abs() > mag {
                    mag = v.abs();
                    best = k;
                }
            }
            if mag > 0.0 {
                out[best] = y[best].signum();
            }
        }
    }
}

/// Support membership in perspective form: a displacement `y` carried by
/// weight `p` respects the support iff `normal_r . y <= rhs[i][r] * p` for
/// every row. Rows come from finite box ends or polyhedron facets; the rhs is
/// nonnegative because ball centers lie in the support.
pub(crate) struct PerspectiveRows {
    pub normals: Vec<Vec<f64>>,
    pub rhs: Vec<Vec<f64>>,
}

impl PerspectiveRows {
    pub fn build(support: &SupportSet, centers: &[Vec<f64>]) -> Self {
        let dim = centers.first().map(|c| c.len()).unwrap_or(0);
        let mut normals = Vec::new();
        match support {
            SupportSet::Unconstrained => {}
            SupportSet::Box { lower, upper } => {
                for k in 0..dim {
                    if upper[k].is_finite() {
                        let mut n = vec![0.0; dim];
                        n[k] = 1.0;
                        normals.push(n);
                    }
                    if lower[k].is_finite() {
                        let mut n = vec![0.0; dim];
                        n[k] = -1.0;
                        normals.push(n);
                    }
                }
            }
            SupportSet::Polyhedron { g, .. } => normals = g.clone(),
        }
        let rhs = centers
            .iter()
            .map(|c| match support {
                SupportSet::Unconstrained => Vec::new(),
                SupportSet::Box { lower, upper } => {
                    let mut r = Vec::new();
                    for k in 0..dim {
                        if upper[k].is_finite() {
                            r.push((upper[k] - c[k]).max(0.0));
                        }
                        if lower[k].is_finite() {
                            r.push((c[k] - lower[k]).max(0.0));
                        }
                    }
                    r
                }
                SupportSet::Polyhedron { g, h } => g
                    .iter()
                    .zip(h.iter())
                    .map(|(row, &hr)| (hr - dot(row, c)).max(0.0))
                    .collect(),
            })
            .collect();
        PerspectiveRows { normals, rhs }
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    /// Restore every row of sample `i` at weight `p`. Axis-aligned rows
    /// (all box rows are) get an exact per-coordinate clamp; remaining
    /// general rows fall back to scaling `y` toward zero, which cannot
    /// re-violate a clamped row because row bounds are nonnegative.
    pub fn clip(&self, i: usize, y: &mut [f64], p: f64) {
        let pm = p.max(0.0);
        for (normal, &r) in self.normals.iter().zip(&self.rhs[i]) {
            if let Some(k) = single_axis(normal) {
                let bound = r * pm;
                if normal[k] * y[k] > bound {
                    y[k] = bound / normal[k];
                }
            }
        }
        let mut s = 1.0f64;
        for (normal, &r) in self.normals.iter().zip(&self.rhs[i]) {
            if single_axis(normal).is_some() {
                continue;
            }
            let d = dot(normal, y);
            let bound = r * pm;
            if d > bound {
                s = s.min(if d > 1e-300 { bound / d } else { 0.0 });
            }
        }
        if s < 1.0 {
            for v in y.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Sum of positive row violations for sample `i`; accumulates
    /// `scale * d(violation)` into the `y` and `p` gradient slots.
    pub fn penalty_accum(
        &self,
        i: usize,
        y: &[f64],
        p: f64,
        scale: f64,
        gy: &mut [f64],
        gp: &mut f64,
    ) -> f64 {
        let mut total = 0.0;
        for (normal, &r) in self.normals.iter().zip(&self.rhs[i]) {
            let v = dot(normal, y) - r * p;
            if v > 0.0 {
                total += v;
                for (g, n) in gy.iter_mut().zip(normal) {
                    *g += scale * n;
                }
                *gp -= scale * r;
            }
        }
        total
    }
}

fn single_axis(normal: &[f64]) -> Option<usize> {
    let mut idx = None;
    for (k, &v) in normal.iter().enumerate() {
        if v != 0.0 {
            if idx.is_some() {
                return None;
            }
            idx = Some(k);
        }
    }
    idx
}

/// Assemble an explicit distribution from perspective coordinates: atom
/// `center_i + y_ij / p_ij` with mass `w_i p_ij`. Atoms with vanishing
/// weight but non-vanishing displacement are escaping mass with no finite
/// representation, signalled by `None`.
pub(crate) fn perspective_distribution(
    centers: &[Vec<f64>],
    w: &[f64],
    weights: &[Vec<f64>],
    displacements: &[Vec<Vec<f64>>],
) -> Option<DiscreteDistribution> {
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for (i, c) in centers.iter().enumerate() {
        for (j, y) in displacements[i].iter().enumerate() {
            let p = weights[i][j];
            if p > 1e-9 {
                points.push(c.iter().zip(y).map(|(x, d)| x + d / p).collect::<Vec<f64>>());
                masses.push(w[i] * p);
            } else if y.iter().any(|d| d.abs() > 1e-7) {
                return None;
            }
        }
    }
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return None;
    }
    for m in masses.iter_mut() {
        *m /= total;
    }
    DiscreteDistribution::new(points, masses).ok()
}

fn with_risk(ball: &AmbiguityBall, risk: RiskSpec) -> AmbiguityBall {
    AmbiguityBall { risk, ..ball.clone() }
}

/// Bounded-displacement (ess-sup) ball against a convex loss: every sample
/// may move anywhere within the radius, so the value is the weighted sum of
/// sphere maxima. Tagged as the CVaR closed form it is the level-to-one
/// limit of.
fn bounded_shift(loss: &LossFunction, ball: &AmbiguityBall) -> Result<WceResult, WorstCaseError> {
    if !ball.support.is_unconstrained() {
        return Err(WorstCaseError::Unsupported(
            "bounded-displacement ball over a constrained support; take a CVaR level near one"
                .into(),
        ));
    }
    let mut value = 0.0;
    let mut atoms = Vec::new();
    for (c, &wi) in ball.center.points().iter().zip(ball.center.weights()) {
        let sm = loss.sphere_max(c, ball.radius, ball.norm)?;
        value += wi * sm.value;
        atoms.push(c.iter().zip(sm.direction.iter()).map(|(x, e)| x + ball.radius * e).collect());
    }
    let dist = DiscreteDistribution::new(atoms, ball.center.weights().to_vec())?;
    Ok(WceResult::exact(
        value,
        Method::CvarClosedForm,
        dist,
        Diagnostics { iterations: 0, duality_gap: None, active_branch: Some(ActiveBranch::SphereMax) },
    ))
}

/// Route a (loss, ball) pair to the right engine.
///
/// Unconstrained supports take the closed forms. Constrained supports take
/// the dual linear program when the ground norm is polyhedral and the primal
/// subgradient engine otherwise. Expectation balls reuse the CVaR machinery
/// at level zero (the two aggregators coincide there); expectile level one
/// half does the same. Ess-sup balls reduce to per-sample sphere maxima.
pub fn worst_case_expectation(
    loss: &LossFunction,
    ball: &AmbiguityBall,
) -> Result<WceResult, WorstCaseError> {
    loss.validate()?;
    if loss.dim() != ball.dim() {
        return Err(DomainError::DimensionMismatch { expected: ball.dim(), got: loss.dim() }.into());
    }
    if !loss.is_convex() {
        if matches!(ball.risk, RiskSpec::EssSup) {
            return Err(WorstCaseError::Unsupported(
                "bounded-displacement ball with a concave loss; take a CVaR level near one".into(),
            ));
        }
        return match ball.norm {
            NormKind::L1 | NormKind::Linf => wce_concave_dual(loss, ball),
            NormKind::L2 => wce_concave_primal(loss, ball),
        };
    }
    match ball.risk {
        RiskSpec::EssSup => bounded_shift(loss, ball),
        RiskSpec::Expectation => {
            wce_cvx_pwl_cvar(loss, &with_risk(ball, RiskSpec::Cvar { alpha: 0.0 }))
        }
        RiskSpec::Cvar { .. } => wce_cvx_pwl_cvar(loss, ball),
        RiskSpec::Expectile { alpha } if alpha == 0.5 => {
            wce_cvx_pwl_cvar(loss, &with_risk(ball, RiskSpec::Cvar { alpha: 0.0 }))
        }
        RiskSpec::Expectile { alpha } => {
            if ball.support.is_unconstrained() {
                wce_closed_form_expectile(loss, &ball.center, ball.radius, alpha, ball.norm)
            } else {
                match ball.norm {
                    NormKind::L1 | NormKind::Linf => wce_cvx_pwl_expectile_dual(loss, ball),
                    NormKind::L2 => wce_cvx_pwl_expectile_primal(loss, ball),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tent() -> LossFunction {
        LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![-1.0], offset: 0.0 },
            ],
        }
    }

    #[test]
    fn family_member_weights_are_probabilities() {
        let fam = AsymptoticFamily {
            centers: vec![vec![0.0], vec![2.0]],
            weights: vec![0.5, 0.5],
            per_sample: vec![
                SampleLimit::Fixed { point: vec![0.3] },
                SampleLimit::TwoPoint { direction: vec![1.0], mass_coefficient: 0.4 },
            ],
            base_scale: 1.0,
        };
        for n in [1, 7, 100] {
            let d = fam.member(n).unwrap();
            assert_eq!(d.n_atoms(), 3);
            assert!(d.weights().iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
        // Escaping mass shrinks like 1/n while the far point moves out like n.
        let d = fam.member(10).unwrap();
        assert!((d.weights()[2] - 0.5 * 0.04).abs() < 1e-12);
        assert!((d.points()[2][0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn escaping_direction_picks_steepest_piece() {
        let pieces = vec![
            AffinePiece { gradient: vec![0.5, 0.0], offset: 1.0 },
            AffinePiece { gradient: vec![3.0, -4.0], offset: -2.0 },
        ];
        let (dir, rate) = escaping_direction(&pieces, NormKind::L2);
        assert!((rate - 5.0).abs() < 1e-12);
        assert!((dir[0] - 0.6).abs() < 1e-12 && (dir[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn dispatcher_rejects_mismatched_dimensions() {
        let ball = AmbiguityBall::new(
            RiskSpec::Cvar { alpha: 0.3 },
            NormKind::L2,
            0.1,
            DiscreteDistribution::uniform(vec![vec![0.0, 0.0]]).unwrap(),
            crate::domain::SupportSet::Unconstrained,
        )
        .unwrap();
        assert!(worst_case_expectation(&tent(), &ball).is_err());
    }

    #[test]
    fn ess_sup_ball_takes_sphere_values() {
        let ball = AmbiguityBall::new(
            RiskSpec::EssSup,
            NormKind::L2,
            0.25,
            DiscreteDistribution::uniform(vec![vec![0.0], vec![1.0]]).unwrap(),
            crate::domain::SupportSet::Unconstrained,
        )
        .unwrap();
        let r = worst_case_expectation(&tent(), &ball).unwrap();
        // Sphere maxima: 0.25 around 0, 1.25 around 1.
        assert!((r.value - 0.75).abs() < 1e-12);
        assert!(r.attained());
    }

    proptest! {
        #[test]
        fn two_point_members_converge_to_centers(mass in 0.01f64..0.9, scale in 1.0f64..4.0) {
            let fam = AsymptoticFamily {
                centers: vec![vec![1.0]],
                weights: vec![1.0],
                per_sample: vec![SampleLimit::TwoPoint { direction: vec![1.0], mass_coefficient: mass }],
                base_scale: scale.max(mass),
            };
            let d = fam.member(1000).unwrap();
            prop_assert!(d.weights()[1] < 1e-3);
            prop_assert!(d.weights()[0] > 0.999);
        }
    }
}
