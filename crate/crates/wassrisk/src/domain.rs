//! Core vocabulary: discrete distributions, couplings, ground norms, support
//! sets, piecewise linear losses, risk descriptors and ambiguity balls.
//!
//! Everything here is immutable after construction; constructors validate and
//! return errors instead of panicking. Weight sums are checked to 1e-12,
//! coupling marginals to 1e-10.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::{self, lp::LpBuilder, LpOutcome, Rel};

/// Absolute tolerance on weight sums.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Absolute tolerance on coupling marginals.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("empty distribution")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("weights sum to {0}, not 1")]
    WeightSum(f64),
    #[error("coupling marginal mismatch on the {side} side at atom {index}: {got} vs {expected}")]
    MarginalMismatch { side: &'static str, index: usize, got: f64, expected: f64 },
    #[error("invalid risk parameter: {0}")]
    BadRisk(String),
    #[error("invalid radius {0}")]
    BadRadius(f64),
    #[error("support set is empty or malformed: {0}")]
    BadSupport(String),
    #[error("center atom {0} lies outside the support set")]
    CenterOutsideSupport(usize),
    #[error("loss is malformed: {0}")]
    BadLoss(String),
    #[error("operation not supported for this loss shape: {0}")]
    UnsupportedLoss(&'static str),
}

/// Ground norms on the sample space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

impl NormKind {
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
            NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::Linf => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        }
    }

    /// The dual norm: L1 <-> Linf, L2 self-dual.
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::L1 => NormKind::Linf,
            NormKind::L2 => NormKind::L2,
            NormKind::Linf => NormKind::L1,
        }
    }

    pub fn dual_eval(self, v: &[f64]) -> f64 {
        self.dual().eval(v)
    }

    /// A direction `e` with `||e|| = 1` (in this norm) maximizing `a . e`,
    /// i.e. attaining `a . e = ||a||_dual`. Deterministic tie-breaking; for
    /// `a = 0` returns the first basis vector.
    pub fn unit_dual_realizer(self, a: &[f64]) -> Vec<f64> {
        let m = a.len();
        let mut e = vec![0.0; m];
        if a.iter().all(|&v| v == 0.0) {
            if m > 0 {
                e[0] = 1.0;
            }
            return e;
        }
        match self {
            NormKind::L2 => {
                let n = NormKind::L2.eval(a);
                for j in 0..m {
                    e[j] = a[j] / n;
                }
            }
            NormKind::L1 => {
                // ||e||_1 = 1: all mass on a largest-|a| coordinate.
                let mut k = 0;
                for j in 1..m {
                    if a[j].abs() > a[k].abs() {
                        k = j;
                    }
                }
                e[k] = a[k].signum();
            }
            NormKind::Linf => {
                // ||e||_inf = 1: sign pattern of a.
                for j in 0..m {
                    e[j] = if a[j] == 0.0 { 0.0 } else { a[j].signum() };
                }
            }
        }
        e
    }

    pub fn distance(self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let diff: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a - b).collect();
        self.eval(&diff)
    }
}

/// A finitely supported distribution on R^m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, DomainError> {
        if points.is_empty() || weights.len() != points.len() {
            return Err(DomainError::Empty);
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(DomainError::DimensionMismatch { expected: 1, got: 0 });
        }
        for p in &points {
            if p.len() != dim {
                return Err(DomainError::DimensionMismatch { expected: dim, got: p.len() });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(DomainError::NonFinite("point"));
            }
        }
        let mut sum = 0.0;
        for &w in &weights {
            if !w.is_finite() {
                return Err(DomainError::NonFinite("weight"));
            }
            if w < -WEIGHT_TOL {
                return Err(DomainError::NegativeWeight(w));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_TOL * points.len() as f64 {
            return Err(DomainError::WeightSum(sum));
        }
        let weights = weights.into_iter().map(|w| w.max(0.0)).collect();
        Ok(DiscreteDistribution { points, weights })
    }

    /// Uniform empirical distribution on the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self, DomainError> {
        let n = points.len();
        if n == 0 {
            return Err(DomainError::Empty);
        }
        let w = 1.0 / n as f64;
        DiscreteDistribution::new(points, vec![w; n])
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self, DomainError> {
        DiscreteDistribution::new(vec![point], vec![1.0])
    }

    pub fn n_atoms(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.n_atoms() as f64;
        self.weights.iter().all(|&v| (v - w).abs() <= 1e-9)
    }

    /// E[f(X)], accumulated left-to-right over atom index.
    pub fn expectation_of(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut s = 0.0;
        for (p, &w) in self.points.iter().zip(self.weights.iter()) {
            s += w * f(p);
        }
        s
    }
}

/// A joint distribution over pairs of atoms with validated marginals.
#[derive(Debug, Clone)]
pub struct Coupling {
    left_points: Vec<Vec<f64>>,
    right_points: Vec<Vec<f64>>,
    /// Row-major joint weights, `weights[i][j] = mass on (left i, right j)`.
    joint: Vec<Vec<f64>>,
}

impl Coupling {
    pub fn new(
        left: &DiscreteDistribution,
        right: &DiscreteDistribution,
        joint: Vec<Vec<f64>>,
    ) -> Result<Self, DomainError> {
        if left.dim() != right.dim() {
            return Err(DomainError::DimensionMismatch { expected: left.dim(), got: right.dim() });
        }
        if joint.len() != left.n_atoms() || joint.iter().any(|r| r.len() != right.n_atoms()) {
            return Err(DomainError::Empty);
        }
        for row in &joint {
            for &v in row {
                if !v.is_finite() {
                    return Err(DomainError::NonFinite("joint weight"));
                }
                if v < -WEIGHT_TOL {
                    return Err(DomainError::NegativeWeight(v));
                }
            }
        }
        for (i, row) in joint.iter().enumerate() {
            let got: f64 = row.iter().sum();
            if (got - left.weights()[i]).abs() > MARGINAL_TOL {
                return Err(DomainError::MarginalMismatch {
                    side: "left",
                    index: i,
                    got,
                    expected: left.weights()[i],
                });
            }
        }
        for j in 0..right.n_atoms() {
            let got: f64 = joint.iter().map(|row| row[j]).sum();
            if (got - right.weights()[j]).abs() > MARGINAL_TOL {
                return Err(DomainError::MarginalMismatch {
                    side: "right",
                    index: j,
                    got,
                    expected: right.weights()[j],
                });
            }
        }
        Ok(Coupling {
            left_points: left.points().to_vec(),
            right_points: right.points().to_vec(),
            joint,
        })
    }

    pub fn joint(&self) -> &[Vec<f64>] {
        &self.joint
    }

    /// The transport-cost random variable `||xi_1 - xi_2||` under the joint:
    /// parallel lists of cost values and weights (zero-weight pairs skipped).
    pub fn cost_values(&self, norm: NormKind) -> (Vec<f64>, Vec<f64>) {
        let mut costs = Vec::new();
        let mut weights = Vec::new();
        for (i, row) in self.joint.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    costs.push(norm.distance(&self.left_points[i], &self.right_points[j]));
                    weights.push(w);
                }
            }
        }
        (costs, weights)
    }
}

/// Where worst-case distributions are allowed to live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SupportSet {
    Unconstrained,
    /// Componentwise box; infinite ends allowed.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{ x : G x <= h }`.
    Polyhedron { g: Vec<Vec<f64>>, h: Vec<f64> },
}

impl SupportSet {
    pub fn validate(&self, dim: usize) -> Result<(), DomainError> {
        match self {
            SupportSet::Unconstrained => Ok(()),
            SupportSet::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return Err(DomainError::DimensionMismatch { expected: dim, got: lower.len() });
                }
                for j in 0..dim {
                    if lower[j].is_nan() || upper[j].is_nan() {
                        return Err(DomainError::NonFinite("box bound"));
                    }
                    if lower[j] > upper[j] {
                        return Err(DomainError::BadSupport(format!(
                            "box has empty coordinate {j}: [{}, {}]",
                            lower[j], upper[j]
                        )));
                    }
                }
                Ok(())
            }
            SupportSet::Polyhedron { g, h } => {
                if g.len() != h.len() {
                    return Err(DomainError::BadSupport("row count mismatch".into()));
                }
                for row in g {
                    if row.len() != dim {
                        return Err(DomainError::DimensionMismatch { expected: dim, got: row.len() });
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(DomainError::NonFinite("polyhedron row"));
                    }
                }
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(DomainError::NonFinite("polyhedron rhs"));
                }
                // Nonemptiness via LP feasibility.
                let mut b = LpBuilder::new();
                let vars: Vec<usize> =
                    (0..dim).map(|_| b.var(f64::NEG_INFINITY, f64::INFINITY, 0.0)).collect();
                for (row, &rhs) in g.iter().zip(h.iter()) {
                    let coeffs: Vec<(usize, f64)> =
                        vars.iter().copied().zip(row.iter().copied()).collect();
                    b.row(Rel::Le, rhs, coeffs);
                }
                match solver::lp_solve(&b.build()) {
                    Ok(LpOutcome::Infeasible) => {
                        Err(DomainError::BadSupport("polyhedron is empty".into()))
                    }
                    Ok(_) => Ok(()),
                    Err(e) => Err(DomainError::BadSupport(format!("feasibility check failed: {e}"))),
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            SupportSet::Unconstrained => true,
            SupportSet::Box { lower, upper } => x
                .iter()
                .enumerate()
                .all(|(j, &v)| v >= lower[j] - tol && v <= upper[j] + tol),
            SupportSet::Polyhedron { g, h } => g.iter().zip(h.iter()).all(|(row, &rhs)| {
                row.iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>() <= rhs + tol
            }),
        }
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self, SupportSet::Unconstrained)
    }
}

/// One affine piece `x -> gradient . x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub gradient: Vec<f64>,
    pub offset: f64,
}

/// A convex piecewise linear function of one variable, `t -> max_k s_k t + c_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pwl1d {
    /// (slope, intercept) pairs.
    pub pieces: Vec<(f64, f64)>,
}

impl Pwl1d {
    pub fn eval(&self, t: f64) -> f64 {
        self.pieces.iter().map(|&(s, c)| s * t + c).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.pieces.iter().fold(0.0f64, |m, &(s, _)| m.max(s.abs()))
    }

    /// Slope of the active piece just right (`+`) or left (`-`) of `t`.
    pub fn one_sided_slope(&self, t: f64, right: bool) -> f64 {
        let v = self.eval(t);
        let mut slope = if right { f64::NEG_INFINITY } else { f64::INFINITY };
        for &(s, c) in &self.pieces {
            if (s * t + c - v).abs() <= 1e-9 * (1.0 + v.abs()) {
                if right {
                    slope = slope.max(s);
                } else {
                    slope = slope.min(s);
                }
            }
        }
        slope
    }

    /// Tangent-line surrogate of `t^2` at the given touchpoints, optionally
    /// capped with linear tails `±tail_slope * t + tail_offset` outside the
    /// touched range. Used to feed smooth curvature into the piecewise linear
    /// loss interface; exact at every touchpoint.
    pub fn quadratic_tangents(touchpoints: &[f64], tails: Option<(f64, f64)>) -> Self {
        let mut pieces: Vec<(f64, f64)> =
            touchpoints.iter().map(|&t| (2.0 * t, -t * t)).collect();
        if let Some((s, c)) = tails {
            pieces.push((s, c));
            pieces.push((-s, c));
        }
        Pwl1d { pieces }
    }
}

/// Loss functions the engines understand. `MaxAffine` and `ScalarComposite`
/// are convex, `MinAffine` is concave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFunction {
    MaxAffine { pieces: Vec<AffinePiece> },
    MinAffine { pieces: Vec<AffinePiece> },
    /// `xi -> f(x . xi)` with convex piecewise linear `f`, nonincreasing left
    /// of `split` and nondecreasing right of it.
    ScalarComposite { x: Vec<f64>, f: Pwl1d, split: f64 },
}

/// Result of a sphere maximization: the best value on `{c + eps e : ||e||=1}`
/// and a direction attaining it.
#[derive(Debug, Clone)]
pub struct SphereMax {
    pub value: f64,
    pub direction: Vec<f64>,
}

impl LossFunction {
    pub fn validate(&self) -> Result<(), DomainError> {
        match self {
            LossFunction::MaxAffine { pieces } | LossFunction::MinAffine { pieces } => {
                if pieces.is_empty() {
                    return Err(DomainError::BadLoss("no pieces".into()));
                }
                let dim = pieces[0].gradient.len();
                if dim == 0 {
                    return Err(DomainError::BadLoss("zero-dimensional pieces".into()));
                }
                for p in pieces {
                    if p.gradient.len() != dim {
                        return Err(DomainError::DimensionMismatch {
                            expected: dim,
                            got: p.gradient.len(),
                        });
                    }
                    if p.gradient.iter().any(|v| !v.is_finite()) || !p.offset.is_finite() {
                        return Err(DomainError::NonFinite("affine piece"));
                    }
                }
                Ok(())
            }
            LossFunction::ScalarComposite { x, f, split } => {
                if x.is_empty() {
                    return Err(DomainError::BadLoss("empty direction".into()));
                }
                if x.iter().any(|v| !v.is_finite()) || !split.is_finite() {
                    return Err(DomainError::NonFinite("composite"));
                }
                if f.pieces.is_empty() {
                    return Err(DomainError::BadLoss("empty scalar profile".into()));
                }
                if f.pieces.iter().any(|&(s, c)| !s.is_finite() || !c.is_finite()) {
                    return Err(DomainError::NonFinite("scalar piece"));
                }
                // The declared split must be a minimizer: nonpositive slope
                // just left, nonnegative just right.
                let left = f.one_sided_slope(*split, false);
                let right = f.one_sided_slope(*split, true);
                if left > 1e-9 || right < -1e-9 {
                    return Err(DomainError::BadLoss(format!(
                        "split {split} is not a monotone split (slopes {left}, {right})"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LossFunction::MaxAffine { pieces } | LossFunction::MinAffine { pieces } => {
                pieces[0].gradient.len()
            }
            LossFunction::ScalarComposite { x, .. } => x.len(),
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, LossFunction::MinAffine { .. })
    }

    pub fn evaluate(&self, xi: &[f64]) -> f64 {
        match self {
            LossFunction::MaxAffine { pieces } => pieces
                .iter()
                .map(|p| dot(&p.gradient, xi) + p.offset)
                .fold(f64::NEG_INFINITY, f64::max),
            LossFunction::MinAffine { pieces } => pieces
                .iter()
                .map(|p| dot(&p.gradient, xi) + p.offset)
                .fold(f64::INFINITY, f64::min),
            LossFunction::ScalarComposite { x, f, .. } => f.eval(dot(x, xi)),
        }
    }

    /// Lipschitz constant with respect to `norm`: the largest dual norm of
    /// any subgradient.
    pub fn lipschitz(&self, norm: NormKind) -> f64 {
        match self {
            LossFunction::MaxAffine { pieces } | LossFunction::MinAffine { pieces } => pieces
                .iter()
                .fold(0.0f64, |m, p| m.max(norm.dual_eval(&p.gradient))),
            LossFunction::ScalarComposite { x, f, .. } => f.max_abs_slope() * norm.dual_eval(x),
        }
    }

    /// A subgradient at `xi` (any active piece; lowest index wins ties).
    pub fn subgradient(&self, xi: &[f64]) -> Vec<f64> {
        match self {
            LossFunction::MaxAffine { pieces } => {
                let v = self.evaluate(xi);
                for p in pieces {
                    if (dot(&p.gradient, xi) + p.offset - v).abs() <= 1e-12 * (1.0 + v.abs()) {
                        return p.gradient.clone();
                    }
                }
                pieces[0].gradient.clone()
            }
            LossFunction::MinAffine { pieces } => {
                let v = self.evaluate(xi);
                for p in pieces {
                    if (dot(&p.gradient, xi) + p.offset - v).abs() <= 1e-12 * (1.0 + v.abs()) {
                        return p.gradient.clone();
                    }
                }
                pieces[0].gradient.clone()
            }
            LossFunction::ScalarComposite { x, f, .. } => {
                let t = dot(x, xi);
                let v = f.eval(t);
                let mut slope = f.pieces[0].0;
                for &(s, c) in &f.pieces {
                    if (s * t + c - v).abs() <= 1e-12 * (1.0 + v.abs()) {
                        slope = s;
                        break;
                    }
                }
                x.iter().map(|&xj| slope * xj).collect()
            }
        }
    }

    /// Maximum of a convex loss over the sphere `{ center + eps e : ||e|| = 1 }`
    /// together with an attaining direction. Errors on concave losses.
    ///
    /// For `MaxAffine` the maximum is `max_j (a_j . c + b_j + eps ||a_j||_*)`;
    /// for `ScalarComposite` it reduces to the two interval ends
    /// `x . c ± eps ||x||_*` through the monotone split of `f`.
    pub fn sphere_max(
        &self,
        center: &[f64],
        eps: f64,
        norm: NormKind,
    ) -> Result<SphereMax, DomainError> {
        if eps < 0.0 || !eps.is_finite() {
            return Err(DomainError::BadRadius(eps));
        }
        if center.len() != self.dim() {
            return Err(DomainError::DimensionMismatch { expected: self.dim(), got: center.len() });
        }
        match self {
            LossFunction::MinAffine { .. } => Err(DomainError::UnsupportedLoss(
                "sphere_max is defined for convex losses only",
            )),
            LossFunction::MaxAffine { pieces } => {
                let mut best = f64::NEG_INFINITY;
                let mut best_j = 0;
                for (j, p) in pieces.iter().enumerate() {
                    let v = dot(&p.gradient, center) + p.offset + eps * norm.dual_eval(&p.gradient);
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                Ok(SphereMax {
                    value: best,
                    direction: norm.unit_dual_realizer(&pieces[best_j].gradient),
                })
            }
            LossFunction::ScalarComposite { x, f, split } => {
                let tc = dot(x, center);
                let delta = eps * norm.dual_eval(x);
                let lo = tc - delta;
                let hi = tc + delta;
                // Convex f on an interval peaks at an end; the split folds
                // each end onto the correct monotone branch.
                let f_lo = if lo < *split { f.eval(lo) } else { f.eval(*split) };
                let f_hi = if hi > *split { f.eval(hi) } else { f.eval(*split) };
                let realizer = norm.unit_dual_realizer(x);
                if f_lo >= f_hi {
                    Ok(SphereMax {
                        value: f_lo,
                        direction: realizer.iter().map(|v| -v).collect(),
                    })
                } else {
                    Ok(SphereMax { value: f_hi, direction: realizer })
                }
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Risk aggregators applied to the transport cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RiskSpec {
    Expectation,
    Cvar { alpha: f64 },
    Expectile { alpha: f64 },
    EssSup,
}

impl RiskSpec {
    pub fn validate(&self) -> Result<(), DomainError> {
        match *self {
            RiskSpec::Expectation | RiskSpec::EssSup => Ok(()),
            RiskSpec::Cvar { alpha } => {
                if alpha.is_finite() && (0.0..1.0).contains(&alpha) {
                    Ok(())
                } else {
                    Err(DomainError::BadRisk(format!("CVaR level {alpha} outside [0, 1)")))
                }
            }
            RiskSpec::Expectile { alpha } => {
                if alpha.is_finite() && (0.5..1.0).contains(&alpha) {
                    Ok(())
                } else {
                    Err(DomainError::BadRisk(format!("expectile level {alpha} outside [1/2, 1)")))
                }
            }
        }
    }

    /// Envelope constant `c` with `rho(X) <= c E[X]` for `X >= 0`:
    /// 1, 1/(1-alpha), alpha/(1-alpha), +inf.
    pub fn envelope_constant(&self) -> f64 {
        match *self {
            RiskSpec::Expectation => 1.0,
            RiskSpec::Cvar { alpha } => 1.0 / (1.0 - alpha),
            RiskSpec::Expectile { alpha } => alpha / (1.0 - alpha),
            RiskSpec::EssSup => f64::INFINITY,
        }
    }
}

/// A risk-aggregated transport ball around a discrete center.
#[derive(Debug, Clone)]
pub struct AmbiguityBall {
    pub risk: RiskSpec,
    pub norm: NormKind,
    pub radius: f64,
    pub center: DiscreteDistribution,
    pub support: SupportSet,
}

impl AmbiguityBall {
    pub fn new(
        risk: RiskSpec,
        norm: NormKind,
        radius: f64,
        center: DiscreteDistribution,
        support: SupportSet,
    ) -> Result<Self, DomainError> {
        risk.validate()?;
        if !radius.is_finite() || radius < 0.0 {
            return Err(DomainError::BadRadius(radius));
        }
        support.validate(center.dim())?;
        for (i, p) in center.points().iter().enumerate() {
            if !support.contains(p, 1e-9) {
                return Err(DomainError::CenterOutsideSupport(i));
            }
        }
        Ok(AmbiguityBall { risk, norm, radius, center, support })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }
}
