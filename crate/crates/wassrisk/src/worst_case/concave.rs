//! Concave piecewise linear losses over risk-aggregated balls.
//!
//! Concavity removes mass splitting: each atom moves as a whole, so the
//! primal searches over one destination per sample with the aggregated
//! transport cost held inside the ball. The dual couples a price on the
//! radius with a per-sample allowance; the aggregation only enters through
//! linear envelope rows on the allowances, so polyhedral ground norms yield
//! one linear program.

use crate::domain::{
    dot, AffinePiece, AmbiguityBall, DiscreteDistribution, DomainError, LossFunction, NormKind,
    RiskSpec, SupportSet,
};
use crate::risk::{self, ScalarDistribution};
use crate::solver::lp::{LpBuilder, LpOutcome, Rel};
use crate::solver::project::{project_box, project_polyhedron, project_simplex};
use crate::solver::subgradient::{projected_subgradient, SubgradientProblem};
use crate::solver::SolverError;

use super::{
    norm_subgradient, run_penalty_loop, Diagnostics, Method, PenaltyLoop, WceResult,
    WorstCaseError,
};

/// Pieces of a concave loss, smallest piece active. A single affine piece is
/// accepted from either orientation.
fn concave_pieces(loss: &LossFunction) -> Result<Vec<AffinePiece>, WorstCaseError> {
    match loss {
        LossFunction::MinAffine { pieces } => Ok(pieces.clone()),
        LossFunction::MaxAffine { pieces } if pieces.len() == 1 => Ok(pieces.clone()),
        _ => Err(WorstCaseError::Unsupported(
            "concave engines need a min-of-affine loss; convex losses have their own engines"
                .into(),
        )),
    }
}

fn check_inputs(loss: &LossFunction, ball: &AmbiguityBall) -> Result<(), WorstCaseError> {
    loss.validate()?;
    if loss.dim() != ball.dim() {
        return Err(DomainError::DimensionMismatch { expected: ball.dim(), got: loss.dim() }.into());
    }
    if matches!(ball.risk, RiskSpec::EssSup) {
        return Err(WorstCaseError::Unsupported(
            "essential-supremum aggregation decouples per sample; take a CVaR level near one"
                .into(),
        ));
    }
    Ok(())
}

/// How strongly the aggregated cost can weight a single sample.
fn envelope_const(risk: RiskSpec) -> f64 {
    match risk {
        RiskSpec::Expectation => 1.0,
        RiskSpec::Cvar { alpha } => 1.0 / (1.0 - alpha),
        RiskSpec::Expectile { alpha } => (alpha / (1.0 - alpha)).max(1.0),
        RiskSpec::EssSup => f64::INFINITY,
    }
}

pub(crate) fn risk_of_costs(risk: RiskSpec, costs: &[f64], w: &[f64]) -> f64 {
    let d = ScalarDistribution::new(costs.to_vec(), w.to_vec())
        .expect("cost profile forms a scalar distribution");
    risk::evaluate(risk, &d).expect("risk level was validated")
}

/// Subgradient of the aggregated cost with respect to the per-sample costs.
/// Expectation passes the weights through, the tail mean fills its tail mass
/// from the largest costs down, and the expectile weight splits at the root
/// with ratio `alpha : 1 - alpha`.
pub(crate) fn risk_cost_gradient(risk: RiskSpec, costs: &[f64], w: &[f64]) -> Vec<f64> {
    match risk {
        RiskSpec::Expectation => w.to_vec(),
        RiskSpec::Cvar { alpha } => {
            if alpha == 0.0 {
                return w.to_vec();
            }
            let tail = 1.0 - alpha;
            let mut order: Vec<usize> = (0..costs.len()).collect();
            order.sort_by(|&a, &b| costs[b].partial_cmp(&costs[a]).unwrap());
            let mut g = vec![0.0; costs.len()];
            let mut remaining = tail;
            for &i in &order {
                if remaining <= 0.0 {
                    break;
                }
                let take = w[i].min(remaining);
                g[i] = take / tail;
                remaining -= take;
            }
            g
        }
        RiskSpec::Expectile { alpha } => {
            let m = risk_of_costs(risk, costs, w);
            let kappas: Vec<f64> =
                costs.iter().map(|&c| if c >= m { alpha } else { 1.0 - alpha }).collect();
            let d: f64 = w.iter().zip(&kappas).map(|(wi, ki)| wi * ki).sum();
            w.iter().zip(&kappas).map(|(wi, ki)| wi * ki / d).collect()
        }
        RiskSpec::EssSup => unreachable!("rejected at entry"),
    }
}

/// Farthest a single sample can travel while every other stays put.
fn single_mover_budget(risk: RiskSpec, eps: f64, wi: f64) -> f64 {
    match risk {
        RiskSpec::Expectation => eps / wi,
        RiskSpec::Cvar { alpha } => {
            if wi <= 1.0 - alpha {
                eps * (1.0 - alpha) / wi
            } else {
                eps
            }
        }
        RiskSpec::Expectile { alpha } => {
            eps * (alpha * wi + (1.0 - alpha) * (1.0 - wi)) / (alpha * wi)
        }
        RiskSpec::EssSup => unreachable!("rejected at entry"),
    }
}

/// Linear rows certifying that the cost profile `r` stays inside the ball.
/// The tail mean uses its threshold representation, the expectile its
/// single-budget form; both are exact.
fn ball_rows(b: &mut LpBuilder, r: &[usize], risk: RiskSpec, eps: f64, w: &[f64]) {
    let mean_row = |b: &mut LpBuilder| {
        let terms = r.iter().zip(w).map(|(&ri, &wi)| (ri, wi)).collect();
        b.row(Rel::Le, eps, terms);
    };
    match risk {
        RiskSpec::Expectation => mean_row(b),
        RiskSpec::Cvar { alpha } if alpha == 0.0 => mean_row(b),
        RiskSpec::Expectile { alpha } if alpha == 0.5 => mean_row(b),
        RiskSpec::Cvar { alpha } => {
            let t0 = b.var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
            let mut cap = vec![(t0, 1.0)];
            for (&ri, &wi) in r.iter().zip(w) {
                let u = b.var(0.0, f64::INFINITY, 0.0);
                b.row(Rel::Ge, 0.0, vec![(u, 1.0), (ri, -1.0), (t0, 1.0)]);
                cap.push((u, wi / (1.0 - alpha)));
            }
            b.row(Rel::Le, eps, cap);
        }
        RiskSpec::Expectile { alpha } => {
            let bp = (1.0 - alpha) / (2.0 * alpha - 1.0);
            let mut cap = Vec::with_capacity(2 * r.len());
            for (&ri, &wi) in r.iter().zip(w) {
                let u = b.var(0.0, f64::INFINITY, 0.0);
                b.row(Rel::Ge, -eps, vec![(u, 1.0), (ri, -1.0)]);
                cap.push((u, wi));
                cap.push((ri, bp * wi));
            }
            b.row(Rel::Le, bp * eps, cap);
        }
        RiskSpec::EssSup => unreachable!("rejected at entry"),
    }
}

/// Reoptimize the cost allocation along the rays of the current iterate:
/// directions stay fixed, radii move under exact ball and support rows.
/// Returns a feasible point whose value is at least the input's.
fn ray_allocation(
    pieces: &[AffinePiece],
    pts: &[Vec<f64>],
    w: &[f64],
    support: &SupportSet,
    risk: RiskSpec,
    norm: NormKind,
    eps: f64,
    x: &[f64],
) -> Option<Vec<f64>> {
    let n = pts.len();
    let m = pts[0].len();
    let dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let d: Vec<f64> =
                x[i * m..(i + 1) * m].iter().zip(&pts[i]).map(|(a, b)| a - b).collect();
            let len = norm.eval(&d);
            if len > 1e-12 {
                d.iter().map(|v| v / len).collect()
            } else {
                let mut jb = 0;
                let mut low = f64::INFINITY;
                for (j, piece) in pieces.iter().enumerate() {
                    let v = dot(&piece.gradient, &pts[i]) + piece.offset;
                    if v < low {
                        low = v;
                        jb = j;
                    }
                }
                norm.unit_dual_realizer(&pieces[jb].gradient)
            }
        })
        .collect();
    let mut b = LpBuilder::new();
    let r: Vec<usize> = (0..n).map(|_| b.var(0.0, f64::INFINITY, 0.0)).collect();
    let t: Vec<usize> = (0..n).map(|i| b.var(f64::NEG_INFINITY, f64::INFINITY, -w[i])).collect();
    for i in 0..n {
        for piece in pieces {
            let z = dot(&piece.gradient, &pts[i]) + piece.offset;
            b.row(Rel::Ge, -z, vec![(r[i], dot(&piece.gradient, &dirs[i])), (t[i], -1.0)]);
        }
        match support {
            SupportSet::Unconstrained => {}
            SupportSet::Box { lower, upper } => {
                for kk in 0..m {
                    if upper[kk].is_finite() && dirs[i][kk] != 0.0 {
                        b.row(Rel::Le, upper[kk] - pts[i][kk], vec![(r[i], dirs[i][kk])]);
                    }
                    if lower[kk].is_finite() && dirs[i][kk] != 0.0 {
                        b.row(Rel::Ge, lower[kk] - pts[i][kk], vec![(r[i], dirs[i][kk])]);
                    }
                }
            }
            SupportSet::Polyhedron { g, h } => {
                for (row, &hr) in g.iter().zip(h) {
                    b.row(Rel::Le, hr - dot(row, &pts[i]), vec![(r[i], dot(row, &dirs[i]))]);
                }
            }
        }
    }
    ball_rows(&mut b, &r, risk, eps, w);
    let lp = b.build();
    match crate::solver::lp::lp_solve(&lp) {
        Ok(LpOutcome::Optimal(sol)) => {
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for kk in 0..m {
                    out[i * m + kk] = pts[i][kk] + sol.x[r[i]] * dirs[i][kk];
                }
            }
            Some(out)
        }
        _ => None,
    }
}

/// Re-place each destination at the current radii without touching the
/// allocation: a per-sample maximization over a polyhedral norm ball
/// intersected with the support. Polyhedral norms only.
fn position_refresh(
    pieces: &[AffinePiece],
    pts: &[Vec<f64>],
    support: &SupportSet,
    norm: NormKind,
    x: &[f64],
) -> Option<Vec<f64>> {
    if norm == NormKind::L2 {
        return None;
    }
    let n = pts.len();
    let m = pts[0].len();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let d: Vec<f64> = x[i * m..(i + 1) * m].iter().zip(&pts[i]).map(|(a, b)| a - b).collect();
        let radius = norm.eval(&d);
        let mut b = LpBuilder::new();
        let t = b.var(f64::NEG_INFINITY, f64::INFINITY, -1.0);
        let y: Vec<usize> = (0..m)
            .map(|kk| {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                if norm == NormKind::Linf {
                    lo = pts[i][kk] - radius;
                    hi = pts[i][kk] + radius;
                }
                if let SupportSet::Box { lower, upper } = support {
                    lo = lo.max(lower[kk]);
                    hi = hi.min(upper[kk]);
                }
                b.var(lo, hi, 0.0)
            })
            .collect();
        for piece in pieces {
            let mut terms = vec![(t, -1.0)];
            for (kk, &a) in piece.gradient.iter().enumerate() {
                terms.push((y[kk], a));
            }
            b.row(Rel::Ge, -piece.offset, terms);
        }
        if norm == NormKind::L1 {
            let mut cap = Vec::with_capacity(m);
            for kk in 0..m {
                let dk = b.var(0.0, f64::INFINITY, 0.0);
                b.row(Rel::Ge, -pts[i][kk], vec![(dk, 1.0), (y[kk], -1.0)]);
                b.row(Rel::Ge, pts[i][kk], vec![(dk, 1.0), (y[kk], 1.0)]);
                cap.push((dk, 1.0));
            }
            b.row(Rel::Le, radius, cap);
        }
        if let SupportSet::Polyhedron { g, h } = support {
            for (row, &hr) in g.iter().zip(h) {
                let terms = row.iter().enumerate().map(|(kk, &a)| (y[kk], a)).collect();
                b.row(Rel::Le, hr, terms);
            }
        }
        let lp = b.build();
        match crate::solver::lp::lp_solve(&lp) {
            Ok(LpOutcome::Optimal(sol)) => {
                for kk in 0..m {
                    out[i * m + kk] = sol.x[y[kk]];
                }
            }
            _ => return None,
        }
    }
    Some(out)
}

/// Unrelaxed maximizer of the loss over the support, if the linear program
/// for it is bounded. Used only to seed the primal search.
fn loss_peak(pieces: &[AffinePiece], support: &SupportSet, m: usize) -> Option<Vec<f64>> {
    let mut b = LpBuilder::new();
    let t = b.var(f64::NEG_INFINITY, f64::INFINITY, -1.0);
    let y: Vec<usize> = (0..m)
        .map(|k| match support {
            SupportSet::Box { lower, upper } => b.var(lower[k], upper[k], 0.0),
            _ => b.var(f64::NEG_INFINITY, f64::INFINITY, 0.0),
        })
        .collect();
    for piece in pieces {
        let mut terms = vec![(t, -1.0)];
        for (k, &a) in piece.gradient.iter().enumerate() {
            terms.push((y[k], a));
        }
        b.row(Rel::Ge, -piece.offset, terms);
    }
    if let SupportSet::Polyhedron { g, h } = support {
        for (row, &hr) in g.iter().zip(h) {
            let terms = row.iter().enumerate().map(|(k, &a)| (y[k], a)).collect();
            b.row(Rel::Le, hr, terms);
        }
    }
    let lp = b.build();
    match crate::solver::lp::lp_solve(&lp) {
        Ok(LpOutcome::Optimal(sol)) => Some(y.iter().map(|&idx| sol.x[idx]).collect()),
        _ => None,
    }
}

/// The destination side as one linear program for polyhedral ground norms:
/// per-sample hypographs of the loss, norm epigraphs on the displacements,
/// and a linear cap on the aggregated cost profile. The expectation caps the
/// weighted mean, the tail mean caps through its shortfall form, and the
/// expectile caps through the two-slope gauge around the radius (slopes
/// `1 - alpha` below and `alpha` above are nondecreasing, so the gauge rows
/// are exact).
fn concave_primal_lp(
    pieces: &[AffinePiece],
    ball: &AmbiguityBall,
    saa: f64,
) -> Result<WceResult, WorstCaseError> {
    let pts = ball.center.points();
    let w = ball.center.weights();
    let n = pts.len();
    let m = ball.dim();
    let eps = ball.radius;
    let norm = ball.norm;
    let mut b = LpBuilder::new();
    let y: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            (0..m)
                .map(|kk| match &ball.support {
                    SupportSet::Box { lower, upper } => b.var(lower[kk], upper[kk], 0.0),
                    _ => b.var(f64::NEG_INFINITY, f64::INFINITY, 0.0),
                })
                .collect()
        })
        .collect();
    let u: Vec<usize> = (0..n).map(|i| b.var(f64::NEG_INFINITY, f64::INFINITY, -w[i])).collect();
    let t: Vec<usize> = (0..n).map(|_| b.var(0.0, f64::INFINITY, 0.0)).collect();
    for i in 0..n {
        for piece in pieces {
            let mut terms = vec![(u[i], -1.0)];
            for (kk, &a) in piece.gradient.iter().enumerate() {
                terms.push((y[i][kk], a));
            }
            b.row(Rel::Ge, -piece.offset, terms);
        }
        match norm {
            NormKind::L1 => {
                let mut total = vec![(t[i], 1.0)];
                for kk in 0..m {
                    let s = b.var(0.0, f64::INFINITY, 0.0);
                    b.row(Rel::Ge, -pts[i][kk], vec![(s, 1.0), (y[i][kk], -1.0)]);
                    b.row(Rel::Ge, pts[i][kk], vec![(s, 1.0), (y[i][kk], 1.0)]);
                    total.push((s, -1.0));
                }
                b.row(Rel::Ge, 0.0, total);
            }
            NormKind::Linf => {
                for kk in 0..m {
                    b.row(Rel::Ge, -pts[i][kk], vec![(t[i], 1.0), (y[i][kk], -1.0)]);
                    b.row(Rel::Ge, pts[i][kk], vec![(t[i], 1.0), (y[i][kk], 1.0)]);
                }
            }
            NormKind::L2 => unreachable!("euclidean balls do not take the LP path"),
        }
        if let SupportSet::Polyhedron { g, h } = &ball.support {
            for (row, &hr) in g.iter().zip(h) {
                let terms = row.iter().enumerate().map(|(kk, &a)| (y[i][kk], a)).collect();
                b.row(Rel::Le, hr, terms);
            }
        }
    }
    match ball.risk {
        RiskSpec::Expectation => {
            b.row(Rel::Le, eps, (0..n).map(|i| (t[i], w[i])).collect());
        }
        RiskSpec::Cvar { alpha } => {
            let tau = b.var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
            let mut cap = vec![(tau, 1.0)];
            for i in 0..n {
                let z = b.var(0.0, f64::INFINITY, 0.0);
                b.row(Rel::Ge, 0.0, vec![(z, 1.0), (t[i], -1.0), (tau, 1.0)]);
                cap.push((z, w[i] / (1.0 - alpha)));
            }
            b.row(Rel::Le, eps, cap);
        }
        RiskSpec::Expectile { alpha } => {
            let mut cap = Vec::with_capacity(n);
            for i in 0..n {
                let phi = b.var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
                b.row(Rel::Ge, -(1.0 - alpha) * eps, vec![(phi, 1.0), (t[i], alpha - 1.0)]);
                b.row(Rel::Ge, -alpha * eps, vec![(phi, 1.0), (t[i], -alpha)]);
                cap.push((phi, w[i]));
            }
            b.row(Rel::Le, 0.0, cap);
        }
        RiskSpec::EssSup => unreachable!("rejected at entry"),
    }
    let lp = b.build();
    let sol = match crate::solver::lp::lp_solve(&lp)? {
        LpOutcome::Optimal(sol) => sol,
        LpOutcome::Infeasible => {
            return Err(
                SolverError::Numerical("destination program reported infeasible".into()).into()
            )
        }
        LpOutcome::Unbounded => {
            return Err(WorstCaseError::Unsupported(
                "loss is unbounded over the admissible destinations".into(),
            ))
        }
    };
    // Certify: the rows hold up to solver tolerance only, so shrink the
    // displacements radially if the recomputed aggregation overshoots.
    let mut atoms: Vec<Vec<f64>> =
        (0..n).map(|i| y[i].iter().map(|&idx| sol.x[idx]).collect()).collect();
    let costs: Vec<f64> = atoms
        .iter()
        .zip(pts)
        .map(|(a, c)| {
            let d: Vec<f64> = a.iter().zip(c).map(|(x, v)| x - v).collect();
            norm.eval(&d)
        })
        .collect();
    let rho = risk_of_costs(ball.risk, &costs, w);
    if rho > eps {
        let shrink = eps / rho;
        for (a, c) in atoms.iter_mut().zip(pts) {
            for (x, v) in a.iter_mut().zip(c) {
                *x = v + shrink * (*x - v);
            }
        }
    }
    let value: f64 = atoms
        .iter()
        .zip(w)
        .map(|(a, &wi)| {
            wi * pieces.iter().map(|p| dot(&p.gradient, a) + p.offset).fold(f64::INFINITY, f64::min)
        })
        .sum();
    let dist = DiscreteDistribution::new(atoms, w.to_vec())?;
    Ok(WceResult::exact(
        value.max(saa),
        Method::ConcavePrimal,
        dist,
        Diagnostics { iterations: sol.iterations, duality_gap: None, active_branch: None },
    ))
}

/// Worst-case expectation of a concave loss over one destination per sample.
/// Polyhedral ground norms reduce to a single linear program; the euclidean
/// norm keeps a direct search where projection returns every destination to
/// the support and a radial shrink toward the sample restores ball
/// membership exactly, by positive homogeneity of the aggregation. The
/// optimum is always attained: the ball bounds the mean displacement, so the
/// search region is compact.
pub fn wce_concave_primal(
    loss: &LossFunction,
    ball: &AmbiguityBall,
) -> Result<WceResult, WorstCaseError> {
    check_inputs(loss, ball)?;
    let pieces = concave_pieces(loss)?;
    let pts = ball.center.points();
    let w = ball.center.weights();
    let n = pts.len();
    let m = ball.dim();
    let eps = ball.radius;
    let risk = ball.risk;
    let norm = ball.norm;
    let saa: f64 = pts.iter().zip(w).map(|(c, &wi)| wi * loss.evaluate(c)).sum();
    if eps == 0.0 {
        return Ok(WceResult::exact(
            saa,
            Method::ConcavePrimal,
            ball.center.clone(),
            Diagnostics::default(),
        ));
    }
    if norm != NormKind::L2 {
        return concave_primal_lp(&pieces, ball, saa);
    }
    let lip = loss.lipschitz(norm);
    let kappa = ((2.0 + 2.0 * lip) * envelope_const(risk)).min(1e4);
    let at = |i: usize| i * m;

    let costs_of = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let d: Vec<f64> =
                    x[at(i)..at(i) + m].iter().zip(&pts[i]).map(|(a, b)| a - b).collect();
                norm.eval(&d)
            })
            .collect()
    };

    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        g.fill(0.0);
        let costs = costs_of(x);
        let rho = risk_of_costs(risk, &costs, w);
        let mut value = 0.0;
        for i in 0..n {
            let y = &x[at(i)..at(i) + m];
            let mut best = f64::INFINITY;
            let mut jb = 0;
            for (j, piece) in pieces.iter().enumerate() {
                let v = dot(&piece.gradient, y) + piece.offset;
                if v < best {
                    best = v;
                    jb = j;
                }
            }
            value += w[i] * best;
            for (gk, ak) in g[at(i)..at(i) + m].iter_mut().zip(&pieces[jb].gradient) {
                *gk -= w[i] * ak;
            }
        }
        let excess = rho - eps;
        if excess > 0.0 {
            let grad_rho = risk_cost_gradient(risk, &costs, w);
            let mut nsub = vec![0.0; m];
            for i in 0..n {
                let d: Vec<f64> =
                    x[at(i)..at(i) + m].iter().zip(&pts[i]).map(|(a, b)| a - b).collect();
                norm_subgradient(norm, &d, &mut nsub);
                for (gk, sk) in g[at(i)..at(i) + m].iter_mut().zip(&nsub) {
                    *gk += kappa * grad_rho[i] * sk;
                }
            }
        }
        -value + kappa * excess.max(0.0)
    };

    let project = |x: &mut [f64]| match &ball.support {
        SupportSet::Unconstrained => {}
        SupportSet::Box { lower, upper } => {
            for i in 0..n {
                project_box(&mut x[at(i)..at(i) + m], lower, upper);
            }
        }
        SupportSet::Polyhedron { g, h } => {
            for i in 0..n {
                project_polyhedron(&mut x[at(i)..at(i) + m], g, h, 12);
            }
        }
    };

    let restore = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut r = x.to_vec();
        project(&mut r);
        let rho = risk_of_costs(risk, &costs_of(&r), w);
        if rho > eps {
            // Aggregations are positively homogeneous in the displacements.
            let s = eps / rho;
            for i in 0..n {
                for (v, c) in r[at(i)..at(i) + m].iter_mut().zip(&pts[i]) {
                    *v = c + s * (*v - c);
                }
            }
        }
        let value = (0..n).map(|i| w[i] * loss.evaluate(&r[at(i)..at(i) + m])).sum();
        (value, r)
    };

    let mut seeds: Vec<Vec<f64>> = Vec::new();
    let saa_seed: Vec<f64> = pts.iter().flat_map(|c| c.iter().copied()).collect();
    seeds.push(saa_seed.clone());
    // Everyone rides its own active piece by the full radius: a constant
    // cost profile sits exactly on the boundary under all three
    // aggregations, and for an affine loss this seed is already optimal.
    let mut ride = saa_seed.clone();
    for i in 0..n {
        let mut jb = 0;
        let mut low = f64::INFINITY;
        for (j, piece) in pieces.iter().enumerate() {
            let v = dot(&piece.gradient, &pts[i]) + piece.offset;
            if v < low {
                low = v;
                jb = j;
            }
        }
        let e = norm.unit_dual_realizer(&pieces[jb].gradient);
        for (v, ek) in ride[at(i)..at(i) + m].iter_mut().zip(&e) {
            *v += eps * ek;
        }
    }
    seeds.push(ride);
    if let Some(peak) = loss_peak(&pieces, &ball.support, m) {
        let mut all = Vec::with_capacity(n * m);
        for _ in 0..n {
            all.extend_from_slice(&peak);
        }
        seeds.push(all);
        for i in 0..n {
            let mut s = saa_seed.clone();
            let d: Vec<f64> = peak.iter().zip(&pts[i]).map(|(p, c)| p - c).collect();
            let len = norm.eval(&d);
            if len > 1e-12 {
                let step = single_mover_budget(risk, eps, w[i]).min(len) / len;
                for (v, dk) in s[at(i)..at(i) + m].iter_mut().zip(&d) {
                    *v += step * dk;
                }
            }
            seeds.push(s);
        }
    }

    let mut best_value = f64::NEG_INFINITY;
    let mut best_x = saa_seed;
    let mut iterations = 0;
    for seed in seeds {
        let (v, x, it) = run_penalty_loop(&PenaltyLoop {
            objective_grad: &objective,
            project: &project,
            restore: &restore,
            x0: seed,
            step0: 0.5 * eps.max(1.0),
            restarts: 5,
            iters: 600,
        });
        iterations += it;
        if v > best_value {
            best_value = v;
            best_x = x.clone();
        }
        // Monotone restoration polish: re-place atoms at the current radii,
        // then reallocate the radii along the resulting rays. Both steps
        // return feasible points and never lose value.
        let mut cur = x;
        for _ in 0..3 {
            let mut moved = false;
            if let Some(fresh) = position_refresh(&pieces, pts, &ball.support, norm, &cur) {
                let (fv, fx) = restore(&fresh);
                if fv > best_value + 1e-15 {
                    best_value = fv;
                    best_x = fx.clone();
                    cur = fx;
                    moved = true;
                }
            }
            if let Some(alloc) =
                ray_allocation(&pieces, pts, w, &ball.support, risk, norm, eps, &cur)
            {
                let (av, ax) = restore(&alloc);
                if av > best_value + 1e-15 {
                    best_value = av;
                    best_x = ax.clone();
                    cur = ax;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }
    let atoms: Vec<Vec<f64>> = (0..n).map(|i| best_x[at(i)..at(i) + m].to_vec()).collect();
    let dist = DiscreteDistribution::new(atoms, w.to_vec())?;
    Ok(WceResult::exact(
        best_value.max(saa),
        Method::ConcavePrimal,
        dist,
        Diagnostics { iterations, duality_gap: None, active_branch: None },
    ))
}

/// Envelope rows tying per-sample allowances to the radius price.
enum Allowance {
    /// Expectation: every allowance equals the price.
    Price,
    /// Tail mean: mean allowance equals the price, each at most
    /// `price / (1 - alpha)`.
    Tail { alpha: f64 },
    /// Expectile: mean allowance equals the price, pairwise ratios at most
    /// `alpha / (1 - alpha)`.
    Ratio { alpha: f64 },
}

impl Allowance {
    fn of(risk: RiskSpec) -> Self {
        match risk {
            RiskSpec::Expectation => Allowance::Price,
            RiskSpec::Cvar { alpha } => Allowance::Tail { alpha },
            RiskSpec::Expectile { alpha } => Allowance::Ratio { alpha },
            RiskSpec::EssSup => unreachable!("rejected at entry"),
        }
    }
}

/// The price side as one linear program for polyhedral ground norms: convex
/// weights pick a supergradient per sample, support multipliers price the
/// constraint set, and the dual-norm gap must fit inside the allowance.
fn dual_lp(
    pieces: &[AffinePiece],
    z: &[Vec<f64>],
    w: &[f64],
    pts: &[Vec<f64>],
    support: &SupportSet,
    norm: NormKind,
    risk: RiskSpec,
    eps: f64,
) -> Result<WceResult, WorstCaseError> {
    let n = w.len();
    let k = pieces.len();
    let m = pieces[0].gradient.len();
    let mut b = LpBuilder::new();
    let lambda = b.var(0.0, f64::INFINITY, eps);
    let p: Vec<usize> = match Allowance::of(risk) {
        Allowance::Price => vec![lambda; n],
        Allowance::Tail { alpha } => {
            let p: Vec<usize> = (0..n).map(|_| b.var(0.0, f64::INFINITY, 0.0)).collect();
            let mut mean = vec![(lambda, -1.0)];
            for i in 0..n {
                mean.push((p[i], w[i]));
                b.row(Rel::Ge, 0.0, vec![(lambda, 1.0), (p[i], -(1.0 - alpha))]);
            }
            b.row(Rel::Eq, 0.0, mean);
            p
        }
        Allowance::Ratio { alpha } => {
            let p: Vec<usize> = (0..n).map(|_| b.var(0.0, f64::INFINITY, 0.0)).collect();
            let nu = b.var(0.0, f64::INFINITY, 0.0);
            let mut mean = vec![(lambda, -1.0)];
            for i in 0..n {
                mean.push((p[i], w[i]));
                b.row(Rel::Ge, 0.0, vec![(p[i], 1.0), (nu, -1.0)]);
                b.row(Rel::Ge, 0.0, vec![(nu, alpha / (1.0 - alpha)), (p[i], -1.0)]);
            }
            b.row(Rel::Eq, 0.0, mean);
            p
        }
    };
    for i in 0..n {
        let theta: Vec<usize> = (0..k).map(|j| b.var(0.0, f64::INFINITY, w[i] * z[i][j])).collect();
        b.row(Rel::Eq, 1.0, theta.iter().map(|&t| (t, 1.0)).collect());
        // Support multipliers: u enters as w+ - w- (box) or G^T mu (poly).
        let (wp, wm, mu): (Vec<usize>, Vec<usize>, Vec<usize>) = match support {
            SupportSet::Unconstrained => (vec![], vec![], vec![]),
            SupportSet::Box { lower, upper } => (
                (0..m)
                    .map(|kk| {
                        if upper[kk].is_finite() {
                            b.var(0.0, f64::INFINITY, w[i] * (upper[kk] - pts[i][kk]).max(0.0))
                        } else {
                            b.var(0.0, 0.0, 0.0)
                        }
                    })
                    .collect(),
                (0..m)
                    .map(|kk| {
                        if lower[kk].is_finite() {
                            b.var(0.0, f64::INFINITY, w[i] * (pts[i][kk] - lower[kk]).max(0.0))
                        } else {
                            b.var(0.0, 0.0, 0.0)
                        }
                    })
                    .collect(),
                vec![],
            ),
            SupportSet::Polyhedron { g, h } => (
                vec![],
                vec![],
                g.iter()
                    .zip(h)
                    .map(|(row, &hr)| b.var(0.0, f64::INFINITY, w[i] * (hr - dot(row, &pts[i])).max(0.0)))
                    .collect(),
            ),
        };
        // Gap row coefficients for coordinate kk with a sign: the expression
        // sum_j theta_j a_jk - u_k must fit inside the allowance.
        let gap_terms = |kk: usize, sign: f64| -> Vec<(usize, f64)> {
            let mut terms: Vec<(usize, f64)> = Vec::new();
            for (j, &t) in theta.iter().enumerate() {
                terms.push((t, -sign * pieces[j].gradient[kk]));
            }
            match support {
                SupportSet::Unconstrained => {}
                SupportSet::Box { .. } => {
                    terms.push((wp[kk], sign));
                    terms.push((wm[kk], -sign));
                }
                SupportSet::Polyhedron { g, .. } => {
                    for (r, row) in g.iter().enumerate() {
                        terms.push((mu[r], sign * row[kk]));
                    }
                }
            }
            terms
        };
        match norm {
            NormKind::L1 => {
                for kk in 0..m {
                    for sign in [1.0, -1.0] {
                        let mut terms = gap_terms(kk, sign);
                        terms.push((p[i], 1.0));
                        b.row(Rel::Ge, 0.0, terms);
                    }
                }
            }
            NormKind::Linf => {
                let mut cap = vec![(p[i], 1.0)];
                for kk in 0..m {
                    let d = b.var(0.0, f64::INFINITY, 0.0);
                    for sign in [1.0, -1.0] {
                        let mut terms = gap_terms(kk, sign);
                        terms.push((d, 1.0));
                        b.row(Rel::Ge, 0.0, terms);
                    }
                    cap.push((d, -1.0));
                }
                b.row(Rel::Ge, 0.0, cap);
            }
            NormKind::L2 => unreachable!("euclidean balls do not take the LP path"),
        }
    }
    let lp = b.build();
    let sol = match crate::solver::lp::lp_solve(&lp)? {
        LpOutcome::Optimal(sol) => sol,
        LpOutcome::Infeasible => {
            return Err(SolverError::Numerical("price program reported infeasible".into()).into())
        }
        LpOutcome::Unbounded => return Err(WorstCaseError::DualUnbounded),
    };
    Ok(WceResult {
        value: sol.value,
        method: Method::ConcaveDual,
        worst_case: None,
        diagnostics: Diagnostics {
            iterations: sol.iterations,
            duality_gap: None,
            active_branch: None,
        },
    })
}

/// Smallest price consistent with the envelope rows given required
/// per-sample allowances.
fn price_floor(risk: RiskSpec, need: &[f64], w: &[f64]) -> f64 {
    match risk {
        RiskSpec::Expectation => need.iter().cloned().fold(0.0, f64::max),
        RiskSpec::Cvar { alpha } => {
            let mean: f64 = need.iter().zip(w).map(|(nd, wi)| nd * wi).sum();
            let peak = need.iter().cloned().fold(0.0, f64::max);
            mean.max((1.0 - alpha) * peak)
        }
        RiskSpec::Expectile { alpha } => {
            let peak = need.iter().cloned().fold(0.0, f64::max);
            let ratio = (1.0 - alpha) / alpha;
            need.iter().zip(w).map(|(nd, wi)| wi * nd.max(ratio * peak)).sum()
        }
        RiskSpec::EssSup => unreachable!("rejected at entry"),
    }
}

/// Euclidean price side by projected subgradient with the price eliminated:
/// given supergradient weights and support multipliers, the cheapest
/// feasible price is a closed-form function of the per-sample dual-norm
/// gaps. Every iterate is feasible, so the best value upper-bounds the
/// primal.
fn dual_l2_subgradient(
    pieces: &[AffinePiece],
    z: &[Vec<f64>],
    w: &[f64],
    pts: &[Vec<f64>],
    support: &SupportSet,
    risk: RiskSpec,
    eps: f64,
) -> Result<WceResult, WorstCaseError> {
    let n = w.len();
    let k = pieces.len();
    let m = pieces[0].gradient.len();
    let extra = match support {
        SupportSet::Unconstrained => 0,
        SupportSet::Box { .. } => 2 * m,
        SupportSet::Polyhedron { g, .. } => g.len(),
    };
    let blk = k + extra;
    let dim = n * blk;
    let th_at = |i: usize| i * blk;
    let ex_at = |i: usize| i * blk + k;

    let sigma_coeff: Vec<Vec<f64>> = pts
        .iter()
        .map(|c| match support {
            SupportSet::Unconstrained => vec![],
            SupportSet::Box { lower, upper } => {
                let mut v = Vec::with_capacity(2 * m);
                for kk in 0..m {
                    v.push(if upper[kk].is_finite() { (upper[kk] - c[kk]).max(0.0) } else { -1.0 });
                }
                for kk in 0..m {
                    v.push(if lower[kk].is_finite() { (c[kk] - lower[kk]).max(0.0) } else { -1.0 });
                }
                v
            }
            SupportSet::Polyhedron { g, h } => {
                g.iter().zip(h).map(|(row, &hr)| (hr - dot(row, c)).max(0.0)).collect()
            }
        })
        .collect();

    // Gap vector sum_j theta_j a_j - u for sample i.
    let gap = |x: &[f64], i: usize, out: &mut [f64]| {
        out.fill(0.0);
        for (j, piece) in pieces.iter().enumerate() {
            let t = x[th_at(i) + j];
            for (o, &a) in out.iter_mut().zip(&piece.gradient) {
                *o += t * a;
            }
        }
        match support {
            SupportSet::Unconstrained => {}
            SupportSet::Box { .. } => {
                for kk in 0..m {
                    out[kk] -= x[ex_at(i) + kk] - x[ex_at(i) + m + kk];
                }
            }
            SupportSet::Polyhedron { g, .. } => {
                for (r, row) in g.iter().enumerate() {
                    let mur = x[ex_at(i) + r];
                    for (o, &a) in out.iter_mut().zip(row) {
                        *o -= mur * a;
                    }
                }
            }
        }
    };

    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        g.fill(0.0);
        let mut d = vec![0.0; m];
        let mut need = vec![0.0; n];
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            gap(x, i, &mut d);
            need[i] = d.iter().map(|t| t * t).sum::<f64>().sqrt();
            dirs.push(d.clone());
        }
        let lambda = price_floor(risk, &need, w);
        let mut value = eps * lambda;
        // Price subgradient routed through the active envelope branch.
        let mut price_g = vec![0.0; n];
        match risk {
            RiskSpec::Expectation => {
                let i = argmax_f(&need);
                price_g[i] = eps;
            }
            RiskSpec::Cvar { alpha } => {
                let mean: f64 = need.iter().zip(w).map(|(nd, wi)| nd * wi).sum();
                let i = argmax_f(&need);
                if mean >= (1.0 - alpha) * need[i] {
                    for (pg, wi) in price_g.iter_mut().zip(w) {
                        *pg = eps * wi;
                    }
                } else {
                    price_g[i] = eps * (1.0 - alpha);
                }
            }
            RiskSpec::Expectile { alpha } => {
                let ratio = (1.0 - alpha) / alpha;
                let peak_i = argmax_f(&need);
                let mut peak_share = 0.0;
                for i in 0..n {
                    if need[i] >= ratio * need[peak_i] {
                        price_g[i] += eps * w[i];
                    } else {
                        peak_share += eps * w[i] * ratio;
                    }
                }
                price_g[peak_i] += peak_share;
            }
            RiskSpec::EssSup => unreachable!("rejected at entry"),
        }
        for i in 0..n {
            let mix: f64 = (0..k).map(|j| x[th_at(i) + j] * z[i][j]).sum();
            let sig: f64 = sigma_coeff[i]
                .iter()
                .enumerate()
                .map(|(r, &cf)| cf.max(0.0) * x[ex_at(i) + r])
                .sum();
            value += w[i] * (mix + sig);
            for j in 0..k {
                g[th_at(i) + j] += w[i] * z[i][j];
            }
            for (r, &cf) in sigma_coeff[i].iter().enumerate() {
                g[ex_at(i) + r] += w[i] * cf.max(0.0);
            }
            if price_g[i] != 0.0 && need[i] > 1e-15 {
                let scale = price_g[i] / need[i];
                let dir = &dirs[i];
                for j in 0..k {
                    g[th_at(i) + j] += scale * dot(&pieces[j].gradient, dir);
                }
                match support {
                    SupportSet::Unconstrained => {}
                    SupportSet::Box { .. } => {
                        for kk in 0..m {
                            g[ex_at(i) + kk] -= scale * dir[kk];
                            g[ex_at(i) + m + kk] += scale * dir[kk];
                        }
                    }
                    SupportSet::Polyhedron { g: gm, .. } => {
                        for (r, row) in gm.iter().enumerate() {
                            g[ex_at(i) + r] -= scale * dot(row, dir);
                        }
                    }
                }
            }
        }
        value
    };

    let project = |x: &mut [f64]| {
        for i in 0..n {
            project_simplex(&mut x[th_at(i)..th_at(i) + k]);
            for (r, &cf) in sigma_coeff[i].iter().enumerate() {
                let v = &mut x[ex_at(i) + r];
                *v = if cf < 0.0 { 0.0 } else { v.max(0.0) };
            }
        }
    };

    let lip = pieces
        .iter()
        .map(|p| p.gradient.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let mut best = f64::INFINITY;
    let mut iterations = 0;
    for uniform in [true, false] {
        let mut x0 = vec![0.0; dim];
        for i in 0..n {
            if uniform {
                for j in 0..k {
                    x0[th_at(i) + j] = 1.0 / k as f64;
                }
            } else {
                let mut jb = 0;
                for j in 0..k {
                    if z[i][j] < z[i][jb] {
                        jb = j;
                    }
                }
                x0[th_at(i) + jb] = 1.0;
            }
        }
        let report = projected_subgradient(&SubgradientProblem {
            objective: &objective,
            project: &project,
            x0,
            step_scale: 0.2 * (1.0 + lip) * eps.max(1.0),
            max_iters: 4000,
        });
        iterations += report.iterations;
        best = best.min(report.value);
    }
    Ok(WceResult {
        value: best,
        method: Method::ConcaveDual,
        worst_case: None,
        diagnostics: Diagnostics { iterations, duality_gap: None, active_branch: None },
    })
}

fn argmax_f(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Price side of the concave problem. The aggregation enters only through
/// envelope rows tying per-sample allowances to the radius price; polyhedral
/// ground norms make the whole program linear.
pub fn wce_concave_dual(
    loss: &LossFunction,
    ball: &AmbiguityBall,
) -> Result<WceResult, WorstCaseError> {
    check_inputs(loss, ball)?;
    let pieces = concave_pieces(loss)?;
    let pts = ball.center.points();
    let w = ball.center.weights();
    let z: Vec<Vec<f64>> = pts
        .iter()
        .map(|c| pieces.iter().map(|p| dot(&p.gradient, c) + p.offset).collect())
        .collect();
    match ball.norm {
        NormKind::L1 | NormKind::Linf => {
            dual_lp(&pieces, &z, w, pts, &ball.support, ball.norm, ball.risk, ball.radius)
        }
        NormKind::L2 => {
            dual_l2_subgradient(&pieces, &z, w, pts, &ball.support, ball.risk, ball.radius)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn neg_abs() -> LossFunction {
        LossFunction::MinAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![-1.0], offset: 0.0 },
            ],
        }
    }

    fn ramp() -> LossFunction {
        // Increasing concave: min(x, 0.5 x + 0.2).
        LossFunction::MinAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![0.5], offset: 0.2 },
            ],
        }
    }

    fn ball(
        risk: RiskSpec,
        norm: NormKind,
        eps: f64,
        points: Vec<Vec<f64>>,
        support: SupportSet,
    ) -> AmbiguityBall {
        AmbiguityBall::new(risk, norm, eps, DiscreteDistribution::uniform(points).unwrap(), support)
            .unwrap()
    }

    #[test]
    fn zero_radius_is_saa_for_both_engines() {
        let b = ball(
            RiskSpec::Cvar { alpha: 0.5 },
            NormKind::L1,
            0.0,
            vec![vec![0.3], vec![-0.2]],
            SupportSet::Unconstrained,
        );
        let p = wce_concave_primal(&neg_abs(), &b).unwrap();
        let d = wce_concave_dual(&neg_abs(), &b).unwrap();
        let saa = 0.5 * (-0.3) + 0.5 * (-0.2);
        assert!((p.value - saa).abs() < 1e-9);
        assert!((d.value - saa).abs() < 1e-7, "dual {}", d.value);
    }

    #[test]
    fn staying_put_beats_moving_into_the_valley() {
        // Concave peak at the sample itself: the worst case is to not move,
        // even though the budget would allow reaching -0.3 at either side.
        // The ball always contains its own center, so the value can never
        // drop below the in-sample average.
        for risk in [RiskSpec::Expectation, RiskSpec::Cvar { alpha: 0.0 }] {
            let b = ball(risk, NormKind::L2, 0.3, vec![vec![0.0]], SupportSet::Unconstrained);
            let p = wce_concave_primal(&neg_abs(), &b).unwrap();
            assert!(p.value.abs() < 1e-9, "{risk:?} got {}", p.value);
            assert!(p.attained());
            let d = wce_concave_dual(&neg_abs(), &b).unwrap();
            assert!(d.value.abs() < 5e-3, "{risk:?} dual got {}", d.value);
            assert!(d.value >= p.value - 1e-9);
        }
    }

    #[test]
    fn expectile_primal_dual_cross_check_one_dimensional() {
        // Two samples, tent losses, expectile aggregation at three quarters.
        let tents = [
            neg_abs(),
            LossFunction::MinAffine {
                pieces: vec![
                    AffinePiece { gradient: vec![0.8], offset: 0.1 },
                    AffinePiece { gradient: vec![-1.2], offset: 0.4 },
                ],
            },
        ];
        for loss in &tents {
            for norm in [NormKind::L1, NormKind::Linf] {
                let b = ball(
                    RiskSpec::Expectile { alpha: 0.75 },
                    norm,
                    0.25,
                    vec![vec![-0.5], vec![0.4]],
                    SupportSet::Unconstrained,
                );
                let p = wce_concave_primal(loss, &b).unwrap();
                let d = wce_concave_dual(loss, &b).unwrap();
                assert!(
                    (d.value - p.value).abs() <= 1e-4 * (1.0 + d.value.abs()),
                    "{norm:?}: primal {} dual {}",
                    p.value,
                    d.value
                );
            }
        }
    }

    #[test]
    fn affine_loss_anchors_to_radius_times_dual_norm() {
        let loss = LossFunction::MinAffine {
            pieces: vec![AffinePiece { gradient: vec![1.5, -0.5], offset: 0.2 }],
        };
        let pts = vec![vec![0.0, 0.0], vec![0.4, -0.2]];
        let saa = 0.5 * 0.2 + 0.5 * (1.5 * 0.4 + 0.5 * 0.2 + 0.2);
        for risk in [
            RiskSpec::Expectation,
            RiskSpec::Cvar { alpha: 0.3 },
            RiskSpec::Cvar { alpha: 0.9 },
            RiskSpec::Expectile { alpha: 0.5 },
            RiskSpec::Expectile { alpha: 0.8 },
        ] {
            for norm in [NormKind::L1, NormKind::L2, NormKind::Linf] {
                let b = ball(risk, norm, 0.25, pts.clone(), SupportSet::Unconstrained);
                let expected = saa + 0.25 * norm.dual_eval(&[1.5, -0.5]);
                let p = wce_concave_primal(&loss, &b).unwrap();
                assert!(
                    (p.value - expected).abs() < 2e-4 * (1.0 + expected.abs()),
                    "primal {risk:?} {norm:?}: {} vs {expected}",
                    p.value
                );
                let d = wce_concave_dual(&loss, &b).unwrap();
                assert!(
                    (d.value - expected).abs() < 2e-3 * (1.0 + expected.abs()),
                    "dual {risk:?} {norm:?}: {} vs {expected}",
                    d.value
                );
            }
        }
    }

    #[test]
    fn tail_mean_budget_decouples_small_samples() {
        // Two equal weights at tail level one half: the aggregated cost is
        // the larger displacement, so each sample independently moves 0.3.
        let b = ball(
            RiskSpec::Cvar { alpha: 0.5 },
            NormKind::L2,
            0.3,
            vec![vec![0.0], vec![1.0]],
            SupportSet::Unconstrained,
        );
        let expected = 0.5 * 0.3 + 0.5 * ramp().evaluate(&[1.3]);
        let p = wce_concave_primal(&ramp(), &b).unwrap();
        assert!((p.value - expected).abs() < 1e-4, "primal {} vs {expected}", p.value);
        let d = wce_concave_dual(&ramp(), &b).unwrap();
        assert!(d.value >= p.value - 1e-9);
        assert!((d.value - expected).abs() < 5e-3, "dual {} vs {expected}", d.value);
    }

    #[test]
    fn primal_stays_within_ball_and_support() {
        let b = ball(
            RiskSpec::Expectile { alpha: 0.75 },
            NormKind::L2,
            0.4,
            vec![vec![0.2, 0.0], vec![-0.3, 0.1]],
            SupportSet::Box { lower: vec![-0.5, -0.5], upper: vec![0.5, 0.5] },
        );
        let loss = LossFunction::MinAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0, 0.5], offset: 0.0 },
                AffinePiece { gradient: vec![-0.2, 1.0], offset: 0.3 },
            ],
        };
        let p = wce_concave_primal(&loss, &b).unwrap();
        let d = p.worst_case.unwrap().exact.unwrap();
        for atom in d.points() {
            assert!(atom.iter().all(|v| v.abs() <= 0.5 + 1e-9));
        }
        let dist = crate::transport::distance(b.risk, &b.center, &d, b.norm).unwrap();
        assert!(dist <= b.radius + 1e-6, "distance {dist}");
    }

    #[test]
    fn lp_dual_matches_primal_on_box_instances() {
        let loss = LossFunction::MinAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0, 0.5], offset: 0.0 },
                AffinePiece { gradient: vec![-0.2, 1.0], offset: 0.3 },
                AffinePiece { gradient: vec![0.4, -0.8], offset: 0.5 },
            ],
        };
        for risk in [
            RiskSpec::Expectation,
            RiskSpec::Cvar { alpha: 0.5 },
            RiskSpec::Expectile { alpha: 0.75 },
        ] {
            for norm in [NormKind::L1, NormKind::Linf] {
                let b = ball(
                    risk,
                    norm,
                    0.4,
                    vec![vec![0.2, 0.0], vec![-0.3, 0.1]],
                    SupportSet::Box { lower: vec![-0.6, -0.6], upper: vec![0.6, 0.6] },
                );
                let p = wce_concave_primal(&loss, &b).unwrap();
                let d = wce_concave_dual(&loss, &b).unwrap();
                assert!(d.value >= p.value - 1e-7, "{risk:?} {norm:?}: {} vs {}", p.value, d.value);
                assert!(
                    (d.value - p.value).abs() <= 1e-4 * (1.0 + d.value.abs()),
                    "{risk:?} {norm:?}: primal {} dual {}",
                    p.value,
                    d.value
                );
            }
        }
    }

    #[test]
    fn ess_sup_aggregation_is_rejected() {
        let b = AmbiguityBall::new(
            RiskSpec::EssSup,
            NormKind::L2,
            0.1,
            DiscreteDistribution::uniform(vec![vec![0.0]]).unwrap(),
            SupportSet::Unconstrained,
        )
        .unwrap();
        assert!(matches!(
            wce_concave_primal(&neg_abs(), &b),
            Err(WorstCaseError::Unsupported(_))
        ));
        assert!(matches!(wce_concave_dual(&neg_abs(), &b), Err(WorstCaseError::Unsupported(_))));
    }

    #[test]
    fn convex_loss_is_rejected() {
        let convex = LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![-1.0], offset: 0.0 },
            ],
        };
        let b = ball(
            RiskSpec::Expectation,
            NormKind::L2,
            0.1,
            vec![vec![0.0]],
            SupportSet::Unconstrained,
        );
        assert!(matches!(wce_concave_primal(&convex, &b), Err(WorstCaseError::Unsupported(_))));
    }

    #[test]
    fn cost_gradient_sums_to_one_for_tail_and_expectile() {
        let costs = [0.4, 0.1, 0.9, 0.3];
        let w = [0.25, 0.25, 0.25, 0.25];
        for risk in [
            RiskSpec::Expectation,
            RiskSpec::Cvar { alpha: 0.6 },
            RiskSpec::Expectile { alpha: 0.8 },
        ] {
            let g = risk_cost_gradient(risk, &costs, &w);
            let total: f64 = g.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "{risk:?}: {total}");
            assert!(g.iter().all(|&v| v >= 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        /// Directional derivative check: the aggregated cost along a random
        /// perturbation matches the reported gradient to first order.
        #[test]
        fn cost_gradient_matches_finite_differences(
            c in proptest::collection::vec(0.1f64..2.0, 4),
            d in proptest::collection::vec(-1.0f64..1.0, 4),
            alpha in 0.55f64..0.9,
        ) {
            let w = [0.4, 0.3, 0.2, 0.1];
            for risk in [RiskSpec::Cvar { alpha }, RiskSpec::Expectile { alpha }] {
                let g = risk_cost_gradient(risk, &c, &w);
                let h = 1e-6;
                let cp: Vec<f64> = c.iter().zip(&d).map(|(ci, di)| ci + h * di).collect();
                let cm: Vec<f64> = c.iter().zip(&d).map(|(ci, di)| ci - h * di).collect();
                let fd = (risk_of_costs(risk, &cp, &w) - risk_of_costs(risk, &cm, &w)) / (2.0 * h);
                let lin: f64 = g.iter().zip(&d).map(|(gi, di)| gi * di).sum();
                // Kinks can spoil the comparison; tolerate a small gap.
                prop_assert!((fd - lin).abs() < 1e-3, "{risk:?}: fd {fd} lin {lin}");
            }
        }
    }
}
