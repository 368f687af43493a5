//! CVaR-aggregated balls against convex piecewise linear losses.
//!
//! On unconstrained supports the worst-case expectation collapses to the
//! larger of two branches: every sample at its radius-sphere maximizer, or
//! the sample average plus the Lipschitz constant times the scaled radius,
//! the latter approached by vanishing mass escaping along the steepest
//! piece. Constrained supports go through a finite dimensional reduction:
//! an outer scalar search over the tail threshold `t` and, per fixed `t`, a
//! jointly convex program in per-piece weights and scaled displacements.

use std::cell::RefCell;

use crate::domain::{
    dot, AmbiguityBall, DiscreteDistribution, DomainError, LossFunction, NormKind, RiskSpec,
};
use crate::solver::lp::{LpBuilder, LpOutcome, Rel};
use crate::solver::project::project_simplex;
use crate::solver::scalar::grid_min;
use crate::solver::SolverError;

use super::{
    escaping_direction, family_base_scale, norm_subgradient, pieces_for_convex, run_penalty_loop,
    ActiveBranch, AsymptoticFamily, Diagnostics, Method, PenaltyLoop, PerspectiveRows,
    SampleLimit, WceResult, WorstCaseDistribution, WorstCaseError,
};

fn check_alpha(alpha: f64) -> Result<(), WorstCaseError> {
    if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
        return Err(DomainError::BadRisk(format!("cvar level {alpha} outside [0, 1)")).into());
    }
    Ok(())
}

/// Two-branch value for an unconstrained support.
///
/// Branch 1 is the weighted sum of sphere maxima, attained by moving every
/// sample to its maximizer. Branch 2 adds `L (1 - alpha) eps` to the sample
/// average and is attained only in the limit of a two-point family whose
/// escaping mass shrinks inversely with the escape distance. Exact ties
/// report branch 1: it certifies existence.
pub fn wce_closed_form_cvar(
    loss: &LossFunction,
    samples: &DiscreteDistribution,
    eps: f64,
    alpha: f64,
    norm: NormKind,
) -> Result<WceResult, WorstCaseError> {
    loss.validate()?;
    check_alpha(alpha)?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(DomainError::BadRadius(eps).into());
    }
    if loss.dim() != samples.dim() {
        return Err(
            DomainError::DimensionMismatch { expected: samples.dim(), got: loss.dim() }.into()
        );
    }
    if !loss.is_convex() {
        return Err(WorstCaseError::Unsupported(
            "closed form needs a convex loss; concave losses have their own engines".into(),
        ));
    }
    let lip = loss.lipschitz(norm);
    let w = samples.weights();
    let pts = samples.points();
    let mut branch1 = 0.0;
    let mut saa = 0.0;
    let mut sphere_atoms = Vec::with_capacity(pts.len());
    for (c, &wi) in pts.iter().zip(w) {
        let sm = loss.sphere_max(c, eps, norm)?;
        branch1 += wi * sm.value;
        saa += wi * loss.evaluate(c);
        sphere_atoms
            .push(c.iter().zip(&sm.direction).map(|(x, e)| x + eps * e).collect::<Vec<f64>>());
    }
    let branch2 = saa + lip * (1.0 - alpha) * eps;
    if branch1 >= branch2 {
        let dist = DiscreteDistribution::new(sphere_atoms, w.to_vec())?;
        return Ok(WceResult::exact(
            branch1,
            Method::CvarClosedForm,
            dist,
            Diagnostics {
                iterations: 0,
                duality_gap: None,
                active_branch: Some(ActiveBranch::SphereMax),
            },
        ));
    }
    let pieces = pieces_for_convex(loss)?;
    let (dir, _) = escaping_direction(&pieces, norm);
    let coeff = (1.0 - alpha) * eps;
    let family = AsymptoticFamily {
        centers: pts.to_vec(),
        weights: w.to_vec(),
        per_sample: vec![
            SampleLimit::TwoPoint { direction: dir, mass_coefficient: coeff };
            pts.len()
        ],
        base_scale: family_base_scale(eps, &[coeff]),
    };
    Ok(WceResult {
        value: branch2,
        method: Method::CvarClosedForm,
        worst_case: Some(WorstCaseDistribution::escaping(family)),
        diagnostics: Diagnostics {
            iterations: 0,
            duality_gap: None,
            active_branch: Some(ActiveBranch::LipschitzShift),
        },
    })
}

struct InnerSolution {
    value: f64,
    /// (p, y) in perspective coordinates; y stored per (sample, piece).
    weights: Vec<Vec<f64>>,
    displacements: Vec<Vec<Vec<f64>>>,
    iterations: usize,
}

/// Inner problem at fixed tail threshold `t` on an unconstrained support:
/// displacements align with each piece's dual-norm realizer, leaving a
/// linear program over per-piece weights, displacement lengths and tail
/// epigraph variables.
fn inner_lp(
    pieces_dual: &[f64],
    realizers: &[Vec<f64>],
    z: &[Vec<f64>],
    w: &[f64],
    t: f64,
    budget: f64,
) -> Result<InnerSolution, WorstCaseError> {
    let n = w.len();
    let k = pieces_dual.len();
    let mut b = LpBuilder::new();
    let mut p_var = vec![vec![0usize; k]; n];
    let mut r_var = vec![vec![0usize; k]; n];
    let mut g_var = vec![vec![0usize; k]; n];
    for i in 0..n {
        for j in 0..k {
            p_var[i][j] = b.var(0.0, f64::INFINITY, -w[i] * z[i][j]);
            r_var[i][j] = b.var(0.0, f64::INFINITY, -w[i] * pieces_dual[j]);
            g_var[i][j] = b.var(0.0, f64::INFINITY, 0.0);
        }
    }
    for i in 0..n {
        b.row(Rel::Eq, 1.0, (0..k).map(|j| (p_var[i][j], 1.0)).collect());
        for j in 0..k {
            b.row(
                Rel::Ge,
                0.0,
                vec![(g_var[i][j], 1.0), (r_var[i][j], -1.0), (p_var[i][j], t)],
            );
        }
    }
    let budget_row: Vec<(usize, f64)> =
        (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| (g_var[i][j], w[i])).collect();
    b.row(Rel::Le, budget, budget_row);
    let lp = b.build();
    let sol = match crate::solver::lp::lp_solve(&lp)? {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Infeasible => {
            return Err(SolverError::Numerical("tail program reported infeasible".into()).into())
        }
        LpOutcome::Unbounded => return Err(WorstCaseError::DualUnbounded),
    };
    let mut weights = vec![vec![0.0; k]; n];
    let mut displacements = vec![vec![vec![]; k]; n];
    for i in 0..n {
        for j in 0..k {
            weights[i][j] = sol.x[p_var[i][j]];
            let r = sol.x[r_var[i][j]];
            displacements[i][j] = realizers[j].iter().map(|e| r * e).collect();
        }
    }
    Ok(InnerSolution { value: -sol.value, weights, displacements, iterations: sol.iterations })
}

/// Inner problem at fixed `t` on a constrained support, solved by projected
/// subgradient on an exact penalty. Every iterate is restored to exact
/// feasibility (support clip per atom, then a global displacement rescale
/// against the tail budget), so the returned value is certified feasible.
#[allow(clippy::too_many_arguments)]
fn inner_subgradient(
    gradients: &[Vec<f64>],
    z: &[Vec<f64>],
    w: &[f64],
    rows: &PerspectiveRows,
    norm: NormKind,
    lip: f64,
    alpha: f64,
    eps: f64,
    t: f64,
) -> Result<InnerSolution, WorstCaseError> {
    let n = w.len();
    let k = gradients.len();
    let m = gradients[0].len();
    let budget = (1.0 - alpha) * (eps - t);
    let y_at = |i: usize, j: usize| (i * k + j) * m;
    let p_at = |i: usize, j: usize| n * k * m + i * k + j;
    let dim = n * k * m + n * k;
    let kappa = (4.0 * (1.0 + lip) / (1.0 - alpha).max(1e-6)).min(1e4);

    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        g.fill(0.0);
        let mut value = 0.0;
        let mut tail = 0.0;
        let mut support = 0.0;
        let mut nsub = vec![0.0; m];
        for i in 0..n {
            for j in 0..k {
                let y = &x[y_at(i, j)..y_at(i, j) + m];
                let p = x[p_at(i, j)];
                value += w[i] * (dot(&gradients[j], y) + z[i][j] * p);
                for (gk, ak) in g[y_at(i, j)..y_at(i, j) + m].iter_mut().zip(&gradients[j]) {
                    *gk -= w[i] * ak;
                }
                g[p_at(i, j)] -= w[i] * z[i][j];
                let ny = norm.eval(y);
                if ny - t * p > 0.0 {
                    tail += w[i] * (ny - t * p);
                }
                let mut gp = 0.0;
                let (gy_lo, gy_hi) = (y_at(i, j), y_at(i, j) + m);
                support += w[i]
                    * rows.penalty_accum(
                        i,
                        y,
                        p,
                        kappa * w[i],
                        &mut g[gy_lo..gy_hi],
                        &mut gp,
                    );
                g[p_at(i, j)] += gp;
            }
        }
        let excess = tail - budget;
        if excess > 0.0 {
            for i in 0..n {
                for j in 0..k {
                    let y = &x[y_at(i, j)..y_at(i, j) + m];
                    let p = x[p_at(i, j)];
                    if norm.eval(y) - t * p > 0.0 {
                        norm_subgradient(norm, y, &mut nsub);
                        for (gk, sk) in g[y_at(i, j)..y_at(i, j) + m].iter_mut().zip(&nsub) {
                            *gk += kappa * w[i] * sk;
                        }
                        g[p_at(i, j)] -= kappa * w[i] * t;
                    }
                }
            }
        }
        -value + kappa * excess.max(0.0) + kappa * support
    };

    let project = |x: &mut [f64]| {
        for i in 0..n {
            let lo = p_at(i, 0);
            project_simplex(&mut x[lo..lo + k]);
        }
    };

    let restore = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut r = x.to_vec();
        for i in 0..n {
            let lo = p_at(i, 0);
            project_simplex(&mut r[lo..lo + k]);
        }
        for i in 0..n {
            for j in 0..k {
                let p = r[p_at(i, j)];
                let (lo, hi) = (y_at(i, j), y_at(i, j) + m);
                rows.clip(i, &mut r[lo..hi], p);
            }
        }
        let tail = |s: f64, r: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..k {
                    let y = &r[y_at(i, j)..y_at(i, j) + m];
                    let v = s * norm.eval(y) - t * r[p_at(i, j)];
                    if v > 0.0 {
                        acc += w[i] * v;
                    }
                }
            }
            acc
        };
        if tail(1.0, &r) > budget + 1e-15 {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if tail(mid, &r) > budget {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            for i in 0..n {
                for j in 0..k {
                    for v in r[y_at(i, j)..y_at(i, j) + m].iter_mut() {
                        *v *= lo;
                    }
                }
            }
        }
        let mut value = 0.0;
        for i in 0..n {
            for j in 0..k {
                let y = &r[y_at(i, j)..y_at(i, j) + m];
                value += w[i] * (dot(&gradients[j], y) + z[i][j] * r[p_at(i, j)]);
            }
        }
        (value, r)
    };

    let mut seeds: Vec<Vec<f64>> = Vec::new();
    let mut saa_seed = vec![0.0; dim];
    for i in 0..n {
        let j0 = argmax(&z[i]);
        saa_seed[p_at(i, j0)] = 1.0;
    }
    seeds.push(saa_seed.clone());
    let mut sphere_seed = vec![0.0; dim];
    for i in 0..n {
        let mut best = f64::NEG_INFINITY;
        let mut jb = 0;
        for j in 0..k {
            let v = z[i][j] + t * norm.dual_eval(&gradients[j]);
            if v > best {
                best = v;
                jb = j;
            }
        }
        sphere_seed[p_at(i, jb)] = 1.0;
        let e = norm.unit_dual_realizer(&gradients[jb]);
        for (s, ek) in sphere_seed[y_at(i, jb)..y_at(i, jb) + m].iter_mut().zip(&e) {
            *s = t * ek;
        }
    }
    seeds.push(sphere_seed);
    if budget > 0.0 {
        let mut escape = saa_seed;
        let mut jb = 0;
        let mut best = f64::NEG_INFINITY;
        for (j, a) in gradients.iter().enumerate() {
            let d = norm.dual_eval(a);
            if d > best {
                best = d;
                jb = j;
            }
        }
        let e = norm.unit_dual_realizer(&gradients[jb]);
        for (s, ek) in escape[y_at(0, jb)..y_at(0, jb) + m].iter_mut().zip(&e) {
            *s = budget / w[0] * ek;
        }
        seeds.push(escape);
    }

    let mut best_value = f64::NEG_INFINITY;
    let mut best_x = vec![0.0; dim];
    let mut iterations = 0;
    for seed in seeds {
        let (v, x, it) = run_penalty_loop(&PenaltyLoop {
            objective_grad: &objective,
            project: &project,
            restore: &restore,
            x0: seed,
            step0: 0.25 * eps.max(1.0),
            restarts: 3,
            iters: 400,
        });
        iterations += it;
        if v > best_value {
            best_value = v;
            best_x = x;
        }
    }
    let mut weights = vec![vec![0.0; k]; n];
    let mut displacements = vec![vec![vec![]; k]; n];
    for i in 0..n {
        for j in 0..k {
            weights[i][j] = best_x[p_at(i, j)];
            displacements[i][j] = best_x[y_at(i, j)..y_at(i, j) + m].to_vec();
        }
    }
    Ok(InnerSolution { value: best_value, weights, displacements, iterations })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Finite dimensional reduction of the CVaR-ball worst case: outer search
/// over the tail threshold `t` in `[0, eps]` (the budget forces `t <= eps`),
/// inner jointly convex program per `t`. The inner problem is a linear
/// program on unconstrained supports and an exact-penalty subgradient solve
/// otherwise. On unconstrained supports the optimum sits at an endpoint of
/// the `t` interval, both of which the grid evaluates exactly.
pub fn cvar_finite_dim_program(
    loss: &LossFunction,
    ball: &AmbiguityBall,
    t_points: usize,
) -> Result<WceResult, WorstCaseError> {
    loss.validate()?;
    let alpha = match ball.risk {
        RiskSpec::Cvar { alpha } => alpha,
        RiskSpec::Expectation => 0.0,
        _ => {
            return Err(WorstCaseError::Unsupported(
                "finite dimensional reduction covers expectation and cvar balls only".into(),
            ))
        }
    };
    check_alpha(alpha)?;
    if loss.dim() != ball.dim() {
        return Err(DomainError::DimensionMismatch { expected: ball.dim(), got: loss.dim() }.into());
    }
    let pieces = pieces_for_convex(loss)?;
    let w = ball.center.weights();
    let pts = ball.center.points();
    let eps = ball.radius;
    let z: Vec<Vec<f64>> = pts
        .iter()
        .map(|c| pieces.iter().map(|p| dot(&p.gradient, c) + p.offset).collect())
        .collect();
    if eps == 0.0 {
        let saa: f64 = w.iter().zip(&z).map(|(&wi, zi)| wi * zi.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).sum();
        return Ok(WceResult::exact(
            saa,
            Method::CvarFiniteDim,
            ball.center.clone(),
            Diagnostics::default(),
        ));
    }
    let lip = loss.lipschitz(ball.norm);
    let rows = PerspectiveRows::build(&ball.support, pts);
    let pieces_dual: Vec<f64> =
        pieces.iter().map(|p| ball.norm.dual_eval(&p.gradient)).collect();
    let realizers: Vec<Vec<f64>> =
        pieces.iter().map(|p| ball.norm.unit_dual_realizer(&p.gradient)).collect();
    let gradients: Vec<Vec<f64>> = pieces.iter().map(|p| p.gradient.clone()).collect();

    let inner = |t: f64| -> Result<InnerSolution, WorstCaseError> {
        if rows.is_empty() {
            inner_lp(&pieces_dual, &realizers, &z, w, t, (1.0 - alpha) * (eps - t))
        } else {
            inner_subgradient(&gradients, &z, w, &rows, ball.norm, lip, alpha, eps, t)
        }
    };

    let failure: RefCell<Option<WorstCaseError>> = RefCell::new(None);
    let negated = |t: f64| -> f64 {
        match inner(t.clamp(0.0, eps)) {
            Ok(s) => -s.value,
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                f64::INFINITY
            }
        }
    };
    let (t_star, neg_value) = grid_min(&negated, 0.0, eps, t_points.max(2) - 1);
    if neg_value.is_infinite() {
        return Err(failure
            .into_inner()
            .unwrap_or_else(|| SolverError::Numerical("tail search found no value".into()).into()));
    }
    let sol = inner(t_star)?;
    let dist = super::perspective_distribution(pts, w, &sol.weights, &sol.displacements);
    let attained = dist.is_some();
    Ok(WceResult {
        value: sol.value.max(-neg_value),
        method: Method::CvarFiniteDim,
        worst_case: Some(match dist {
            Some(d) => WorstCaseDistribution::exact(d),
            None => WorstCaseDistribution::unresolved(),
        }),
        diagnostics: Diagnostics {
            iterations: sol.iterations,
            duality_gap: None,
            active_branch: if attained { None } else { Some(ActiveBranch::LipschitzShift) },
        },
    })
}

/// Worst-case expectation over a CVaR ball for a convex piecewise linear
/// loss: closed form when the support is unconstrained, finite dimensional
/// reduction with a 101-point tail grid otherwise.
pub fn wce_cvx_pwl_cvar(
    loss: &LossFunction,
    ball: &AmbiguityBall,
) -> Result<WceResult, WorstCaseError> {
    let alpha = match ball.risk {
        RiskSpec::Cvar { alpha } => alpha,
        RiskSpec::Expectation => 0.0,
        _ => {
            return Err(WorstCaseError::Unsupported(
                "this engine aggregates transport cost by cvar (or expectation at level zero)"
                    .into(),
            ))
        }
    };
    if ball.support.is_unconstrained() {
        wce_closed_form_cvar(loss, &ball.center, ball.radius, alpha, ball.norm)
    } else {
        cvar_finite_dim_program(loss, ball, 101)
    }
}
