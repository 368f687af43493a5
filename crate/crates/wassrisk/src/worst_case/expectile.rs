//! Expectile-aggregated balls against convex piecewise linear losses.
//!
//! The ball constraint rewrites as a single convex budget: with
//! `beta' = (1 - alpha)/(2 alpha - 1)`, a coupling with per-piece
//! displacements `y_ij` carried by weights `p_ij` lies in the ball iff
//! `sum w_i (||y_ij|| - eps p_ij)_+ + beta' sum w_i ||y_ij|| <= beta' eps`.
//! On unconstrained supports the optimum decouples per sample into the
//! larger of a sphere maximum and a Lipschitz shift scaled by
//! `beta = (1 - alpha)/alpha`; the shift branch is approached by escaping
//! mass `beta eps / s` at distance `s`.

use crate::domain::{
    dot, AmbiguityBall, DiscreteDistribution, DomainError, LossFunction, NormKind, RiskSpec,
    SupportSet,
};
use crate::solver::lp::{LpBuilder, LpOutcome, Rel};
use crate::solver::project::project_simplex;
use crate::solver::subgradient::{projected_subgradient, SubgradientProblem};
use crate::solver::SolverError;

use super::{
    escaping_direction, family_base_scale, norm_subgradient, perspective_distribution,
    pieces_for_convex, run_penalty_loop, ActiveBranch, AsymptoticFamily, Diagnostics, Method,
    PenaltyLoop, PerspectiveRows, SampleLimit, WceResult, WorstCaseDistribution, WorstCaseError,
};

/// `beta' = (1 - alpha)/(2 alpha - 1)`, rejecting levels outside (1/2, 1).
/// At one half the budget blows up; that ball is the type-1 Wasserstein ball
/// and has its own path.
fn shape_ratio(alpha: f64) -> Result<f64, WorstCaseError> {
    if !alpha.is_finite() || alpha <= 0.5 || alpha >= 1.0 {
        return Err(DomainError::BadRisk(format!(
            "expectile ball engines need alpha strictly inside (1/2, 1), got {alpha}"
        ))
        .into());
    }
    Ok((1.0 - alpha) / (2.0 * alpha - 1.0))
}

fn check_convex_inputs(
    loss: &LossFunction,
    dim: usize,
    eps: f64,
) -> Result<(), WorstCaseError> {
    loss.validate()?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(DomainError::BadRadius(eps).into());
    }
    if loss.dim() != dim {
        return Err(DomainError::DimensionMismatch { expected: dim, got: loss.dim() }.into());
    }
    if !loss.is_convex() {
        return Err(WorstCaseError::Unsupported(
            "expectile engines need a convex loss; concave losses have their own engines".into(),
        ));
    }
    Ok(())
}

/// Per-sample two-branch value on an unconstrained support: the larger of
/// `loss(center) + beta L eps` and the sphere maximum, `beta = (1-alpha)/alpha`.
/// Samples whose shift branch strictly wins form the escaping index set; the
/// optimum is attained iff that set is empty. A strict-tie sample sits on its
/// sphere maximizer, which certifies existence.
pub fn wce_closed_form_expectile(
    loss: &LossFunction,
    samples: &DiscreteDistribution,
    eps: f64,
    alpha: f64,
    norm: NormKind,
) -> Result<WceResult, WorstCaseError> {
    shape_ratio(alpha)?;
    check_convex_inputs(loss, samples.dim(), eps)?;
    let beta = (1.0 - alpha) / alpha;
    let lip = loss.lipschitz(norm);
    let w = samples.weights();
    let pts = samples.points();
    let shift_gain = beta * lip * eps;
    let mut value = 0.0;
    let mut escaping = Vec::new();
    let mut sphere_atoms = Vec::with_capacity(pts.len());
    for (i, (c, &wi)) in pts.iter().zip(w).enumerate() {
        let sm = loss.sphere_max(c, eps, norm)?;
        let shift = loss.evaluate(c) + shift_gain;
        if shift > sm.value {
            escaping.push(i);
            value += wi * shift;
            sphere_atoms.push(c.clone());
        } else {
            value += wi * sm.value;
            sphere_atoms
                .push(c.iter().zip(&sm.direction).map(|(x, e)| x + eps * e).collect());
        }
    }
    if escaping.is_empty() {
        let dist = DiscreteDistribution::new(sphere_atoms, w.to_vec())?;
        return Ok(WceResult::exact(
            value,
            Method::ExpectileClosedForm,
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
    let coeff = beta * eps;
    let per_sample = (0..pts.len())
        .map(|i| {
            if escaping.contains(&i) {
                SampleLimit::TwoPoint { direction: dir.clone(), mass_coefficient: coeff }
            } else {
                SampleLimit::Fixed { point: sphere_atoms[i].clone() }
            }
        })
        .collect();
    let family = AsymptoticFamily {
        centers: pts.to_vec(),
        weights: w.to_vec(),
        per_sample,
        base_scale: family_base_scale(eps, &[coeff]),
    };
    Ok(WceResult {
        value,
        method: Method::ExpectileClosedForm,
        worst_case: Some(WorstCaseDistribution::escaping(family)),
        diagnostics: Diagnostics {
            iterations: 0,
            duality_gap: None,
            active_branch: Some(ActiveBranch::PerSample { lipschitz_count: escaping.len() }),
        },
    })
}

struct PrimalSolution {
    value: f64,
    weights: Vec<Vec<f64>>,
    displacements: Vec<Vec<Vec<f64>>>,
    iterations: usize,
}

/// Exact feasibility restoration in the flattened perspective layout:
/// simplex projection per sample, support clip per atom, then a global
/// displacement rescale against the budget. Restored points are certified
/// feasible, so the returned value is a valid lower bound.
#[allow(clippy::too_many_arguments)]
fn restore_perspective(
    x: &[f64],
    gradients: &[Vec<f64>],
    z: &[Vec<f64>],
    w: &[f64],
    rows: &PerspectiveRows,
    norm: NormKind,
    bp: f64,
    eps: f64,
) -> (f64, Vec<f64>) {
    let n = w.len();
    let k = gradients.len();
    let m = gradients[0].len();
    let y_at = |i: usize, j: usize| (i * k + j) * m;
    let p_at = |i: usize, j: usize| n * k * m + i * k + j;
    let budget = bp * eps;
    let burden = |s: f64, x: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..k {
                let ny = s * norm.eval(&x[y_at(i, j)..y_at(i, j) + m]);
                acc += w[i] * ((ny - eps * x[p_at(i, j)]).max(0.0) + bp * ny);
            }
        }
        acc
    };
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
    if burden(1.0, &r) > budget + 1e-15 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if burden(mid, &r) > budget {
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
}

/// The single-budget program as one linear program for polyhedral ground
/// norms: a norm epigraph and a hinge epigraph per atom feed the budget row,
/// support membership enters through the perspective rows, and the piece
/// weights sum to one per sample.
fn primal_lp_solve(
    gradients: &[Vec<f64>],
    z: &[Vec<f64>],
    w: &[f64],
    rows: &PerspectiveRows,
    norm: NormKind,
    bp: f64,
    eps: f64,
) -> Result<PrimalSolution, WorstCaseError> {
    let n = w.len();
    let k = gradients.len();
    let m = gradients[0].len();
    let mut b = LpBuilder::new();
    let y: Vec<Vec<Vec<usize>>> = (0..n)
        .map(|i| {
            (0..k)
                .map(|j| {
                    (0..m)
                        .map(|kk| {
                            b.var(f64::NEG_INFINITY, f64::INFINITY, -w[i] * gradients[j][kk])
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let p: Vec<Vec<usize>> =
        (0..n).map(|i| (0..k).map(|j| b.var(0.0, f64::INFINITY, -w[i] * z[i][j])).collect()).collect();
    let mut budget = Vec::new();
    for i in 0..n {
        b.row(Rel::Eq, 1.0, p[i].iter().map(|&v| (v, 1.0)).collect());
        for j in 0..k {
            let t = b.var(0.0, f64::INFINITY, 0.0);
            match norm {
                NormKind::L1 => {
                    let mut total = vec![(t, 1.0)];
                    for kk in 0..m {
                        let s = b.var(0.0, f64::INFINITY, 0.0);
                        b.row(Rel::Ge, 0.0, vec![(s, 1.0), (y[i][j][kk], -1.0)]);
                        b.row(Rel::Ge, 0.0, vec![(s, 1.0), (y[i][j][kk], 1.0)]);
                        total.push((s, -1.0));
                    }
                    b.row(Rel::Ge, 0.0, total);
                }
                NormKind::Linf => {
                    for kk in 0..m {
                        b.row(Rel::Ge, 0.0, vec![(t, 1.0), (y[i][j][kk], -1.0)]);
                        b.row(Rel::Ge, 0.0, vec![(t, 1.0), (y[i][j][kk], 1.0)]);
                    }
                }
                NormKind::L2 => unreachable!("euclidean balls do not take the LP path"),
            }
            let q = b.var(0.0, f64::INFINITY, 0.0);
            b.row(Rel::Ge, 0.0, vec![(q, 1.0), (t, -1.0), (p[i][j], eps)]);
            budget.push((q, w[i]));
            budget.push((t, w[i] * bp));
            for (normal, &r) in rows.normals.iter().zip(&rows.rhs[i]) {
                let mut terms: Vec<(usize, f64)> = normal
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a != 0.0)
                    .map(|(kk, &a)| (y[i][j][kk], a))
                    .collect();
                terms.push((p[i][j], -r));
                b.row(Rel::Le, 0.0, terms);
            }
        }
    }
    b.row(Rel::Le, bp * eps, budget);
    let lp = b.build();
    let sol = match crate::solver::lp::lp_solve(&lp)? {
        LpOutcome::Optimal(sol) => sol,
        LpOutcome::Infeasible => {
            return Err(SolverError::Numerical("budget program reported infeasible".into()).into())
        }
        LpOutcome::Unbounded => {
            return Err(SolverError::Numerical("budget program reported unbounded".into()).into())
        }
    };
    // Rows hold up to solver tolerance only; restore before reading off.
    let y_at = |i: usize, j: usize| (i * k + j) * m;
    let p_at = |i: usize, j: usize| n * k * m + i * k + j;
    let mut flat = vec![0.0; n * k * m + n * k];
    for i in 0..n {
        for j in 0..k {
            for kk in 0..m {
                flat[y_at(i, j) + kk] = sol.x[y[i][j][kk]];
            }
            flat[p_at(i, j)] = sol.x[p[i][j]];
        }
    }
    let (value, best) = restore_perspective(&flat, gradients, z, w, rows, norm, bp, eps);
    let mut weights = vec![vec![0.0; k]; n];
    let mut displacements = vec![vec![vec![]; k]; n];
    for i in 0..n {
        for j in 0..k {
            weights[i][j] = best[p_at(i, j)];
            displacements[i][j] = best[y_at(i, j)..y_at(i, j) + m].to_vec();
        }
    }
    Ok(PrimalSolution { value, weights, displacements, iterations: sol.iterations })
}

/// Exact-penalty subgradient solve of the single-budget program. Every
/// iterate is restored (support clip per atom, then a global displacement
/// rescale against the budget), so the returned value is certified feasible.
#[allow(clippy::too_many_arguments)]
fn primal_penalty_solve(
    gradients: &[Vec<f64>],
    z: &[Vec<f64>],
    w: &[f64],
    rows: &PerspectiveRows,
    norm: NormKind,
    lip: f64,
    bp: f64,
    eps: f64,
    beta: f64,
) -> PrimalSolution {
    let n = w.len();
    let k = gradients.len();
    let m = gradients[0].len();
    let budget = bp * eps;
    let y_at = |i: usize, j: usize| (i * k + j) * m;
    let p_at = |i: usize, j: usize| n * k * m + i * k + j;
    let dim = n * k * m + n * k;
    let kappa = ((2.0 + 2.0 * lip) * (1.0 + 1.0 / bp)).min(1e4);

    let burden = |s: f64, x: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..k {
                let ny = s * norm.eval(&x[y_at(i, j)..y_at(i, j) + m]);
                acc += w[i] * ((ny - eps * x[p_at(i, j)]).max(0.0) + bp * ny);
            }
        }
        acc
    };

    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        g.fill(0.0);
        let mut value = 0.0;
        let mut support = 0.0;
        let mut nsub = vec![0.0; m];
        let excess = burden(1.0, x) - budget;
        for i in 0..n {
            for j in 0..k {
                let (lo, hi) = (y_at(i, j), y_at(i, j) + m);
                let y = &x[lo..hi];
                let p = x[p_at(i, j)];
                value += w[i] * (dot(&gradients[j], y) + z[i][j] * p);
                for (gk, ak) in g[lo..hi].iter_mut().zip(&gradients[j]) {
                    *gk -= w[i] * ak;
                }
                g[p_at(i, j)] -= w[i] * z[i][j];
                let mut gp = 0.0;
                support += w[i] * rows.penalty_accum(i, y, p, kappa * w[i], &mut g[lo..hi], &mut gp);
                g[p_at(i, j)] += gp;
                if excess > 0.0 {
                    let ny = norm.eval(y);
                    norm_subgradient(norm, y, &mut nsub);
                    let mut coeff = kappa * w[i] * bp;
                    if ny - eps * p > 0.0 {
                        coeff += kappa * w[i];
                        g[p_at(i, j)] -= kappa * w[i] * eps;
                    }
                    for (gk, sk) in g[lo..hi].iter_mut().zip(&nsub) {
                        *gk += coeff * sk;
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

    let restore =
        |x: &[f64]| -> (f64, Vec<f64>) { restore_perspective(x, gradients, z, w, rows, norm, bp, eps) };

    let mut seeds: Vec<Vec<f64>> = Vec::new();
    let mut saa_seed = vec![0.0; dim];
    for (i, zi) in z.iter().enumerate() {
        saa_seed[p_at(i, argmax(zi))] = 1.0;
    }
    seeds.push(saa_seed.clone());
    let mut sphere_seed = vec![0.0; dim];
    for (i, zi) in z.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut jb = 0;
        for (j, a) in gradients.iter().enumerate() {
            let v = zi[j] + eps * norm.dual_eval(a);
            if v > best {
                best = v;
                jb = j;
            }
        }
        sphere_seed[p_at(i, jb)] = 1.0;
        let e = norm.unit_dual_realizer(&gradients[jb]);
        for (s, ek) in sphere_seed[y_at(i, jb)..y_at(i, jb) + m].iter_mut().zip(&e) {
            *s = eps * ek;
        }
    }
    seeds.push(sphere_seed.clone());
    // Per-sample better of sphere and escape: the escape atom rides the
    // globally steepest piece with momentum beta * eps at vanishing weight.
    let mut jk = 0;
    let mut steep = f64::NEG_INFINITY;
    for (j, a) in gradients.iter().enumerate() {
        let d = norm.dual_eval(a);
        if d > steep {
            steep = d;
            jk = j;
        }
    }
    let e_star = norm.unit_dual_realizer(&gradients[jk]);
    let mut mixed = vec![0.0; dim];
    for (i, zi) in z.iter().enumerate() {
        let sphere_i = zi
            .iter()
            .zip(gradients)
            .map(|(zv, a)| zv + eps * norm.dual_eval(a))
            .fold(f64::NEG_INFINITY, f64::max);
        let shift_i = zi.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + beta * steep * eps;
        if shift_i > sphere_i {
            mixed[p_at(i, argmax(zi))] = 1.0;
            for (s, ek) in mixed[y_at(i, jk)..y_at(i, jk) + m].iter_mut().zip(&e_star) {
                *s = beta * eps * ek;
            }
        } else {
            for j in 0..k {
                mixed[p_at(i, j)] = sphere_seed[p_at(i, j)];
                for (d, s) in mixed[y_at(i, j)..y_at(i, j) + m]
                    .iter_mut()
                    .zip(&sphere_seed[y_at(i, j)..y_at(i, j) + m])
                {
                    *d = *s;
                }
            }
        }
    }
    seeds.push(mixed);

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
    PrimalSolution { value: best_value, weights, displacements, iterations }
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

/// Convex maximization over per-piece weights and scaled displacements under
/// the single expectile budget. Polyhedral ground norms reduce to one linear
/// program; the euclidean norm runs a projected subgradient with exact
/// feasibility restoration. Support membership uses the perspective
/// convention: an atom with zero weight must carry a recession displacement.
pub fn wce_cvx_pwl_expectile_primal(
    loss: &LossFunction,
    ball: &AmbiguityBall,
) -> Result<WceResult, WorstCaseError> {
    let alpha = match ball.risk {
        RiskSpec::Expectile { alpha } => alpha,
        _ => {
            return Err(WorstCaseError::Unsupported(
                "this engine aggregates transport cost by an expectile".into(),
            ))
        }
    };
    let bp = shape_ratio(alpha)?;
    check_convex_inputs(loss, ball.dim(), ball.radius)?;
    let beta = (1.0 - alpha) / alpha;
    let pieces = pieces_for_convex(loss)?;
    let w = ball.center.weights();
    let pts = ball.center.points();
    let eps = ball.radius;
    let z: Vec<Vec<f64>> = pts
        .iter()
        .map(|c| pieces.iter().map(|p| dot(&p.gradient, c) + p.offset).collect())
        .collect();
    if eps == 0.0 {
        let saa = w
            .iter()
            .zip(&z)
            .map(|(&wi, zi)| wi * zi.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .sum();
        return Ok(WceResult::exact(
            saa,
            Method::ExpectilePrimal,
            ball.center.clone(),
            Diagnostics::default(),
        ));
    }
    let rows = PerspectiveRows::build(&ball.support, pts);
    let gradients: Vec<Vec<f64>> = pieces.iter().map(|p| p.gradient.clone()).collect();
    let sol = if ball.norm == NormKind::L2 {
        let lip = loss.lipschitz(ball.norm);
        primal_penalty_solve(&gradients, &z, w, &rows, ball.norm, lip, bp, eps, beta)
    } else {
        primal_lp_solve(&gradients, &z, w, &rows, ball.norm, bp, eps)?
    };
    let dist = perspective_distribution(pts, w, &sol.weights, &sol.displacements);
    let worst_case = match dist {
        Some(d) => Some(WorstCaseDistribution::exact(d)),
        None if ball.support.is_unconstrained() => {
            // Escaping mass: the asymptotic family is the closed form's.
            wce_closed_form_expectile(loss, &ball.center, eps, alpha, ball.norm)?
                .worst_case
        }
        None => Some(WorstCaseDistribution::unresolved()),
    };
    let attained = worst_case.as_ref().map(|wc| wc.attained).unwrap_or(false);
    Ok(WceResult {
        value: sol.value,
        method: Method::ExpectilePrimal,
        worst_case,
        diagnostics: Diagnostics {
            iterations: sol.iterations,
            duality_gap: None,
            active_branch: if attained { None } else { Some(ActiveBranch::LipschitzShift) },
        },
    })
}

/// Conjugate program rows for one support set, shared by the dual LP.
enum SupportCols {
    Unconstrained,
    /// Per-coordinate split weights with their objective-row coefficients;
    /// infinite ends pin the corresponding weight to zero.
    Box { up_coeff: Vec<Vec<f64>>, lo_coeff: Vec<Vec<f64>> },
    Poly { coeff: Vec<Vec<f64>> },
}

impl SupportCols {
    fn build(support: &SupportSet, pts: &[Vec<f64>]) -> Self {
        match support {
            SupportSet::Unconstrained => SupportCols::Unconstrained,
            SupportSet::Box { lower, upper } => SupportCols::Box {
                up_coeff: pts
                    .iter()
                    .map(|c| {
                        upper
                            .iter()
                            .zip(c)
                            .map(|(&u, &x)| if u.is_finite() { (u - x).max(0.0) } else { -1.0 })
                            .collect()
                    })
                    .collect(),
                lo_coeff: pts
                    .iter()
                    .map(|c| {
                        lower
                            .iter()
                            .zip(c)
                            .map(|(&l, &x)| if l.is_finite() { (x - l).max(0.0) } else { -1.0 })
                            .collect()
                    })
                    .collect(),
            },
            SupportSet::Polyhedron { g, h } => SupportCols::Poly {
                coeff: pts
                    .iter()
                    .map(|c| g.iter().zip(h).map(|(row, &hr)| (hr - dot(row, c)).max(0.0)).collect())
                    .collect(),
            },
        }
    }
}

/// The conjugate minimization as one linear program for polyhedral ground
/// norms. Row family per (sample, piece): the loss-conjugate row bounding
/// `s_i`, a dual-norm epigraph for the radius price, and the shifted
/// dual-norm cap tying the support multipliers to the budget variable.
fn dual_lp(
    pieces: &[crate::domain::AffinePiece],
    z: &[Vec<f64>],
    w: &[f64],
    pts: &[Vec<f64>],
    support: &SupportSet,
    norm: NormKind,
    bp: f64,
    eps: f64,
) -> Result<WceResult, WorstCaseError> {
    let n = w.len();
    let k = pieces.len();
    let m = pieces[0].gradient.len();
    let cols = SupportCols::build(support, pts);
    let mut b = LpBuilder::new();
    let lambda = b.var(0.0, f64::INFINITY, bp * eps);
    let s: Vec<usize> =
        (0..n).map(|i| b.var(f64::NEG_INFINITY, f64::INFINITY, w[i])).collect();
    for i in 0..n {
        for j in 0..k {
            let v: Vec<usize> =
                (0..m).map(|_| b.var(f64::NEG_INFINITY, f64::INFINITY, 0.0)).collect();
            let nu = b.var(0.0, f64::INFINITY, 0.0);
            // Support multipliers entering u_ij + a_j.
            let (wp, wm, mu): (Vec<usize>, Vec<usize>, Vec<usize>) = match &cols {
                SupportCols::Unconstrained => (vec![], vec![], vec![]),
                SupportCols::Box { up_coeff, lo_coeff } => (
                    (0..m)
                        .map(|kk| {
                            let hi = if up_coeff[i][kk] < 0.0 { 0.0 } else { f64::INFINITY };
                            b.var(0.0, hi, 0.0)
                        })
                        .collect(),
                    (0..m)
                        .map(|kk| {
                            let hi = if lo_coeff[i][kk] < 0.0 { 0.0 } else { f64::INFINITY };
                            b.var(0.0, hi, 0.0)
                        })
                        .collect(),
                    vec![],
                ),
                SupportCols::Poly { coeff } => {
                    (vec![], vec![], (0..coeff[i].len()).map(|_| b.var(0.0, f64::INFINITY, 0.0)).collect())
                }
            };
            // Loss-conjugate row: s_i >= z_ij + sigma-terms + eps * nu.
            let mut row = vec![(s[i], 1.0), (nu, -eps)];
            match &cols {
                SupportCols::Unconstrained => {}
                SupportCols::Box { up_coeff, lo_coeff } => {
                    for kk in 0..m {
                        row.push((wp[kk], -up_coeff[i][kk].max(0.0)));
                        row.push((wm[kk], -lo_coeff[i][kk].max(0.0)));
                    }
                }
                SupportCols::Poly { coeff } => {
                    for (r, &cf) in coeff[i].iter().enumerate() {
                        row.push((mu[r], -cf));
                    }
                }
            }
            b.row(Rel::Ge, z[i][j], row);
            // Radius price: nu >= dual norm of v, nu <= lambda.
            match norm {
                NormKind::L1 => {
                    for &vk in &v {
                        b.row(Rel::Ge, 0.0, vec![(nu, 1.0), (vk, -1.0)]);
                        b.row(Rel::Ge, 0.0, vec![(nu, 1.0), (vk, 1.0)]);
                    }
                }
                NormKind::Linf => {
                    let mut sum_row = vec![(nu, 1.0)];
                    for &vk in &v {
                        let d = b.var(0.0, f64::INFINITY, 0.0);
                        b.row(Rel::Ge, 0.0, vec![(d, 1.0), (vk, -1.0)]);
                        b.row(Rel::Ge, 0.0, vec![(d, 1.0), (vk, 1.0)]);
                        sum_row.push((d, -1.0));
                    }
                    b.row(Rel::Ge, 0.0, sum_row);
                }
                NormKind::L2 => unreachable!("euclidean balls do not take the LP path"),
            }
            b.row(Rel::Ge, 0.0, vec![(lambda, 1.0), (nu, -1.0)]);
            // Shifted cap: dual norm of (u + v) <= beta' lambda, where
            // u + a_j is the support multiplier combination.
            let shifted = |kk: usize, sign: f64| -> (Vec<(usize, f64)>, f64) {
                let mut terms = vec![(lambda, bp), (v[kk], -sign)];
                match &cols {
                    SupportCols::Unconstrained => {}
                    SupportCols::Box { .. } => {
                        terms.push((wp[kk], -sign));
                        terms.push((wm[kk], sign));
                    }
                    SupportCols::Poly { .. } => {
                        if let SupportSet::Polyhedron { g, .. } = support {
                            for (r, grow) in g.iter().enumerate() {
                                terms.push((mu[r], -sign * grow[kk]));
                            }
                        }
                    }
                }
                (terms, -sign * pieces[j].gradient[kk])
            };
            match norm {
                NormKind::L1 => {
                    for kk in 0..m {
                        let (terms, rhs) = shifted(kk, 1.0);
                        b.row(Rel::Ge, rhs, terms);
                        let (terms, rhs) = shifted(kk, -1.0);
                        b.row(Rel::Ge, rhs, terms);
                    }
                }
                NormKind::Linf => {
                    let mut cap_row = vec![(lambda, bp)];
                    for kk in 0..m {
                        let q = b.var(0.0, f64::INFINITY, 0.0);
                        let (mut terms, rhs) = shifted(kk, 1.0);
                        terms[0] = (q, 1.0);
                        b.row(Rel::Ge, rhs, terms);
                        let (mut terms, rhs) = shifted(kk, -1.0);
                        terms[0] = (q, 1.0);
                        b.row(Rel::Ge, rhs, terms);
                        cap_row.push((q, -1.0));
                    }
                    b.row(Rel::Ge, 0.0, cap_row);
                }
                NormKind::L2 => unreachable!(),
            }
        }
    }
    let lp = b.build();
    let sol = match crate::solver::lp::lp_solve(&lp)? {
        LpOutcome::Optimal(sol) => sol,
        LpOutcome::Infeasible => {
            return Err(SolverError::Numerical("conjugate program reported infeasible".into()).into())
        }
        LpOutcome::Unbounded => return Err(WorstCaseError::DualUnbounded),
    };
    Ok(WceResult {
        value: sol.value,
        method: Method::ExpectileDual,
        worst_case: None,
        diagnostics: Diagnostics {
            iterations: sol.iterations,
            duality_gap: None,
            active_branch: None,
        },
    })
}

/// Euclidean unconstrained case in closed form. With the budget variable
/// eliminated, the objective is convex piecewise linear in the price with
/// slope `beta' eps (1 - active mass)` which is never negative, so the
/// minimum sits at the smallest feasible price `max_j ||a_j|| / (1 + beta')`.
fn dual_l2_exact(
    pieces: &[crate::domain::AffinePiece],
    z: &[Vec<f64>],
    w: &[f64],
    bp: f64,
    eps: f64,
) -> WceResult {
    let norms: Vec<f64> =
        pieces.iter().map(|p| p.gradient.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let lambda = norms.iter().cloned().fold(0.0f64, f64::max) / (1.0 + bp);
    let mut value = bp * eps * lambda;
    for (zi, &wi) in z.iter().zip(w) {
        let best = zi
            .iter()
            .zip(&norms)
            .map(|(zv, nj)| zv + eps * (nj - bp * lambda).max(0.0))
            .fold(f64::NEG_INFINITY, f64::max);
        value += wi * best;
    }
    WceResult {
        value,
        method: Method::ExpectileDual,
        worst_case: None,
        diagnostics: Diagnostics { iterations: 0, duality_gap: None, active_branch: None },
    }
}

/// Euclidean constrained case: price eliminated as the largest of the two
/// norm caps over all (sample, piece) rows, support multipliers kept
/// nonnegative by projection, minimized by projected subgradient. Every
/// iterate is dual feasible, so the best value is a certified upper bound.
fn dual_l2_subgradient(
    pieces: &[crate::domain::AffinePiece],
    z: &[Vec<f64>],
    w: &[f64],
    pts: &[Vec<f64>],
    support: &SupportSet,
    bp: f64,
    eps: f64,
) -> Result<WceResult, WorstCaseError> {
    let n = w.len();
    let k = pieces.len();
    let m = pieces[0].gradient.len();
    let cols = SupportCols::build(support, pts);
    let (extra_per, poly_rows) = match &cols {
        SupportCols::Unconstrained => (0, 0),
        SupportCols::Box { .. } => (2 * m, 0),
        SupportCols::Poly { coeff } => (coeff[0].len(), coeff[0].len()),
    };
    let blk = m + extra_per;
    let dim = n * k * blk;
    let v_at = |i: usize, j: usize| (i * k + j) * blk;
    let x_at = |i: usize, j: usize| (i * k + j) * blk + m;

    // u_ij + a_j as a function of the extras.
    let shifted = |x: &[f64], i: usize, j: usize, out: &mut [f64]| match &cols {
        SupportCols::Unconstrained => out.fill(0.0),
        SupportCols::Box { .. } => {
            let e = &x[x_at(i, j)..x_at(i, j) + 2 * m];
            for kk in 0..m {
                out[kk] = e[kk] - e[m + kk];
            }
        }
        SupportCols::Poly { .. } => {
            if let SupportSet::Polyhedron { g, .. } = support {
                out.fill(0.0);
                for (r, grow) in g.iter().enumerate() {
                    let mur = x[x_at(i, j) + r];
                    for kk in 0..m {
                        out[kk] += mur * grow[kk];
                    }
                }
            }
        }
    };

    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        g.fill(0.0);
        let mut ua = vec![0.0; m];
        // Price: lambda = max over rows of max(||v||, ||u + v||/bp).
        let mut lambda = 0.0;
        let mut arg = (0, 0, false);
        for i in 0..n {
            for j in 0..k {
                let v = &x[v_at(i, j)..v_at(i, j) + m];
                let nv = v.iter().map(|t| t * t).sum::<f64>().sqrt();
                shifted(x, i, j, &mut ua);
                let nuv = ua
                    .iter()
                    .zip(v)
                    .zip(&pieces[j].gradient)
                    .map(|((u, vk), a)| {
                        let t = u + vk - a;
                        t * t
                    })
                    .sum::<f64>()
                    .sqrt();
                if nv > lambda {
                    lambda = nv;
                    arg = (i, j, false);
                }
                if nuv / bp > lambda {
                    lambda = nuv / bp;
                    arg = (i, j, true);
                }
            }
        }
        let mut value = bp * eps * lambda;
        // Subgradient of the price term.
        {
            let (i, j, cap) = arg;
            let v = &x[v_at(i, j)..v_at(i, j) + m];
            if !cap {
                let nv = v.iter().map(|t| t * t).sum::<f64>().sqrt();
                if nv > 1e-15 {
                    for (gk, vk) in g[v_at(i, j)..v_at(i, j) + m].iter_mut().zip(v) {
                        *gk += bp * eps * vk / nv;
                    }
                }
            } else {
                shifted(x, i, j, &mut ua);
                let diff: Vec<f64> = ua
                    .iter()
                    .zip(v)
                    .zip(&pieces[j].gradient)
                    .map(|((u, vk), a)| u + vk - a)
                    .collect();
                let nuv = diff.iter().map(|t| t * t).sum::<f64>().sqrt();
                if nuv > 1e-15 {
                    let scale = eps / nuv;
                    for (kk, d) in diff.iter().enumerate() {
                        g[v_at(i, j) + kk] += scale * d;
                        match &cols {
                            SupportCols::Unconstrained => {}
                            SupportCols::Box { .. } => {
                                g[x_at(i, j) + kk] += scale * d;
                                g[x_at(i, j) + m + kk] -= scale * d;
                            }
                            SupportCols::Poly { .. } => {
                                if let SupportSet::Polyhedron { g: gm, .. } = support {
                                    for (r, grow) in gm.iter().enumerate() {
                                        g[x_at(i, j) + r] += scale * d * grow[kk];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        // Conjugate rows: per sample the active piece contributes.
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut jb = 0;
            let row_val = |j: usize| -> f64 {
                let v = &x[v_at(i, j)..v_at(i, j) + m];
                let nv = v.iter().map(|t| t * t).sum::<f64>().sqrt();
                let sigma = match &cols {
                    SupportCols::Unconstrained => 0.0,
                    SupportCols::Box { up_coeff, lo_coeff } => {
                        let e = &x[x_at(i, j)..x_at(i, j) + 2 * m];
                        (0..m)
                            .map(|kk| {
                                up_coeff[i][kk].max(0.0) * e[kk]
                                    + lo_coeff[i][kk].max(0.0) * e[m + kk]
                            })
                            .sum()
                    }
                    SupportCols::Poly { coeff } => coeff[i]
                        .iter()
                        .enumerate()
                        .map(|(r, &cf)| cf * x[x_at(i, j) + r])
                        .sum(),
                };
                z[i][j] + sigma + eps * nv
            };
            for j in 0..k {
                let val = row_val(j);
                if val > best {
                    best = val;
                    jb = j;
                }
            }
            value += w[i] * best;
            let v = &x[v_at(i, jb)..v_at(i, jb) + m];
            let nv = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if nv > 1e-15 {
                for (gk, vk) in g[v_at(i, jb)..v_at(i, jb) + m].iter_mut().zip(v) {
                    *gk += w[i] * eps * vk / nv;
                }
            }
            match &cols {
                SupportCols::Unconstrained => {}
                SupportCols::Box { up_coeff, lo_coeff } => {
                    for kk in 0..m {
                        g[x_at(i, jb) + kk] += w[i] * up_coeff[i][kk].max(0.0);
                        g[x_at(i, jb) + m + kk] += w[i] * lo_coeff[i][kk].max(0.0);
                    }
                }
                SupportCols::Poly { coeff } => {
                    for (r, &cf) in coeff[i].iter().enumerate() {
                        g[x_at(i, jb) + r] += w[i] * cf;
                    }
                }
            }
        }
        value
    };

    let project = |x: &mut [f64]| {
        for i in 0..n {
            for j in 0..k {
                match &cols {
                    SupportCols::Unconstrained => {}
                    SupportCols::Box { up_coeff, lo_coeff } => {
                        for kk in 0..m {
                            let up = &mut x[x_at(i, j) + kk];
                            *up = if up_coeff[i][kk] < 0.0 { 0.0 } else { up.max(0.0) };
                            let lo = &mut x[x_at(i, j) + m + kk];
                            *lo = if lo_coeff[i][kk] < 0.0 { 0.0 } else { lo.max(0.0) };
                        }
                    }
                    SupportCols::Poly { .. } => {
                        for r in 0..poly_rows {
                            let mu = &mut x[x_at(i, j) + r];
                            *mu = mu.max(0.0);
                        }
                    }
                }
            }
        }
    };

    let mut x0 = vec![0.0; dim];
    for i in 0..n {
        for j in 0..k {
            for kk in 0..m {
                x0[v_at(i, j) + kk] = pieces[j].gradient[kk] / (1.0 + bp);
            }
        }
    }
    let lip = pieces.iter().map(|p| p.gradient.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0f64, f64::max);
    let report = projected_subgradient(&SubgradientProblem {
        objective: &objective,
        project: &project,
        x0,
        step_scale: 0.2 * (1.0 + lip) * eps.max(1.0),
        max_iters: 4000,
    });
    Ok(WceResult {
        value: report.value,
        method: Method::ExpectileDual,
        worst_case: None,
        diagnostics: Diagnostics {
            iterations: report.iterations,
            duality_gap: None,
            active_branch: None,
        },
    })
}

/// Conjugate side of the expectile budget program. Polyhedral ground norms
/// make it one linear program over any support; the euclidean norm gets an
/// exact price formula on unconstrained supports and a projected subgradient
/// otherwise. The budget-times-radius objective coefficient follows the
/// scaling that agrees with the primal on anchor instances.
pub fn wce_cvx_pwl_expectile_dual(
    loss: &LossFunction,
    ball: &AmbiguityBall,
) -> Result<WceResult, WorstCaseError> {
    let alpha = match ball.risk {
        RiskSpec::Expectile { alpha } => alpha,
        _ => {
            return Err(WorstCaseError::Unsupported(
                "this engine aggregates transport cost by an expectile".into(),
            ))
        }
    };
    let bp = shape_ratio(alpha)?;
    check_convex_inputs(loss, ball.dim(), ball.radius)?;
    let pieces = pieces_for_convex(loss)?;
    let w = ball.center.weights();
    let pts = ball.center.points();
    let z: Vec<Vec<f64>> = pts
        .iter()
        .map(|c| pieces.iter().map(|p| dot(&p.gradient, c) + p.offset).collect())
        .collect();
    match ball.norm {
        NormKind::L1 | NormKind::Linf => {
            dual_lp(&pieces, &z, w, pts, &ball.support, ball.norm, bp, ball.radius)
        }
        NormKind::L2 if ball.support.is_unconstrained() => {
            Ok(dual_l2_exact(&pieces, &z, w, bp, ball.radius))
        }
        NormKind::L2 => {
            dual_l2_subgradient(&pieces, &z, w, pts, &ball.support, bp, ball.radius)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AffinePiece;
    use crate::transport;
    use crate::worst_case::wce_closed_form_cvar;
    use proptest::prelude::*;

    fn abs_loss() -> LossFunction {
        LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![-1.0], offset: 0.0 },
            ],
        }
    }

    fn escape_loss() -> LossFunction {
        LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![0.2], offset: 0.0 },
                AffinePiece { gradient: vec![1.0], offset: -10.0 },
            ],
        }
    }

    fn ball(
        alpha: f64,
        eps: f64,
        norm: NormKind,
        points: Vec<Vec<f64>>,
        support: SupportSet,
    ) -> AmbiguityBall {
        AmbiguityBall::new(
            RiskSpec::Expectile { alpha },
            norm,
            eps,
            DiscreteDistribution::uniform(points).unwrap(),
            support,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_abs_loss_sphere_branch() {
        let samples = DiscreteDistribution::uniform(vec![vec![0.0]]).unwrap();
        let r =
            wce_closed_form_expectile(&abs_loss(), &samples, 0.1, 0.75, NormKind::L2).unwrap();
        // Shift branch beta L eps = 0.1/3 loses to the sphere value 0.1.
        assert!((r.value - 0.1).abs() < 1e-12);
        assert!(r.attained());
        assert_eq!(r.diagnostics.active_branch, Some(ActiveBranch::SphereMax));
    }

    #[test]
    fn closed_form_escape_family_is_feasible_and_monotone() {
        let samples = DiscreteDistribution::uniform(vec![vec![0.0]]).unwrap();
        let r =
            wce_closed_form_expectile(&escape_loss(), &samples, 1.0, 0.75, NormKind::L2).unwrap();
        // Shift branch beta L eps = 1/3 beats the sphere value 0.2.
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
        assert!(!r.attained());
        assert_eq!(
            r.diagnostics.active_branch,
            Some(ActiveBranch::PerSample { lipschitz_count: 1 })
        );
        let family = r.worst_case.unwrap().family.unwrap();
        let loss = escape_loss();
        let mut last = f64::NEG_INFINITY;
        for n in [10, 100, 1000] {
            let member = family.member(n).unwrap();
            let d = transport::distance(
                RiskSpec::Expectile { alpha: 0.75 },
                &samples,
                &member,
                NormKind::L2,
            )
            .unwrap();
            assert!(d <= 1.0 + 1e-6, "member at n={n} has distance {d}");
            let obj: f64 = member
                .points()
                .iter()
                .zip(member.weights())
                .map(|(p, &wt)| wt * loss.evaluate(p))
                .sum();
            assert!(obj >= last - 1e-12);
            last = obj;
        }
        assert!((last - r.value).abs() < 4e-3);
    }

    #[test]
    fn closed_form_matches_cvar_near_level_one() {
        let samples = DiscreteDistribution::uniform(vec![vec![0.0], vec![1.5]]).unwrap();
        let alpha = 1.0 - 1e-9;
        let e = wce_closed_form_expectile(&abs_loss(), &samples, 0.2, alpha, NormKind::L2)
            .unwrap()
            .value;
        let c = wce_closed_form_cvar(&abs_loss(), &samples, 0.2, alpha, NormKind::L2)
            .unwrap()
            .value;
        assert!((e - c).abs() < 1e-9);
    }

    #[test]
    fn primal_zero_radius_is_saa() {
        let b = ball(0.75, 0.0, NormKind::L2, vec![vec![0.4]], SupportSet::Unconstrained);
        let r = wce_cvx_pwl_expectile_primal(&abs_loss(), &b).unwrap();
        assert!((r.value - 0.4).abs() < 1e-12);
        assert!(r.attained());
    }

    #[test]
    fn primal_matches_closed_form_on_unconstrained_support() {
        for (loss, eps, alpha) in [
            (abs_loss(), 0.1, 0.75),
            (escape_loss(), 1.0, 0.75),
            (abs_loss(), 0.5, 0.6),
            (escape_loss(), 0.7, 0.9),
        ] {
            let b = ball(alpha, eps, NormKind::L2, vec![vec![0.0], vec![0.8]], SupportSet::Unconstrained);
            let p = wce_cvx_pwl_expectile_primal(&loss, &b).unwrap();
            let c =
                wce_closed_form_expectile(&loss, &b.center, eps, alpha, NormKind::L2).unwrap();
            assert!(
                (p.value - c.value).abs() <= 1e-9 * (1.0 + c.value.abs()),
                "eps={eps} alpha={alpha}: {} vs {}",
                p.value,
                c.value
            );
        }
    }

    #[test]
    fn primal_affine_loss_gains_radius_times_gradient_norm() {
        let loss = LossFunction::MaxAffine {
            pieces: vec![AffinePiece { gradient: vec![2.0, -1.0], offset: 0.3 }],
        };
        let b = ball(
            0.8,
            0.25,
            NormKind::L2,
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            SupportSet::Unconstrained,
        );
        let r = wce_cvx_pwl_expectile_primal(&loss, &b).unwrap();
        let saa = 0.5 * 0.3 + 0.5 * (2.0 - 1.0 + 0.3);
        let expected = saa + 0.25 * (5.0f64).sqrt();
        assert!((r.value - expected).abs() < 1e-9, "{} vs {expected}", r.value);
    }

    #[test]
    fn primal_box_support_caps_displacements() {
        let b = ball(
            0.75,
            0.5,
            NormKind::L2,
            vec![vec![0.0]],
            SupportSet::Box { lower: vec![-0.3], upper: vec![0.3] },
        );
        let r = wce_cvx_pwl_expectile_primal(&abs_loss(), &b).unwrap();
        assert!((r.value - 0.3).abs() < 1e-3, "got {}", r.value);
        let d = r.worst_case.unwrap().exact.unwrap();
        for p in d.points() {
            assert!(p[0].abs() <= 0.3 + 1e-9);
        }
    }

    #[test]
    fn primal_reported_distribution_is_inside_the_ball() {
        let b = ball(
            0.7,
            0.4,
            NormKind::L2,
            vec![vec![0.0], vec![1.0]],
            SupportSet::Box { lower: vec![-2.0], upper: vec![2.0] },
        );
        let r = wce_cvx_pwl_expectile_primal(&abs_loss(), &b).unwrap();
        if let Some(d) = r.worst_case.as_ref().and_then(|wc| wc.exact.as_ref()) {
            let dist = transport::distance(b.risk, &b.center, d, b.norm).unwrap();
            assert!(dist <= b.radius + 1e-6, "distance {dist}");
        }
    }

    #[test]
    fn dual_lp_matches_closed_form_on_unconstrained_support() {
        let loss = LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0], offset: 0.0 },
                AffinePiece { gradient: vec![-0.4], offset: 0.1 },
            ],
        };
        for (alpha, eps) in [(0.75, 0.1), (0.6, 0.4), (0.95, 0.2)] {
            for norm in [NormKind::L1, NormKind::Linf] {
                let b = ball(alpha, eps, norm, vec![vec![0.0], vec![0.6]], SupportSet::Unconstrained);
                let d = wce_cvx_pwl_expectile_dual(&loss, &b).unwrap();
                let c = wce_closed_form_expectile(&loss, &b.center, eps, alpha, norm).unwrap();
                assert!(
                    (d.value - c.value).abs() <= 1e-7 * (1.0 + c.value.abs()),
                    "alpha={alpha} eps={eps} {norm:?}: dual {} vs closed {}",
                    d.value,
                    c.value
                );
            }
        }
    }

    #[test]
    fn dual_l2_exact_matches_closed_form() {
        let loss = LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0, 0.5], offset: 0.0 },
                AffinePiece { gradient: vec![-0.3, 1.0], offset: 0.2 },
                AffinePiece { gradient: vec![0.1, -0.1], offset: 0.4 },
            ],
        };
        for (alpha, eps) in [(0.75, 0.3), (0.55, 0.1), (0.9, 1.0)] {
            let b = ball(
                alpha,
                eps,
                NormKind::L2,
                vec![vec![0.0, 0.0], vec![0.5, -0.5], vec![1.0, 0.3]],
                SupportSet::Unconstrained,
            );
            let d = wce_cvx_pwl_expectile_dual(&loss, &b).unwrap();
            let c = wce_closed_form_expectile(&loss, &b.center, eps, alpha, NormKind::L2).unwrap();
            assert!(
                (d.value - c.value).abs() <= 1e-9 * (1.0 + c.value.abs()),
                "alpha={alpha} eps={eps}: dual {} vs closed {}",
                d.value,
                c.value
            );
        }
    }

    #[test]
    fn dual_box_linf_matches_primal() {
        let loss = LossFunction::MaxAffine {
            pieces: vec![
                AffinePiece { gradient: vec![1.0, 0.3], offset: 0.0 },
                AffinePiece { gradient: vec![-0.5, 1.0], offset: 0.1 },
            ],
        };
        let b = ball(
            0.75,
            2.0,
            NormKind::Linf,
            vec![vec![0.2, -0.1], vec![-0.4, 0.5]],
            SupportSet::Box { lower: vec![-1.0, -1.0], upper: vec![1.0, 1.0] },
        );
        let p = wce_cvx_pwl_expectile_primal(&loss, &b).unwrap();
        let d = wce_cvx_pwl_expectile_dual(&loss, &b).unwrap();
        assert!(p.value <= d.value + 1e-7, "primal {} above dual {}", p.value, d.value);
        assert!(
            (p.value - d.value).abs() <= 1e-4 * (1.0 + d.value.abs()),
            "primal {} vs dual {}",
            p.value,
            d.value
        );
    }

    #[test]
    fn dual_zero_radius_is_saa() {
        let b = ball(0.75, 0.0, NormKind::L1, vec![vec![0.4]], SupportSet::Unconstrained);
        let r = wce_cvx_pwl_expectile_dual(&abs_loss(), &b).unwrap();
        assert!((r.value - 0.4).abs() < 1e-9, "got {}", r.value);
    }

    #[test]
    fn half_level_is_rejected() {
        let b = AmbiguityBall::new(
            RiskSpec::Expectile { alpha: 0.5 },
            NormKind::L2,
            0.1,
            DiscreteDistribution::uniform(vec![vec![0.0]]).unwrap(),
            SupportSet::Unconstrained,
        )
        .unwrap();
        assert!(wce_cvx_pwl_expectile_primal(&abs_loss(), &b).is_err());
        assert!(wce_cvx_pwl_expectile_dual(&abs_loss(), &b).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        /// The budget set is convex: midpoints of feasible points stay
        /// feasible. Random configurations are made feasible by scaling,
        /// mirroring the engine's restoration.
        #[test]
        fn budget_set_is_convex_under_midpoints(
            y1 in proptest::collection::vec(-1.0f64..1.0, 4),
            y2 in proptest::collection::vec(-1.0f64..1.0, 4),
            q1 in 0.05f64..0.95,
            q2 in 0.05f64..0.95,
            alpha in 0.55f64..0.95,
            eps in 0.05f64..0.5,
        ) {
            let bp = (1.0 - alpha) / (2.0 * alpha - 1.0);
            let burden = |ys: &[f64], ps: &[f64], scale: f64| -> f64 {
                ys.iter().zip(ps).map(|(&y, &p)| {
                    let ny = scale * y.abs();
                    (ny - eps * p).max(0.0) + bp * ny
                }).sum()
            };
            let feasible = |ys: &[f64], ps: &[f64]| -> (Vec<f64>, Vec<f64>) {
                let b0 = burden(ys, ps, 1.0);
                let cap = bp * eps;
                if b0 <= cap {
                    return (ys.to_vec(), ps.to_vec());
                }
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if burden(ys, ps, mid) > cap { hi = mid; } else { lo = mid; }
                }
                (ys.iter().map(|y| y * lo).collect(), ps.to_vec())
            };
            let p1 = vec![q1, 1.0 - q1, 0.6, 0.4];
            let p2 = vec![q2, 1.0 - q2, 0.3, 0.7];
            let (ya, pa) = feasible(&y1, &p1);
            let (yb, pb) = feasible(&y2, &p2);
            let ym: Vec<f64> = ya.iter().zip(&yb).map(|(a, b)| 0.5 * (a + b)).collect();
            let pm: Vec<f64> = pa.iter().zip(&pb).map(|(a, b)| 0.5 * (a + b)).collect();
            // Midpoint burden bounded by the average: convexity of both terms.
            prop_assert!(burden(&ym, &pm, 1.0) <= bp * eps + 1e-9);
        }
    }
}
