//! Risk-aggregated optimal transport between small discrete distributions.
//!
//! For distributions `P1`, `P2` with at most [`MAX_ATOMS`] atoms per side,
//! computes `inf over couplings of rho(||xi_1 - xi_2||)` where `rho` is the
//! expectation (classical 1-Wasserstein), CVaR, an expectile, or the
//! essential supremum (infinity-Wasserstein). These are reference oracles:
//! exact transportation linear programs, not large-scale Sinkhorn-style
//! approximations, which is why the atom count is capped.

use thiserror::Error;

use crate::domain::{Coupling, DiscreteDistribution, DomainError, NormKind, RiskSpec};
use crate::exec;
use crate::solver::{self, lp::LpBuilder, LpOutcome, Rel, SolverError};

/// Hard cap on atoms per side; beyond this the exact LPs get too large to be
/// worth running as oracles.
pub const MAX_ATOMS: usize = 200;

/// Bisection tolerance for the expectile distance.
pub const EXPECTILE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("distribution too large for exact transport: {n1} x {n2} atoms (cap {cap})")]
    TooLarge { n1: usize, n2: usize, cap: usize },
    #[error("dimension mismatch between sides: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn check_pair(
    p1: &DiscreteDistribution,
    p2: &DiscreteDistribution,
) -> Result<(), TransportError> {
    if p1.dim() != p2.dim() {
        return Err(TransportError::DimensionMismatch(p1.dim(), p2.dim()));
    }
    if p1.n_atoms() > MAX_ATOMS || p2.n_atoms() > MAX_ATOMS {
        return Err(TransportError::TooLarge {
            n1: p1.n_atoms(),
            n2: p2.n_atoms(),
            cap: MAX_ATOMS,
        });
    }
    Ok(())
}

fn cost_matrix(p1: &DiscreteDistribution, p2: &DiscreteDistribution, norm: NormKind) -> Vec<Vec<f64>> {
    p1.points()
        .iter()
        .map(|a| p2.points().iter().map(|b| norm.distance(a, b)).collect())
        .collect()
}

/// Minimum of `sum_ij cost_ij pi_ij` over couplings; returns the optimal
/// value and the coupling matrix.
fn transportation_lp(
    weights1: &[f64],
    weights2: &[f64],
    cost: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>), TransportError> {
    let n1 = weights1.len();
    let n2 = weights2.len();
    let mut b = LpBuilder::new();
    let mut vars = vec![vec![0usize; n2]; n1];
    for (i, row) in vars.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = b.var(0.0, f64::INFINITY, cost[i][j]);
        }
    }
    for (i, row) in vars.iter().enumerate() {
        let coeffs: Vec<(usize, f64)> = row.iter().map(|&v| (v, 1.0)).collect();
        b.row(Rel::Eq, weights1[i], coeffs);
    }
    for j in 0..n2 {
        let coeffs: Vec<(usize, f64)> = (0..n1).map(|i| (vars[i][j], 1.0)).collect();
        b.row(Rel::Eq, weights2[j], coeffs);
    }
    let sol = solver::lp_solve(&b.build())?.expect_optimal("transportation")?;
    let mut pi = vec![vec![0.0; n2]; n1];
    for (i, row) in vars.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            pi[i][j] = sol.x[v].max(0.0);
        }
    }
    Ok((sol.value, pi))
}

/// Classical 1-Wasserstein distance (expectation of the cost), with an
/// optimal coupling.
pub fn w1_distance(
    p1: &DiscreteDistribution,
    p2: &DiscreteDistribution,
    norm: NormKind,
) -> Result<(f64, Coupling), TransportError> {
    check_pair(p1, p2)?;
    let cost = cost_matrix(p1, p2, norm);
    let (v, pi) = transportation_lp(p1.weights(), p2.weights(), &cost)?;
    Ok((v.max(0.0), Coupling::new(p1, p2, pi)?))
}

/// If a coupling exists that only uses edges with `cost <= t`, returns one.
fn plan_below(
    weights1: &[f64],
    weights2: &[f64],
    cost: &[Vec<f64>],
    t: f64,
) -> Result<Option<Vec<Vec<f64>>>, TransportError> {
    let n1 = weights1.len();
    let n2 = weights2.len();
    let mut b = LpBuilder::new();
    let mut vars = vec![vec![None; n2]; n1];
    for i in 0..n1 {
        for j in 0..n2 {
            if cost[i][j] <= t + 1e-12 {
                vars[i][j] = Some(b.var(0.0, f64::INFINITY, 0.0));
            }
        }
    }
    for (i, row) in vars.iter().enumerate() {
        let coeffs: Vec<(usize, f64)> = row.iter().flatten().map(|&v| (v, 1.0)).collect();
        if coeffs.is_empty() && weights1[i] > 1e-15 {
            return Ok(None);
        }
        b.row(Rel::Eq, weights1[i], coeffs);
    }
    for j in 0..n2 {
        let coeffs: Vec<(usize, f64)> =
            (0..n1).filter_map(|i| vars[i][j].map(|v| (v, 1.0))).collect();
        if coeffs.is_empty() && weights2[j] > 1e-15 {
            return Ok(None);
        }
        b.row(Rel::Eq, weights2[j], coeffs);
    }
    let sol = match solver::lp_solve(&b.build())? {
        LpOutcome::Infeasible => return Ok(None),
        other => other.expect_optimal("restricted transport")?,
    };
    let mut pi = vec![vec![0.0; n2]; n1];
    for (i, row) in vars.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if let Some(&var) = v.as_ref() {
                pi[i][j] = sol.x[var].max(0.0);
            }
        }
    }
    Ok(Some(pi))
}

/// Infinity-Wasserstein distance: the smallest `t` such that all mass can be
/// moved along edges of cost at most `t`, plus a coupling achieving it.
/// Exact: the optimum is one of the pairwise costs, found by binary search
/// over the sorted distinct costs.
pub fn winf_distance(
    p1: &DiscreteDistribution,
    p2: &DiscreteDistribution,
    norm: NormKind,
) -> Result<(f64, Coupling), TransportError> {
    check_pair(p1, p2)?;
    let cost = cost_matrix(p1, p2, norm);
    let mut levels: Vec<f64> = cost.iter().flatten().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if let Some(pi) = plan_below(p1.weights(), p2.weights(), &cost, levels[0])? {
        return Ok((levels[0], Coupling::new(p1, p2, pi)?));
    }
    // Invariant: infeasible at levels[lo], feasible at levels[hi]. The top
    // level admits the product coupling, so it never fails.
    let mut lo = 0usize;
    let mut hi = levels.len() - 1;
    let mut cached: Option<Vec<Vec<f64>>> = None;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        match plan_below(p1.weights(), p2.weights(), &cost, levels[mid])? {
            Some(pi) => {
                hi = mid;
                cached = Some(pi);
            }
            None => lo = mid,
        }
    }
    let pi = match cached {
        Some(pi) => pi,
        None => plan_below(p1.weights(), p2.weights(), &cost, levels[hi])?.ok_or_else(|| {
            SolverError::Numerical("bottleneck search lost feasibility at the top level".into())
        })?,
    };
    Ok((levels[hi], Coupling::new(p1, p2, pi)?))
}

/// CVaR-aggregated transport distance
/// `inf over couplings of CVaR_alpha(||xi_1 - xi_2||)`, together with an
/// optimal coupling and the minimizing threshold `t*`.
///
/// Exchanging the two infima in the variational form of CVaR gives
/// `min over t of [ t + (1/(1-alpha)) min over couplings E[(cost - t)_+] ]`,
/// and for any coupling the inner minimizer over `t` is an alpha-quantile of
/// its cost distribution, hence one of the pairwise costs. Scanning all
/// distinct costs in increasing order (ties resolved toward the smaller `t`)
/// with one transportation LP each is therefore exact.
pub fn cvar_w_distance(
    p1: &DiscreteDistribution,
    p2: &DiscreteDistribution,
    norm: NormKind,
    alpha: f64,
) -> Result<(f64, Coupling, f64), TransportError> {
    check_pair(p1, p2)?;
    if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
        return Err(TransportError::Domain(DomainError::BadRisk(format!(
            "CVaR level {alpha} outside [0, 1)"
        ))));
    }
    let cost = cost_matrix(p1, p2, norm);
    let mut levels: Vec<f64> = cost.iter().flatten().copied().collect();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    // The candidate problems are independent; the min-reduction below runs
    // over the level order, so ties land on the smaller t deterministically.
    let solved = exec::par_map(levels.clone(), |t: f64| {
        let shifted: Vec<Vec<f64>> =
            cost.iter().map(|row| row.iter().map(|&c| (c - t).max(0.0)).collect()).collect();
        transportation_lp(p1.weights(), p2.weights(), &shifted)
            .map(|(excess, pi)| (t + excess.max(0.0) / (1.0 - alpha), pi))
    });
    let mut best: Option<(f64, Vec<Vec<f64>>, f64)> = None;
    for (res, &t) in solved.into_iter().zip(&levels) {
        let (value, pi) = res?;
        if best.as_ref().is_none_or(|(bv, _, _)| value < *bv) {
            best = Some((value, pi, t));
        }
    }
    let (value, pi, t_star) = best.expect("candidate set contains t = 0");
    Ok((value.max(0.0), Coupling::new(p1, p2, pi)?, t_star))
}

/// Expectile-aggregated transport distance
/// `inf over couplings of e_alpha(||xi_1 - xi_2||)`, `alpha in [1/2, 1)`.
///
/// `e_alpha(X) <= e` holds iff `alpha E[(X-e)_+] - (1-alpha) E[(e-X)_+] <= 0`,
/// and minimizing that left side over couplings is a transportation LP with
/// signed edge costs. The predicate is monotone in `e`, so the distance is
/// found by bisection to [`EXPECTILE_TOL`]. The returned coupling is the plan
/// from the last feasible probe, so its expectile sits within the bisection
/// tolerance of the reported distance.
pub fn expectile_w_distance(
    p1: &DiscreteDistribution,
    p2: &DiscreteDistribution,
    norm: NormKind,
    alpha: f64,
) -> Result<(f64, Coupling), TransportError> {
    check_pair(p1, p2)?;
    if !alpha.is_finite() || !(0.5..1.0).contains(&alpha) {
        return Err(TransportError::Domain(DomainError::BadRisk(format!(
            "expectile level {alpha} outside [1/2, 1)"
        ))));
    }
    let cost = cost_matrix(p1, p2, norm);
    let max_cost = cost.iter().flatten().fold(0.0f64, |m, &c| m.max(c));
    let probe = |e: f64| -> Result<Option<Vec<Vec<f64>>>, TransportError> {
        let signed: Vec<Vec<f64>> = cost
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| alpha * (c - e).max(0.0) - (1.0 - alpha) * (e - c).max(0.0))
                    .collect()
            })
            .collect();
        let (v, pi) = transportation_lp(p1.weights(), p2.weights(), &signed)?;
        Ok((v <= 1e-12).then_some(pi))
    };
    if let Some(pi) = probe(0.0)? {
        return Ok((0.0, Coupling::new(p1, p2, pi)?));
    }
    let mut lo = 0.0;
    let mut hi = max_cost;
    let mut cached: Option<Vec<Vec<f64>>> = None;
    while hi - lo > EXPECTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match probe(mid)? {
            Some(pi) => {
                hi = mid;
                cached = Some(pi);
            }
            None => lo = mid,
        }
    }
    let pi = match cached {
        // At e = max_cost every signed edge cost is nonpositive, so the top
        // probe cannot fail.
        Some(pi) => pi,
        None => probe(hi)?.ok_or_else(|| {
            SolverError::Numerical("expectile search lost feasibility at the top level".into())
        })?,
    };
    Ok((0.5 * (lo + hi), Coupling::new(p1, p2, pi)?))
}

/// Dispatch on the risk descriptor, returning just the distance.
pub fn distance(
    risk: RiskSpec,
    p1: &DiscreteDistribution,
    p2: &DiscreteDistribution,
    norm: NormKind,
) -> Result<f64, TransportError> {
    match risk {
        RiskSpec::Expectation => w1_distance(p1, p2, norm).map(|(v, _)| v),
        RiskSpec::Cvar { alpha } => {
            if alpha == 0.0 {
                w1_distance(p1, p2, norm).map(|(v, _)| v)
            } else {
                cvar_w_distance(p1, p2, norm, alpha).map(|(v, _, _)| v)
            }
        }
        RiskSpec::Expectile { alpha } => {
            if alpha == 0.5 {
                w1_distance(p1, p2, norm).map(|(v, _)| v)
            } else {
                expectile_w_distance(p1, p2, norm, alpha).map(|(v, _)| v)
            }
        }
        RiskSpec::EssSup => winf_distance(p1, p2, norm).map(|(v, _)| v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{self, ScalarDistribution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dirac(v: Vec<f64>) -> DiscreteDistribution {
        DiscreteDistribution::dirac(v).unwrap()
    }

    fn two_point(a: f64, b: f64, wa: f64) -> DiscreteDistribution {
        DiscreteDistribution::new(vec![vec![a], vec![b]], vec![wa, 1.0 - wa]).unwrap()
    }

    fn random_dist(rng: &mut ChaCha8Rng, dim: usize, max_atoms: usize) -> DiscreteDistribution {
        let n = rng.gen_range(1..=max_atoms);
        let points: Vec<Vec<f64>> =
            (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        DiscreteDistribution::new(points, raw.into_iter().map(|w| w / s).collect()).unwrap()
    }

    fn coupling_risk(c: &Coupling, norm: NormKind, risk: RiskSpec) -> f64 {
        let (costs, weights) = c.cost_values(norm);
        if costs.is_empty() {
            return 0.0;
        }
        let total: f64 = weights.iter().sum();
        // Zero-cost pairs are dropped by cost_values; put the missing mass
        // back at zero before evaluating tail functionals.
        let mut values = costs;
        let mut w = weights;
        if total < 1.0 - 1e-12 {
            values.push(0.0);
            w.push(1.0 - total);
        }
        risk::evaluate(risk, &ScalarDistribution::new(values, w).unwrap()).unwrap()
    }

    #[test]
    fn dirac_pair_all_families() {
        let a = dirac(vec![0.0, 0.0]);
        let b = dirac(vec![3.0, 4.0]);
        assert!((w1_distance(&a, &b, NormKind::L2).unwrap().0 - 5.0).abs() < 1e-9);
        assert!((winf_distance(&a, &b, NormKind::L2).unwrap().0 - 5.0).abs() < 1e-9);
        assert!((cvar_w_distance(&a, &b, NormKind::L2, 0.7).unwrap().0 - 5.0).abs() < 1e-9);
        assert!((expectile_w_distance(&a, &b, NormKind::L2, 0.7).unwrap().0 - 5.0).abs() < 1e-7);
        assert!((w1_distance(&a, &b, NormKind::L1).unwrap().0 - 7.0).abs() < 1e-9);
        assert!((w1_distance(&a, &b, NormKind::Linf).unwrap().0 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn w1_known_one_dimensional() {
        // W1 on the line is the area between the CDFs.
        let a = DiscreteDistribution::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let b = DiscreteDistribution::uniform(vec![vec![0.5], vec![2.0]]).unwrap();
        // |F_a - F_b| is 0.5 on [0, 0.5], 0 on [0.5, 1], 0.5 on [1, 2].
        let (v, plan) = w1_distance(&a, &b, NormKind::L1).unwrap();
        assert!((v - 0.75).abs() < 1e-9);
        let mean = coupling_risk(&plan, NormKind::L1, RiskSpec::Expectation);
        assert!((mean - v).abs() < 1e-9);
    }

    #[test]
    fn w1_rare_far_atom() {
        let (v, _) = w1_distance(&dirac(vec![0.0]), &two_point(0.0, 1.0, 0.95), NormKind::L1)
            .unwrap();
        assert!((v - 0.05).abs() < 1e-10);
        let (same, _) =
            w1_distance(&two_point(0.0, 1.0, 0.95), &two_point(0.0, 1.0, 0.95), NormKind::L1)
                .unwrap();
        assert!(same.abs() < 1e-10);
    }

    #[test]
    fn winf_bottleneck() {
        let a = DiscreteDistribution::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let b = DiscreteDistribution::uniform(vec![vec![10.0], vec![11.0]]).unwrap();
        let (v, plan) = winf_distance(&a, &b, NormKind::L1).unwrap();
        assert!((v - 10.0).abs() < 1e-9);
        let attained = coupling_risk(&plan, NormKind::L1, RiskSpec::EssSup);
        assert!(attained <= v + 1e-9);
        // Unbalanced weights force the expensive edge.
        let c = two_point(0.0, 1.0, 0.25);
        let d = two_point(0.0, 1.0, 0.75);
        assert!((winf_distance(&c, &d, NormKind::L1).unwrap().0 - 1.0).abs() < 1e-9);
        assert_eq!(winf_distance(&a, &a, NormKind::L1).unwrap().0, 0.0);
    }

    #[test]
    fn winf_forced_to_far_atom() {
        let (v, _) = winf_distance(&dirac(vec![0.0]), &two_point(0.0, 1.0, 0.95), NormKind::L1)
            .unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        // Shifting both atoms by 0.1 pairs them off at cost 0.1.
        let a = DiscreteDistribution::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let b = DiscreteDistribution::uniform(vec![vec![0.1], vec![0.9]]).unwrap();
        assert!((winf_distance(&a, &b, NormKind::L1).unwrap().0 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn cvar_tail_average_of_forced_coupling() {
        let (v, plan, t_star) =
            cvar_w_distance(&dirac(vec![0.0]), &two_point(0.0, 1.0, 0.95), NormKind::L1, 0.9)
                .unwrap();
        // Forced coupling cost is {0: 0.95, 1: 0.05}; the 0.1 tail averages
        // 0.05 of cost 1 and 0.05 of cost 0.
        assert!((v - 0.5).abs() < 1e-9, "{v}");
        assert_eq!(t_star, 0.0);
        let risk = coupling_risk(&plan, NormKind::L1, RiskSpec::Cvar { alpha: 0.9 });
        assert!((risk - v).abs() < 1e-8);
    }

    #[test]
    fn cvar_zero_level_matches_w1() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x11);
        for _ in 0..10 {
            let a = random_dist(&mut rng, 2, 4);
            let b = random_dist(&mut rng, 2, 4);
            let (x, _) = w1_distance(&a, &b, NormKind::L2).unwrap();
            let (y, _, _) = cvar_w_distance(&a, &b, NormKind::L2, 0.0).unwrap();
            assert!((x - y).abs() <= 1e-7 * (1.0 + x), "{x} vs {y}");
        }
    }

    #[test]
    fn cvar_coupling_attains_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x16);
        for _ in 0..8 {
            let a = random_dist(&mut rng, 2, 4);
            let b = random_dist(&mut rng, 2, 4);
            let (v, plan, _) = cvar_w_distance(&a, &b, NormKind::L1, 0.7).unwrap();
            let risk = coupling_risk(&plan, NormKind::L1, RiskSpec::Cvar { alpha: 0.7 });
            assert!((risk - v).abs() <= 1e-7 * (1.0 + v), "{risk} vs {v}");
        }
    }

    #[test]
    fn expectile_half_matches_w1() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x12);
        for _ in 0..6 {
            let a = random_dist(&mut rng, 1, 4);
            let b = random_dist(&mut rng, 1, 4);
            let (x, _) = w1_distance(&a, &b, NormKind::L1).unwrap();
            let (y, _) = expectile_w_distance(&a, &b, NormKind::L1, 0.5).unwrap();
            assert!((x - y).abs() <= 1e-6 * (1.0 + x), "{x} vs {y}");
        }
    }

    #[test]
    fn expectile_forced_two_point() {
        // Forced coupling cost is {0: 1/2, 1: 1/2}; its 0.75-expectile solves
        // 0.75 * 0.5 * (1 - x) = 0.25 * 0.5 * x, i.e. x = 0.75.
        let (v, plan) =
            expectile_w_distance(&dirac(vec![0.0]), &two_point(0.0, 1.0, 0.5), NormKind::L1, 0.75)
                .unwrap();
        let oracle = risk::expectile(
            &ScalarDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap(),
            0.75,
        )
        .unwrap();
        assert!((oracle - 0.75).abs() < 1e-9);
        assert!((v - oracle).abs() < 1e-7, "{v} vs {oracle}");
        let risk = coupling_risk(&plan, NormKind::L1, RiskSpec::Expectile { alpha: 0.75 });
        assert!(risk <= v + 1e-7);
    }

    #[test]
    fn sandwich_and_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x13);
        for _ in 0..8 {
            let a = random_dist(&mut rng, 2, 4);
            let b = random_dist(&mut rng, 2, 4);
            let (base, _) = w1_distance(&a, &b, NormKind::L1).unwrap();
            let (top, _) = winf_distance(&a, &b, NormKind::L1).unwrap();
            for alpha in [0.1, 0.5, 0.9] {
                let (c, _, _) = cvar_w_distance(&a, &b, NormKind::L1, alpha).unwrap();
                assert!(c >= base - 1e-7, "cvar below w1");
                assert!(c <= base / (1.0 - alpha) + 1e-7, "cvar above envelope");
                assert!(c <= top + 1e-7, "cvar above winf");
            }
            for alpha in [0.6, 0.85] {
                let (e, _) = expectile_w_distance(&a, &b, NormKind::L1, alpha).unwrap();
                assert!(e >= base - 1e-6, "expectile below w1");
                assert!(e <= (alpha / (1.0 - alpha)) * base + 1e-6, "expectile above envelope");
                assert!(e <= top + 1e-6);
            }
        }
    }

    #[test]
    fn monotone_in_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x14);
        let a = random_dist(&mut rng, 2, 5);
        let b = random_dist(&mut rng, 2, 5);
        let mut prev = 0.0;
        for alpha in [0.0, 0.25, 0.5, 0.75, 0.9, 0.99] {
            let (c, _, _) = cvar_w_distance(&a, &b, NormKind::L2, alpha).unwrap();
            assert!(c >= prev - 1e-7, "cvar_w not monotone at {alpha}");
            prev = c;
        }
        let mut prev = 0.0;
        for alpha in [0.5, 0.6, 0.75, 0.9, 0.99] {
            let (e, _) = expectile_w_distance(&a, &b, NormKind::L2, alpha).unwrap();
            assert!(e >= prev - 1e-6, "expectile_w not monotone at {alpha}");
            prev = e;
        }
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x15);
        for _ in 0..6 {
            let a = random_dist(&mut rng, 1, 3);
            let b = random_dist(&mut rng, 1, 3);
            let c = random_dist(&mut rng, 1, 3);
            for (name, risk) in [
                ("w1", RiskSpec::Expectation),
                ("winf", RiskSpec::EssSup),
                ("cvar", RiskSpec::Cvar { alpha: 0.6 }),
                ("expectile", RiskSpec::Expectile { alpha: 0.75 }),
            ] {
                let d = |x: &DiscreteDistribution, y: &DiscreteDistribution| {
                    distance(risk, x, y, NormKind::L1).unwrap()
                };
                let dab = d(&a, &b);
                let dba = d(&b, &a);
                assert!((dab - dba).abs() <= 1e-6 * (1.0 + dab), "{name} symmetry");
                assert!(d(&a, &a) <= 1e-7, "{name} identity");
                let dac = d(&a, &c);
                let dcb = d(&c, &b);
                assert!(dab <= dac + dcb + 1e-6, "{name} triangle: {dab} > {dac} + {dcb}");
            }
        }
    }

    #[test]
    fn mixing_optimal_couplings_can_overshoot() {
        // Four samples 1-d, far apart; alpha = 0.5, radius 1. Two couplings
        // both meeting the budget exactly: one moves every sample by 1, the
        // other moves only the first sample by N(1-alpha) = 2. Their blend
        // has a strictly larger tail average, so the feasible set of
        // couplings at a given CVaR level is not convex.
        let n = 4usize;
        let alpha = 0.5;
        let eps = 1.0;
        let centers: Vec<Vec<f64>> = (0..n).map(|i| vec![10.0 * i as f64]).collect();
        let left = DiscreteDistribution::uniform(centers.clone()).unwrap();

        let moved: Vec<Vec<f64>> = centers.iter().map(|p| vec![p[0] + eps]).collect();
        let right1 = DiscreteDistribution::uniform(moved.clone()).unwrap();
        let mut joint1 = vec![vec![0.0; n]; n];
        for i in 0..n {
            joint1[i][i] = 1.0 / n as f64;
        }
        let pi1 = Coupling::new(&left, &right1, joint1).unwrap();
        let c1 = coupling_risk(&pi1, NormKind::L1, RiskSpec::Cvar { alpha });
        assert!((c1 - eps).abs() < 1e-12);

        let far = n as f64 * (1.0 - alpha) * eps;
        let mut pts2 = vec![vec![centers[0][0] + far]];
        pts2.extend(centers.iter().skip(1).cloned());
        let right2 = DiscreteDistribution::uniform(pts2.clone()).unwrap();
        let mut joint2 = vec![vec![0.0; n]; n];
        for i in 0..n {
            joint2[i][i] = 1.0 / n as f64;
        }
        let pi2 = Coupling::new(&left, &right2, joint2).unwrap();
        let c2 = coupling_risk(&pi2, NormKind::L1, RiskSpec::Cvar { alpha });
        assert!((c2 - eps).abs() < 1e-12);

        // Blend with lambda = 1/2: right side has both atom groups.
        let lam = 0.5;
        let mut pts = moved;
        pts.extend(pts2);
        let mut weights = vec![lam / n as f64; n];
        weights.extend(vec![(1.0 - lam) / n as f64; n]);
        let right = DiscreteDistribution::new(pts, weights).unwrap();
        let mut joint = vec![vec![0.0; 2 * n]; n];
        for i in 0..n {
            joint[i][i] = lam / n as f64;
            joint[i][n + i] = (1.0 - lam) / n as f64;
        }
        let blend = Coupling::new(&left, &right, joint).unwrap();
        let cb = coupling_risk(&blend, NormKind::L1, RiskSpec::Cvar { alpha });
        let expected = eps + eps * lam * (1.0 - 1.0 / (n as f64 * (1.0 - alpha)));
        assert!((cb - expected).abs() < 1e-12, "{cb} vs {expected}");
        assert!(cb > eps + 0.2);
    }

    #[test]
    fn shrinking_perturbation_goes_to_zero() {
        let base = DiscreteDistribution::uniform(vec![vec![0.0, 0.0], vec![1.0, -1.0]]).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..=5 {
            let h = 0.5f64.powi(k);
            let moved = DiscreteDistribution::uniform(vec![
                vec![0.0 + h, 0.0],
                vec![1.0, -1.0 - h],
            ])
            .unwrap();
            let (d, _, _) = cvar_w_distance(&base, &moved, NormKind::L2, 0.8).unwrap();
            assert!(d <= prev + 1e-12);
            assert!(d <= h / (1.0 - 0.8) + 1e-7);
            prev = d;
        }
        assert!(prev <= 0.25);
    }

    #[test]
    fn atom_cap_enforced() {
        let points: Vec<Vec<f64>> = (0..MAX_ATOMS + 1).map(|i| vec![i as f64]).collect();
        let big = DiscreteDistribution::uniform(points).unwrap();
        let small = dirac(vec![0.0]);
        assert!(matches!(
            w1_distance(&big, &small, NormKind::L1),
            Err(TransportError::TooLarge { .. })
        ));
    }
}
