//! Scalar risk measures on finitely supported distributions: value at risk,
//! conditional value at risk, expectiles and the essential supremum.
//!
//! Conventions used throughout:
//! - `value_at_risk(d, 0)` is the minimum of the support.
//! - CVaR is the tail average `(1/(1-alpha)) * integral of VaR_u du over
//!   [alpha, 1]`; a debug assertion cross-checks it against the infimum form
//!   `inf_t { t + E[(X-t)_+]/(1-alpha) }` on every call.
//! - The expectile at level `alpha` is the unique root of
//!   `alpha E[(X-x)_+] = (1-alpha) E[(x-X)_+]`, found by bisection on the
//!   support range down to width 1e-12.

use crate::domain::{DomainError, RiskSpec, WEIGHT_TOL};

/// A distribution on the real line with finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDistribution {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl ScalarDistribution {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self, DomainError> {
        if values.is_empty() || values.len() != weights.len() {
            return Err(DomainError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite("value"));
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
        if (sum - 1.0).abs() > WEIGHT_TOL * values.len() as f64 {
            return Err(DomainError::WeightSum(sum));
        }
        let weights = weights.into_iter().map(|w| w.max(0.0)).collect();
        Ok(ScalarDistribution { values, weights })
    }

    pub fn degenerate(v: f64) -> Self {
        ScalarDistribution { values: vec![v], weights: vec![1.0] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(self.weights.iter()).map(|(v, w)| v * w).sum()
    }

    pub fn min(&self) -> f64 {
        self.values
            .iter()
            .zip(self.weights.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&v, _)| v)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .zip(self.weights.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Atoms sorted by value (zero-weight atoms dropped, equal values merged).
    fn sorted_atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = self
            .values
            .iter()
            .zip(self.weights.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&v, &w)| (v, w))
            .collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => merged.push((v, w)),
            }
        }
        merged
    }
}

/// Left quantile `inf { x : F(x) >= alpha }`; at `alpha = 0` the minimum of
/// the support.
pub fn value_at_risk(d: &ScalarDistribution, alpha: f64) -> Result<f64, DomainError> {
    if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
        return Err(DomainError::BadRisk(format!("VaR level {alpha} outside [0, 1)")));
    }
    let atoms = d.sorted_atoms();
    if alpha == 0.0 {
        return Ok(atoms[0].0);
    }
    let mut cum = 0.0;
    for &(v, w) in &atoms {
        cum += w;
        if cum >= alpha - 1e-12 {
            return Ok(v);
        }
    }
    Ok(atoms.last().unwrap().0)
}

/// Tail average `(1/(1-alpha)) int_alpha^1 VaR_u du`.
pub fn cvar(d: &ScalarDistribution, alpha: f64) -> Result<f64, DomainError> {
    if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
        return Err(DomainError::BadRisk(format!("CVaR level {alpha} outside [0, 1)")));
    }
    let atoms = d.sorted_atoms();
    let mut acc = 0.0;
    let mut cum = 0.0f64;
    for &(v, w) in &atoms {
        let lo = cum.max(alpha);
        cum += w;
        let hi = cum.min(1.0);
        if hi > lo {
            acc += (hi - lo) * v;
        }
    }
    let tail = acc / (1.0 - alpha);
    debug_assert!(
        (tail - cvar_infimum_form(&atoms, alpha)).abs() <= 1e-9 * (1.0 + tail.abs()),
        "tail-average and infimum forms disagree: {} vs {}",
        tail,
        cvar_infimum_form(&atoms, alpha)
    );
    Ok(tail)
}

/// `inf_t { t + E[(X-t)_+] / (1-alpha) }`; the infimum over all t is attained
/// at an atom of the distribution.
fn cvar_infimum_form(atoms: &[(f64, f64)], alpha: f64) -> f64 {
    let mut best = f64::INFINITY;
    for &(t, _) in atoms {
        let mut excess = 0.0;
        for &(v, w) in atoms {
            excess += w * (v - t).max(0.0);
        }
        best = best.min(t + excess / (1.0 - alpha));
    }
    best
}

/// Unique root of `alpha E[(X-x)_+] = (1-alpha) E[(x-X)_+]` for
/// `alpha in [1/2, 1)`. At `alpha = 1/2` this is the mean.
pub fn expectile(d: &ScalarDistribution, alpha: f64) -> Result<f64, DomainError> {
    if !alpha.is_finite() || !(0.5..1.0).contains(&alpha) {
        return Err(DomainError::BadRisk(format!("expectile level {alpha} outside [1/2, 1)")));
    }
    if alpha == 0.5 {
        return Ok(d.mean());
    }
    let atoms = d.sorted_atoms();
    let (mut lo, mut hi) = (atoms[0].0, atoms.last().unwrap().0);
    if hi - lo <= 1e-12 {
        return Ok(lo);
    }
    // g is strictly decreasing in x, positive at the minimum, negative at the
    // maximum (for nondegenerate support).
    let g = |x: f64| {
        let mut above = 0.0;
        let mut below = 0.0;
        for &(v, w) in &atoms {
            above += w * (v - x).max(0.0);
            below += w * (x - v).max(0.0);
        }
        alpha * above - (1.0 - alpha) * below
    };
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest point of the support carrying positive mass.
pub fn ess_sup(d: &ScalarDistribution) -> f64 {
    d.max()
}

/// Apply a risk descriptor to a scalar distribution.
pub fn evaluate(risk: RiskSpec, d: &ScalarDistribution) -> Result<f64, DomainError> {
    match risk {
        RiskSpec::Expectation => Ok(d.mean()),
        RiskSpec::Cvar { alpha } => cvar(d, alpha),
        RiskSpec::Expectile { alpha } => expectile(d, alpha),
        RiskSpec::EssSup => Ok(ess_sup(d)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_atom() -> ScalarDistribution {
        ScalarDistribution::new(vec![0.0, 10.0], vec![0.9, 0.1]).unwrap()
    }

    #[test]
    fn var_basics() {
        let d = two_atom();
        assert_eq!(value_at_risk(&d, 0.0).unwrap(), 0.0);
        assert_eq!(value_at_risk(&d, 0.5).unwrap(), 0.0);
        assert_eq!(value_at_risk(&d, 0.9).unwrap(), 0.0);
        assert_eq!(value_at_risk(&d, 0.95).unwrap(), 10.0);
        assert!(value_at_risk(&d, 1.0).is_err());
    }

    #[test]
    fn cvar_tail_averages() {
        let d = two_atom();
        assert!((cvar(&d, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((cvar(&d, 0.9).unwrap() - 10.0).abs() < 1e-12);
        assert!((cvar(&d, 0.8).unwrap() - 5.0).abs() < 1e-12);
        // Splitting an atom across the alpha boundary.
        assert!((cvar(&d, 0.95).unwrap() - 10.0).abs() < 1e-12);
        let d3 = ScalarDistribution::new(vec![1.0, 2.0, 3.0], vec![0.25, 0.5, 0.25]).unwrap();
        // Tail beyond 0.5: half of atom 2 (mass 0.25) and atom 3 (0.25).
        assert!((cvar(&d3, 0.5).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn cvar_zero_is_mean() {
        let d = ScalarDistribution::new(vec![-1.0, 4.0, 2.0], vec![0.2, 0.3, 0.5]).unwrap();
        assert!((cvar(&d, 0.0).unwrap() - d.mean()).abs() < 1e-12);
    }

    #[test]
    fn grid_search_recovers_cvar_infimum_form() {
        // The variational form min_t { t + E[(X-t)_+]/(1-alpha) } is convex
        // in t, so grid search with golden polish lands on the tail average.
        use crate::solver::scalar::grid_min;
        let d = ScalarDistribution::new(vec![0.0, 1.0, 3.0, 7.0], vec![0.4, 0.3, 0.2, 0.1])
            .unwrap();
        for alpha in [0.0, 0.3, 0.6, 0.85] {
            let direct = cvar(&d, alpha).unwrap();
            let obj = |t: f64| {
                let excess: f64 = d
                    .values()
                    .iter()
                    .zip(d.weights())
                    .map(|(&v, &w)| w * (v - t).max(0.0))
                    .sum();
                t + excess / (1.0 - alpha)
            };
            let (_, v) = grid_min(obj, 0.0, 7.0, 101);
            assert!((v - direct).abs() <= 1e-9 * (1.0 + direct), "alpha {alpha}: {v} vs {direct}");
        }
    }

    #[test]
    fn expectile_half_is_mean_exactly() {
        let d = ScalarDistribution::new(vec![-1.0, 4.0, 2.0], vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(expectile(&d, 0.5).unwrap(), d.mean());
    }

    #[test]
    fn expectile_two_point() {
        // alpha (1-x) * 1/2 = (1-alpha) x * 1/2 at alpha = 0.75 gives x = 0.75.
        let d = ScalarDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let e = expectile(&d, 0.75).unwrap();
        assert!((e - 0.75).abs() < 1e-9, "got {e}");
        assert!(expectile(&d, 0.3).is_err());
    }

    #[test]
    fn degenerate_distribution_all_measures_agree() {
        let d = ScalarDistribution::degenerate(3.5);
        assert_eq!(value_at_risk(&d, 0.7).unwrap(), 3.5);
        assert!((cvar(&d, 0.7).unwrap() - 3.5).abs() < 1e-12);
        assert!((expectile(&d, 0.7).unwrap() - 3.5).abs() < 1e-12);
        assert_eq!(ess_sup(&d), 3.5);
    }

    #[test]
    fn limits_approach_ess_sup() {
        let d = ScalarDistribution::new(vec![-2.0, 0.5, 3.0], vec![0.5, 0.3, 0.2]).unwrap();
        let top = ess_sup(&d);
        let mut prev_c = f64::NEG_INFINITY;
        let mut prev_e = f64::NEG_INFINITY;
        for k in 2..=8 {
            let alpha = 1.0 - 10f64.powi(-k);
            let c = cvar(&d, alpha).unwrap();
            let e = expectile(&d, alpha).unwrap();
            assert!(c >= prev_c - 1e-12, "cvar not monotone in alpha");
            assert!(e >= prev_e - 1e-12, "expectile not monotone in alpha");
            assert!(c <= top + 1e-12);
            assert!(e <= top + 1e-12);
            prev_c = c;
            prev_e = e;
        }
        assert!((prev_c - top).abs() < 1e-6, "cvar limit {prev_c} vs {top}");
        assert!((prev_e - top).abs() < 1e-4, "expectile limit {prev_e} vs {top}");
    }

    #[test]
    fn coherence_axioms_on_random_instances() {
        // Monotonicity, translation, positive homogeneity, subadditivity and
        // the mean envelope, exercised on atoms over a shared probability
        // space (componentwise constructions keep comonotone alignment valid
        // for these checks).
        let mut rng = ChaCha8Rng::seed_from_u64(0x9ec4);
        for _ in 0..200 {
            let n = rng.gen_range(1..8);
            let weights = {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / s).collect::<Vec<f64>>()
            };
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let alpha_c = rng.gen_range(0.0..0.99);
            let alpha_e = rng.gen_range(0.5..0.99);
            let c = rng.gen_range(0.0..3.0);
            let t = rng.gen_range(0.0..3.0);

            for (name, rho) in [
                ("cvar", Box::new(move |v: &ScalarDistribution| cvar(v, alpha_c).unwrap())
                    as Box<dyn Fn(&ScalarDistribution) -> f64>),
                ("expectile", Box::new(move |v: &ScalarDistribution| expectile(v, alpha_e).unwrap())),
            ] {
                let dx = ScalarDistribution::new(xs.clone(), weights.clone()).unwrap();
                let dy = ScalarDistribution::new(ys.clone(), weights.clone()).unwrap();
                let rx = rho(&dx);

                // Monotone: X <= Y pointwise implies rho(X) <= rho(Y).
                let dom: Vec<f64> = xs.iter().zip(ys.iter()).map(|(a, b)| a.max(*b)).collect();
                let ddom = ScalarDistribution::new(dom, weights.clone()).unwrap();
                assert!(rx <= rho(&ddom) + 1e-9, "{name} monotonicity");

                // Translation by a constant.
                let shifted: Vec<f64> = xs.iter().map(|v| v + c).collect();
                let dsh = ScalarDistribution::new(shifted, weights.clone()).unwrap();
                assert!((rho(&dsh) - (rx + c)).abs() < 1e-7, "{name} translation");

                // Positive homogeneity.
                let scaled: Vec<f64> = xs.iter().map(|v| v * t).collect();
                let dsc = ScalarDistribution::new(scaled, weights.clone()).unwrap();
                assert!((rho(&dsc) - t * rx).abs() < 1e-6, "{name} homogeneity");

                // Subadditivity on the shared space.
                let sum: Vec<f64> = xs.iter().zip(ys.iter()).map(|(a, b)| a + b).collect();
                let dsum = ScalarDistribution::new(sum, weights.clone()).unwrap();
                assert!(rho(&dsum) <= rx + rho(&dy) + 1e-7, "{name} subadditivity");

                // Mean envelope for nonnegative losses.
                let pos: Vec<f64> = xs.iter().map(|v| v.abs()).collect();
                let dpos = ScalarDistribution::new(pos, weights.clone()).unwrap();
                let env = match name {
                    "cvar" => 1.0 / (1.0 - alpha_c),
                    _ => alpha_e / (1.0 - alpha_e),
                };
                let rp = rho(&dpos);
                assert!(rp >= dpos.mean() - 1e-9, "{name} above mean");
                assert!(rp <= env * dpos.mean() + 1e-9, "{name} envelope bound");
            }
        }
    }

    proptest! {
        #[test]
        fn cvar_between_var_and_max(
            vals in prop::collection::vec(-50.0f64..50.0, 1..9),
            alpha in 0.0f64..0.999,
        ) {
            let n = vals.len();
            let d = ScalarDistribution::new(vals, vec![1.0 / n as f64; n]).unwrap();
            let v = value_at_risk(&d, alpha).unwrap();
            let c = cvar(&d, alpha).unwrap();
            prop_assert!(c >= v - 1e-9);
            prop_assert!(c <= d.max() + 1e-9);
            prop_assert!(c >= d.mean() - 1e-9);
        }

        #[test]
        fn expectile_root_property(
            vals in prop::collection::vec(-50.0f64..50.0, 1..9),
            alpha in 0.5f64..0.999,
        ) {
            let n = vals.len();
            let d = ScalarDistribution::new(vals.clone(), vec![1.0 / n as f64; n]).unwrap();
            let e = expectile(&d, alpha).unwrap();
            let above: f64 = vals.iter().map(|v| (v - e).max(0.0)).sum::<f64>() / n as f64;
            let below: f64 = vals.iter().map(|v| (e - v).max(0.0)).sum::<f64>() / n as f64;
            let resid = alpha * above - (1.0 - alpha) * below;
            // Residual scales with the spread; the root is pinned to 1e-12.
            let scale = 1.0 + vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(resid.abs() <= 1e-9 * scale, "residual {resid}");
        }
    }
}
