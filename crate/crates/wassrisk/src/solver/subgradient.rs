//! Projected subgradient descent with a 1/sqrt(k) step schedule and Polyak
//! averaging. Deterministic: no randomness, fixed iteration budget, and the
//! running best is tracked (and asserted) monotone.

/// A minimization problem presented to [`projected_subgradient`].
pub struct SubgradientProblem<'a> {
    /// Evaluates the objective at `x` and writes one subgradient into `g`
    /// (same length as `x`). Returns the objective value.
    pub objective: &'a dyn Fn(&[f64], &mut [f64]) -> f64,
    /// Projects `x` onto the feasible set in place. Identity for
    /// unconstrained problems.
    pub project: &'a dyn Fn(&mut [f64]),
    pub x0: Vec<f64>,
    /// Step scale `s`; the step at iteration k (1-based) is `s / sqrt(k)`
    /// along the normalized subgradient. Choose `s` near the feasible-set
    /// radius.
    pub step_scale: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone)]
pub struct SubgradientReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Value at the Polyak (uniform) average of the iterates; `value`/`x`
    /// already reflect the better of best-iterate and averaged point.
    pub averaged_value: f64,
}

pub fn projected_subgradient(p: &SubgradientProblem<'_>) -> SubgradientReport {
    let n = p.x0.len();
    let mut x = p.x0.clone();
    (p.project)(&mut x);
    let mut g = vec![0.0; n];
    let mut best_x = x.clone();
    let mut best_v = (p.objective)(&x, &mut g);
    let mut avg = x.clone();
    let mut prev_best = best_v;
    for k in 1..=p.max_iters {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-15 {
            break; // stationary for a convex objective
        }
        let step = p.step_scale / (k as f64).sqrt() / norm;
        for j in 0..n {
            x[j] -= step * g[j];
        }
        (p.project)(&mut x);
        let v = (p.objective)(&x, &mut g);
        if v < best_v {
            best_v = v;
            best_x.copy_from_slice(&x);
        }
        // Running best is monotone by construction; keep the assertion as a
        // tripwire against accidental reordering.
        debug_assert!(best_v <= prev_best);
        prev_best = best_v;
        // Uniform Polyak average over iterates 0..=k.
        let w = 1.0 / (k as f64 + 1.0);
        for j in 0..n {
            avg[j] += w * (x[j] - avg[j]);
        }
    }
    (p.project)(&mut avg);
    let mut scratch = vec![0.0; n];
    let avg_v = (p.objective)(&avg, &mut scratch);
    if avg_v < best_v {
        SubgradientReport { x: avg, value: avg_v, iterations: p.max_iters, averaged_value: avg_v }
    } else {
        SubgradientReport { x: best_x, value: best_v, iterations: p.max_iters, averaged_value: avg_v }
    }
}
