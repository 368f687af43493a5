//! Euclidean projections shared by the subgradient-based engines.

/// Clamp `x` into `[lo, hi]` componentwise. Infinite ends are ignored.
pub fn project_box(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for j in 0..x.len() {
        if lo[j].is_finite() && x[j] < lo[j] {
            x[j] = lo[j];
        }
        if hi[j].is_finite() && x[j] > hi[j] {
            x[j] = hi[j];
        }
    }
}

/// Project onto the probability simplex { x >= 0, sum x = 1 } by sorting
/// (Held/Michelot). O(n log n), deterministic.
pub fn project_simplex(x: &mut [f64]) {
    let n = x.len();
    debug_assert!(n > 0);
    let mut u: Vec<f64> = x.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut rho = 0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            rho = k;
            theta = t;
        }
    }
    let _ = rho;
    for v in x.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
    // Exact renormalization guards the invariant against rounding.
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        for v in x.iter_mut() {
            *v /= s;
        }
    } else {
        x.fill(1.0 / n as f64);
    }
}

/// Project onto a single halfspace `a'x <= b` (no-op when satisfied).
pub fn project_halfspace(x: &mut [f64], a: &[f64], b: f64) {
    let ax: f64 = a.iter().zip(x.iter()).map(|(ai, xi)| ai * xi).sum();
    if ax <= b {
        return;
    }
    let nn: f64 = a.iter().map(|v| v * v).sum();
    if nn <= 0.0 {
        return;
    }
    let t = (ax - b) / nn;
    for j in 0..x.len() {
        x[j] -= t * a[j];
    }
}

/// Approximate projection onto the polyhedron `Gx <= h` by cyclic halfspace
/// projections (POCS). Converges for consistent systems; iteration budget is
/// fixed so the routine is deterministic. Adequate as a subgradient-step
/// projector; not used where exact projections matter.
pub fn project_polyhedron(x: &mut [f64], g: &[Vec<f64>], h: &[f64], sweeps: usize) {
    for _ in 0..sweeps {
        let mut moved = 0.0f64;
        for (row, &rhs) in g.iter().zip(h.iter()) {
            let before: f64 = row.iter().zip(x.iter()).map(|(a, v)| a * v).sum();
            project_halfspace(x, row, rhs);
            let after: f64 = row.iter().zip(x.iter()).map(|(a, v)| a * v).sum();
            moved = moved.max((before - after).abs());
        }
        if moved < 1e-13 {
            break;
        }
    }
}
