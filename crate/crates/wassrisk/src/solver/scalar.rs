//! Scalar search kernels: bisection on a monotone predicate and grid search
//! with golden-section polish.

/// Smallest `x` in `[lo, hi]` with `pred(x)` true, assuming `pred` is
/// monotone (false below some threshold, true above). Requires
/// `pred(hi) == true`; if `pred(lo)` already holds, returns `lo`. The
/// returned point is within `tol` of the true threshold and satisfies the
/// predicate.
pub fn bisect(pred: impl Fn(f64) -> bool, lo: f64, hi: f64, tol: f64) -> f64 {
    debug_assert!(lo <= hi);
    if pred(lo) {
        return lo;
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // interval at floating-point resolution
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimizes `f` on `[lo, hi]`: evaluates `n + 1` uniform grid points, then
/// polishes the winning cell with golden-section search. Returns the best
/// point and value seen. Exact for the grid resolution even when `f` is not
/// unimodal; the polish sharpens the local minimum around the grid winner.
pub fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    debug_assert!(lo <= hi && n >= 1);
    if hi - lo <= 0.0 {
        return (lo, f(lo));
    }
    let h = (hi - lo) / n as f64;
    let mut best_x = lo;
    let mut best_v = f64::INFINITY;
    for k in 0..=n {
        let x = if k == n { hi } else { lo + k as f64 * h };
        let v = f(x);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    // Golden-section on the two cells flanking the winner.
    let mut a = (best_x - h).max(lo);
    let mut b = (best_x + h).min(hi);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..80 {
        if b - a < 1e-12 * (1.0 + a.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
        let (cx, cv) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if cv < best_v {
            best_v = cv;
            best_x = cx;
        }
    }
    (best_x, best_v)
}
