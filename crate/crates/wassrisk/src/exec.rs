//! Execution policy for data-parallel inner loops.
//!
//! With the `parallel` feature enabled (default) independent subproblems run
//! on the rayon thread pool; without it, or after [`force_sequential`], they
//! run on the calling thread. Results are collected in input order and all
//! floating-point reductions happen sequentially afterwards, so the numerical
//! output is identical under every mode and thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Disable (or re-enable) the rayon path at runtime. Used by the benchmark
/// suite to compare both execution modes within one process.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// True when calls to [`par_map`] will use the rayon pool.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Order-preserving map over `items`, parallel when enabled.
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            return items.into_par_iter().map(f).collect();
        }
    }
    items.into_iter().map(f).collect()
}

/// Order-preserving map over `0..n`, parallel when enabled.
pub fn par_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    par_map((0..n).collect(), f)
}
