//! Independent-run batches: parameter sweeps and randomized checks.
//!
//! With the `parallel` feature (default) batches run on rayon's pool;
//! without it they run on the calling thread. Results come back in index
//! order either way, so artifacts do not depend on scheduling.

/// Evaluates `f(0..n)` sequentially.
pub fn map_sequential<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Evaluates `f(0..n)` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_parallel<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Evaluates `f(0..n)` with the backend selected at compile time.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(n, f)
    }
}

/// Runs `op` with batch parallelism capped at `threads` workers.
///
/// `None` uses the global pool. Without the `parallel` feature the cap is
/// irrelevant and `op` runs directly.
pub fn with_thread_cap<R, F>(threads: Option<usize>, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
            {
                return pool.install(op);
            }
        }
        op()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        op()
    }
}
