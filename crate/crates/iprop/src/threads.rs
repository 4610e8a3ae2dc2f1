//! Row-parallel execution capped by the `IPROP_THREADS` env var.
//!
//! Every parallel region in the crate reduces each output element in fixed
//! index order, so results are bit-identical for any thread count.

use rayon::ThreadPool;

pub const THREADS_ENV: &str = "IPROP_THREADS";

/// Build a pool honoring `IPROP_THREADS` (0 or unset = rayon's default).
pub fn pool() -> ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction cannot fail with these settings")
}
