//! Thread pool sizing for data-parallel work.

/// Environment variable capping data-loading and rendering parallelism.
pub const NUM_WORKERS_ENV: &str = "LDN_NUM_WORKERS";

/// Worker count: `LDN_NUM_WORKERS` if set to a positive integer, otherwise
/// the available parallelism.
pub fn num_workers() -> usize {
    std::env::var(NUM_WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` inside a pool of [`num_workers`] threads.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(num_workers())
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
