//! Experiment runner for random linear cocycles on `l^p` spaces.

pub mod config;
pub mod oracle;
pub mod output;
pub mod runner;
pub mod scenarios;
pub mod selfcheck;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "MET_WORKERS";

/// Sizes the global worker pool from `MET_WORKERS`, defaulting to the available cores.
pub fn init_workers() -> anyhow::Result<usize> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                anyhow::anyhow!("{WORKERS_ENV} must be a positive integer, got {v:?}")
            })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(n)
}
