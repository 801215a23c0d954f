//! Worker-pool sizing from the `VISERN_THREADS` environment variable.

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "VISERN_THREADS";

/// Parses a thread cap; `0` or an empty value means "let rayon decide".
pub fn parse_threads(value: Option<&str>) -> Result<usize> {
    match value.map(str::trim) {
        None | Some("") => Ok(0),
        Some(v) => v.parse().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a non-negative integer, got `{v}`"
            ))
        }),
    }
}

pub fn threads_from_env() -> Result<usize> {
    parse_threads(std::env::var(THREADS_ENV).ok().as_deref())
}

/// A pool with at most `threads` workers (`0` = rayon default).
pub fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}
