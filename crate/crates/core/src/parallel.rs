//! Worker-thread configuration.

use crate::error::{Error, Result};

/// Caps worker threads; `0` selects single-threaded deterministic mode.
pub const THREADS_ENV: &str = "WDSRKIT_THREADS";

/// Thread cap requested through [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

/// Sizes the global pool. Returns the number of worker threads in use.
/// Only the first call in a process takes effect.
pub fn init_thread_pool(threads: Option<usize>) -> usize {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    if let Err(e) = builder.build_global() {
        log::debug!("thread pool already initialized: {e}");
    }
    rayon::current_num_threads()
}
