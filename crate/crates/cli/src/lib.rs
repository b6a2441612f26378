//! Command-line front end: TOML job configs, a dataset cache, and the
//! subcommands behind the `datacert` binary.

pub mod cache;
pub mod commands;
pub mod config;

pub use cache::CachedProvider;
pub use commands::{
    read_report, run, sample_count, validate, RunOptions, ValidateOptions, Verdict, EXIT_ERROR,
    EXIT_NOT_CERTIFIED, EXIT_OK,
};
pub use config::JobConfig;

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "DATACERT_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> datacert_core::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        datacert_core::Error::Config(format!("{THREADS_ENV} = `{raw}` is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| datacert_core::Error::Config(format!("{THREADS_ENV}: {e}")))
}
