//! Experiment runner around `barrier-stab-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod schema;

pub use error::CliError;

pub const THREADS_ENV: &str = "BARRIER_STAB_THREADS";

/// Splits `--key.path=value` overrides from the arguments clap should see.
/// `--out` and `--seed` stay with clap.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let split = arg
            .strip_prefix("--")
            .and_then(|a| a.split_once('='))
            .filter(|(k, _)| !matches!(*k, "out" | "seed"));
        match split {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

/// Rayon pool sized by `BARRIER_STAB_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{raw}`"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}
