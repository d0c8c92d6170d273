//! Experiment harness for the `steinrl-core` baseline estimators.
//!
//! A JSON [`config::ExperimentConfig`] names a scenario, a prompt distribution
//! and the estimators to compare. [`scenarios::run`] produces an
//! [`report::ExperimentReport`] whose bytes depend only on the config, not on
//! the number of worker threads.

pub mod config;
mod error;
pub mod report;
pub mod scenarios;

pub use config::{ExperimentConfig, Format, Scenario};
pub use error::{HarnessError, Result};
pub use report::{Cell, ExperimentReport, VERSION};

/// Runs `config` on a dedicated pool of `threads` workers, or the global pool for `None`.
pub fn run_with_threads(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<ExperimentReport> {
    match threads {
        None => scenarios::run(config),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| HarnessError::field("threads", e.to_string()))?;
            pool.install(|| scenarios::run(config))
        }
    }
}
