use steinrl_core::gradient::{
    mean_and_stderr, microbatch_trace_variance, paired_gradient_samples, trace_moments,
    GradientSample,
};

use super::{resolve_all, World};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::ExperimentReport;

pub const COLUMNS: [&str; 8] = [
    "m",
    "estimator",
    "trace_var_mc",
    "trace_var_mc_stderr",
    "trace_var_microbatch",
    "trace_var_microbatch_stderr",
    "microbatches",
    "n_samples",
];

/// Micro-batch meter over consecutive groups of `size` samples.
///
/// Each group estimates the variance of its average; multiplying by `size`
/// puts the reading on the same single-batch scale as the Monte Carlo meter.
fn microbatch_reading(samples: &[GradientSample<f64>], size: usize) -> Result<Option<(f64, f64)>> {
    let readings = samples
        .chunks_exact(size)
        .map(|group| Ok(microbatch_trace_variance(group)?.trace_var * size as f64))
        .collect::<Result<Vec<f64>>>()?;
    if readings.is_empty() {
        return Ok(None);
    }
    Ok(Some(mean_and_stderr(&readings)))
}

/// Trace variance of the single-batch policy gradient, measured two ways.
pub fn run_grad_variance(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let World { dist, policy } = World::new(config)?;
    let mut report = ExperimentReport::new(config, &COLUMNS);
    let size = config.microbatches();
    for m in config.rollouts() {
        let estimators = resolve_all(config, &dist, m)?;
        let samples = paired_gradient_samples(
            &policy,
            &dist,
            config.n,
            m,
            &estimators,
            config.replications,
            config.seed,
        )?;
        for (est, column) in estimators.iter().zip(&samples) {
            let (_, mc) = trace_moments(column)?;
            let micro = microbatch_reading(column, size)?;
            report.push(vec![
                m.into(),
                est.id().as_str().into(),
                mc.trace_var.into(),
                mc.std_error.into(),
                micro.map(|r| r.0).into(),
                micro.map(|r| r.1).into(),
                size.into(),
                mc.n_samples.into(),
            ]);
        }
    }
    Ok(report)
}
