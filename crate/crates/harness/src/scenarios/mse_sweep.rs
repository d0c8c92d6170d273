use rayon::prelude::*;
use steinrl_core::env::{RewardBatch, TabularPolicy};
use steinrl_core::estimators::Estimator;
use steinrl_core::gradient::{draw_batch, mean_and_stderr};
use steinrl_core::numeric::pairwise_sum_by;
use steinrl_core::oracle::{exact_population_mse, population_outcome_count};
use steinrl_core::Error;

use super::{resolve_all, World};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{Cell, ExperimentReport};

pub const COLUMNS: [&str; 7] = [
    "m",
    "estimator",
    "mse",
    "mse_stderr",
    "exact_mse",
    "exact_flag",
    "replications",
];

/// `(1/nm) sum_ij (b_i^j - mu(x_i))^2` for one batch.
fn batch_mse(
    estimator: &Estimator<f64>,
    policy: &TabularPolicy<f64>,
    batch: &RewardBatch<f64>,
) -> Result<f64> {
    let baseline = estimator
        .baseline(batch, Some(policy))?
        .ok_or_else(|| Error::UnsupportedEstimator(estimator.id().to_string()))?;
    let (n, m) = (batch.n(), batch.m());
    let means: Vec<f64> = batch
        .prompt_ids()
        .iter()
        .map(|&p| policy.expected_reward(p))
        .collect();
    Ok(pairwise_sum_by(n * m, |k| {
        let d = baseline.get(k / m, k % m) - means[k / m];
        d * d
    }) / (n * m) as f64)
}

/// Baseline MSE against the true prompt values for every estimator and rollout count.
///
/// Every estimator sees the same batches. Exact values are added when the
/// population enumeration is small enough.
pub fn run_mse_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let World { dist, policy } = World::new(config)?;
    let mut report = ExperimentReport::new(config, &COLUMNS);
    let (n, reps) = (config.n, config.replications);
    for m in config.rollouts() {
        let estimators = resolve_all(config, &dist, m)?;
        let per_rep: Vec<Vec<f64>> = (0..reps as u64)
            .into_par_iter()
            .map(|r| {
                let batch = draw_batch(&policy, &dist, n, m, config.seed, r)?;
                estimators
                    .iter()
                    .map(|e| batch_mse(e, &policy, &batch))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let tractable = population_outcome_count(&dist, n, m).is_ok();
        for (k, est) in estimators.iter().enumerate() {
            let column: Vec<f64> = per_rep.iter().map(|row| row[k]).collect();
            let (mse, stderr) = mean_and_stderr(&column);
            let exact = if tractable {
                Some(exact_population_mse(&dist, n, m, est, Some(&policy))?)
            } else {
                None
            };
            report.push(vec![
                m.into(),
                est.id().as_str().into(),
                mse.into(),
                stderr.into(),
                exact.into(),
                Cell::Bool(tractable),
                reps.into(),
            ]);
        }
    }
    Ok(report)
}
