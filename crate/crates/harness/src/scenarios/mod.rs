//! Scenario runners. Each takes a validated config and returns a report.

mod grad_variance;
mod lambda_curve;
mod mse_sweep;
mod oracle_check;
mod toy_train;

pub use grad_variance::run_grad_variance;
pub use lambda_curve::run_lambda_curve;
pub use mse_sweep::run_mse_sweep;
pub use oracle_check::{bias_witness, run_oracle_check, small_policy_suite, SmallEnv};
pub use toy_train::run_toy_train;

use steinrl_core::env::{PromptDistribution, TabularPolicy};
use steinrl_core::estimators::{Estimator, EstimatorId, LambdaMode, DEFAULT_GRPO_EPSILON};
use steinrl_core::oracle::oracle_lambda_population;

use crate::config::{ExperimentConfig, LambdaSetting, Scenario, DEFAULT_JS1_LAMBDA};
use crate::error::Result;
use crate::report::ExperimentReport;

/// Runs whichever scenario the config names.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    match config.scenario {
        Scenario::MseSweep => run_mse_sweep(config),
        Scenario::GradVariance => run_grad_variance(config),
        Scenario::LambdaCurve => run_lambda_curve(config),
        Scenario::OracleCheck => run_oracle_check(config),
        Scenario::ToyTrain => run_toy_train(config),
    }
}

/// The simulated world: prompt law and a policy whose response laws reproduce it.
pub(crate) struct World {
    pub dist: PromptDistribution<f64>,
    pub policy: TabularPolicy<f64>,
}

impl World {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dist = config.distribution()?;
        let policy = TabularPolicy::from_distribution(&dist)?;
        Ok(Self { dist, policy })
    }
}

/// Turns an identifier into a parameterized estimator for `n` prompts and `m` rollouts.
pub(crate) fn resolve_estimator(
    id: EstimatorId,
    config: &ExperimentConfig,
    dist: &PromptDistribution<f64>,
    m: usize,
) -> Result<Estimator<f64>> {
    Ok(match id {
        EstimatorId::PromptMean => Estimator::PromptMean,
        EstimatorId::Rloo => Estimator::Rloo,
        EstimatorId::Bloo => Estimator::Bloo,
        EstimatorId::GlobalMean => Estimator::GlobalMean,
        EstimatorId::GlobalLoo => Estimator::GlobalLoo,
        EstimatorId::Js1 => Estimator::Js1 {
            lambda: config.js1_lambda.unwrap_or(DEFAULT_JS1_LAMBDA),
        },
        EstimatorId::Js2 => match config.lambda_mode.plug_in() {
            Some(mode) => Estimator::Js2 { mode },
            None => Estimator::Js2Fixed {
                lambda: oracle_lambda_population(dist, config.n, m)?,
            },
        },
        EstimatorId::Js2Debiased => Estimator::Js2 {
            mode: LambdaMode::Debiased,
        },
        EstimatorId::Grpo => Estimator::Grpo {
            epsilon: config.grpo_epsilon.unwrap_or(DEFAULT_GRPO_EPSILON),
        },
        EstimatorId::GrpoNoStd => Estimator::GrpoNoStd,
        EstimatorId::Remax => Estimator::Remax,
        EstimatorId::None => Estimator::None,
    })
}

pub(crate) fn resolve_all(
    config: &ExperimentConfig,
    dist: &PromptDistribution<f64>,
    m: usize,
) -> Result<Vec<Estimator<f64>>> {
    config
        .estimators
        .iter()
        .map(|&id| resolve_estimator(id, config, dist, m))
        .collect()
}

/// Whether the config asks `js2` for the exact optimal coefficient.
pub(crate) fn oracle_lambda(config: &ExperimentConfig) -> bool {
    config.lambda_mode == LambdaSetting::Oracle
}
