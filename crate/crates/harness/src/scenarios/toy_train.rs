use rayon::prelude::*;
use steinrl_core::env::{PromptDistribution, TabularPolicy};
use steinrl_core::estimators::{Estimator, EstimatorId};
use steinrl_core::gradient::{draw_batch, gradient_from_advantages};
use steinrl_core::oracle::oracle_lambda_population;

use super::{oracle_lambda, resolve_estimator, World};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::report::{Cell, ExperimentReport};

pub const COLUMNS: [&str; 6] = ["m", "run", "step", "estimator", "objective", "mean_lambda"];

/// Consecutive decreases of the exact objective that abort a run.
pub const DIVERGENCE_STREAK: usize = 50;

struct Trace {
    objective: Vec<f64>,
    lambda: Vec<Option<f64>>,
}

/// Current response laws of `policy` under the prompt weights of `dist`.
fn current_distribution(
    policy: &TabularPolicy<f64>,
    dist: &PromptDistribution<f64>,
) -> Result<PromptDistribution<f64>> {
    let models = (0..dist.len())
        .map(|p| policy.prompt_model(p))
        .collect::<steinrl_core::Result<Vec<_>>>()?;
    Ok(PromptDistribution::new(models, dist.weights().to_vec())?)
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: &ExperimentConfig,
    world: &World,
    id: EstimatorId,
    m: usize,
    run: u64,
    steps: usize,
    learning_rate: f64,
) -> Result<Trace> {
    let mut policy = world.policy.clone();
    let weights = world.dist.weights();
    let mut trace = Trace {
        objective: Vec::with_capacity(steps + 1),
        lambda: Vec::with_capacity(steps + 1),
    };
    let mut streak = 0;
    for step in 0..steps {
        let objective = policy.population_objective(weights)?;
        if let Some(&last) = trace.objective.last() {
            streak = if objective < last { streak + 1 } else { 0 };
            if streak >= DIVERGENCE_STREAK {
                return Err(HarnessError::Diverged(format!(
                    "{id} run {run}: objective fell for {streak} consecutive steps, \
                     reaching {objective} at step {step}"
                )));
            }
        }
        trace.objective.push(objective);
        let estimator = if id == EstimatorId::Js2 && oracle_lambda(config) {
            let now = current_distribution(&policy, &world.dist)?;
            Estimator::Js2Fixed {
                lambda: oracle_lambda_population(&now, config.n, m)?,
            }
        } else {
            resolve_estimator(id, config, &world.dist, m)?
        };
        let replication = run * steps as u64 + step as u64;
        let batch = draw_batch(&policy, &world.dist, config.n, m, config.seed, replication)?;
        let out = estimator.evaluate(&batch, Some(&policy))?;
        trace.lambda.push(match (&out.diagnostics, estimator) {
            (Some(d), _) => Some(d.mean_lambda()),
            (None, Estimator::Js2Fixed { lambda }) => Some(lambda),
            _ => None,
        });
        let gradient = gradient_from_advantages(&policy, &batch, &out.advantages)?;
        policy.ascend(&gradient, learning_rate)?;
    }
    trace.objective.push(policy.population_objective(weights)?);
    trace.lambda.push(None);
    Ok(trace)
}

/// Plain stochastic gradient ascent on the tabular policy, recording the exact
/// expected reward before every step and once after the last.
///
/// `replications` independent runs are made per estimator. Run `r` at step `t`
/// draws batch `r * steps + t`, so estimators share their first batch.
pub fn run_toy_train(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let world = World::new(config)?;
    let steps = config.steps.unwrap_or_default();
    let learning_rate = config.learning_rate.unwrap_or_default();
    let mut report = ExperimentReport::new(config, &COLUMNS);
    for m in config.rollouts() {
        let jobs: Vec<(EstimatorId, u64)> = config
            .estimators
            .iter()
            .flat_map(|&id| (0..config.replications as u64).map(move |r| (id, r)))
            .collect();
        let traces = jobs
            .par_iter()
            .map(|&(id, run)| train(config, &world, id, m, run, steps, learning_rate))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        for ((id, run), trace) in jobs.iter().zip(traces) {
            for (step, (j, l)) in trace.objective.iter().zip(&trace.lambda).enumerate() {
                report.push(vec![
                    m.into(),
                    (*run).into(),
                    step.into(),
                    id.as_str().into(),
                    (*j).into(),
                    l.map_or(Cell::Empty, Cell::Float),
                ]);
            }
        }
    }
    Ok(report)
}
