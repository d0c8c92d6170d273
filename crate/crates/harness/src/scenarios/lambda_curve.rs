use rayon::prelude::*;
use steinrl_core::estimators::shrinkage_diagnostics_with;
use steinrl_core::gradient::{draw_batch, mean_and_stderr};
use steinrl_core::oracle::oracle_lambda_population;

use super::World;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{Cell, ExperimentReport};

pub const COLUMNS: [&str; 5] = ["m", "replication", "kind", "mean_lambda", "stderr"];

/// Batch-average shrinkage coefficient per replication, then one summary row per `m`.
pub fn run_lambda_curve(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let World { dist, policy } = World::new(config)?;
    let mut report = ExperimentReport::new(config, &COLUMNS);
    for m in config.rollouts() {
        let values: Vec<f64> = match config.lambda_mode.plug_in() {
            Some(mode) => (0..config.replications as u64)
                .into_par_iter()
                .map(|r| {
                    let batch = draw_batch(&policy, &dist, config.n, m, config.seed, r)?;
                    Ok(shrinkage_diagnostics_with(&batch, mode)?.mean_lambda())
                })
                .collect::<Result<Vec<_>>>()?,
            None => vec![oracle_lambda_population(&dist, config.n, m)?; config.replications],
        };
        for (r, v) in values.iter().enumerate() {
            report.push(vec![
                m.into(),
                r.into(),
                "replication".into(),
                (*v).into(),
                Cell::Empty,
            ]);
        }
        let (mean, stderr) = mean_and_stderr(&values);
        report.push(vec![
            m.into(),
            Cell::Empty,
            "summary".into(),
            mean.into(),
            stderr.into(),
        ]);
    }
    Ok(report)
}
