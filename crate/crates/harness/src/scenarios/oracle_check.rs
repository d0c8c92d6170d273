use steinrl_core::env::{PromptModel, TabularPolicy};
use steinrl_core::estimators::{Estimator, EstimatorId};
use steinrl_core::gradient::{microbatch_trace_variance, GradientSample, SampleMeta};
use steinrl_core::oracle::{
    enumerate_expected_gradient, enumerated_quadratic, exact_mse_curve, mse_grid_search,
    mse_quadratic_fixed_prompts, mse_quadratic_population, mse_quadratic_population_exact,
    population_outcome_count, MseMode, MseSource,
};
use steinrl_core::rng::{Purpose, StreamKey};

use super::{resolve_estimator, World};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{Cell, ExperimentReport};

pub const COLUMNS: [&str; 6] = [
    "check",
    "subject",
    "value",
    "comparison",
    "tolerance",
    "passed",
];

pub const SUITE_SIZE: u64 = 20;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
pub const QUADRATIC_TOLERANCE: f64 = 1e-12;
pub const VERTEX_TOLERANCE: f64 = 1e-9;
pub const BIAS_FLOOR: f64 = 1e-3;

const GAMMA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// A random world small enough to enumerate.
#[derive(Debug, Clone)]
pub struct SmallEnv {
    pub policy: TabularPolicy<f64>,
    pub prompts: Vec<usize>,
    pub m: usize,
}

impl SmallEnv {
    pub fn models(&self) -> Vec<PromptModel<f64>> {
        self.prompts
            .iter()
            .map(|&p| self.policy.prompt_model(p).expect("prompt in range"))
            .collect()
    }
}

/// `count` worlds with 2 or 3 two-response prompts, 2 or 3 rollouts,
/// logits in [-2, 2] and rewards in [0, 1].
pub fn small_policy_suite(seed: u64, count: u64) -> Vec<SmallEnv> {
    (0..count)
        .map(|index| {
            let mut s = StreamKey::new(seed, Purpose::EnvSynthesis, index).stream();
            let n = 2 + s.below(2);
            let m = 2 + s.below(2);
            let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * s.next_f64();
            let logits: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![draw(-2.0, 2.0), draw(-2.0, 2.0)])
                .collect();
            let rewards: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![draw(0.0, 1.0), draw(0.0, 1.0)])
                .collect();
            SmallEnv {
                policy: TabularPolicy::new(logits, rewards).expect("valid small policy"),
                prompts: (0..n).collect(),
                m,
            }
        })
        .collect()
}

/// Two prompts with far-apart values, where reusing `r_i^j` in the baseline shows.
pub fn bias_witness() -> SmallEnv {
    SmallEnv {
        policy: TabularPolicy::new(
            vec![vec![0.0, 0.0], vec![1.5, -1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .expect("valid witness policy"),
        prompts: vec![0, 1],
        m: 2,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn below(report: &mut ExperimentReport, check: &str, subject: &str, value: f64, tol: f64) {
    report.push(vec![
        check.into(),
        subject.into(),
        value.into(),
        "<".into(),
        tol.into(),
        Cell::Bool(value < tol),
    ]);
}

/// Exact enumeration checks of unbiasedness, the MSE quadratics and their vertices.
///
/// Population checks use the configured distribution, `n` and first `m`, and
/// refuse to run when that enumeration is too large.
pub fn run_oracle_check(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let World { dist, .. } = World::new(config)?;
    let (n, m) = (config.n, config.rollouts()[0]);
    population_outcome_count(&dist, n, m)?;
    let mut report = ExperimentReport::new(config, &COLUMNS);
    let suite = small_policy_suite(config.seed, SUITE_SIZE);

    for &id in &config.estimators {
        let est = resolve_estimator(id, config, &dist, m)?;
        let mut worst = 0.0_f64;
        for env in &suite {
            let exact = env.policy.exact_gradient(&env.prompts)?;
            let res = enumerate_expected_gradient(&env.policy, &env.prompts, env.m, &est)?;
            worst = worst.max(max_abs_diff(&res.expected_gradient, &exact));
        }
        if est.is_unbiased() {
            below(
                &mut report,
                "unbiased_gradient",
                id.as_str(),
                worst,
                GRADIENT_TOLERANCE,
            );
        } else {
            report.push(vec![
                "gradient_bias".into(),
                id.as_str().into(),
                worst.into(),
                "report".into(),
                Cell::Empty,
                Cell::Empty,
            ]);
        }
    }

    let witness = bias_witness();
    let exact = witness.policy.exact_gradient(&witness.prompts)?;
    let js1 = Estimator::Js1 { lambda: 0.5 };
    let res = enumerate_expected_gradient(&witness.policy, &witness.prompts, witness.m, &js1)?;
    let bias = max_abs_diff(&res.expected_gradient, &exact);
    report.push(vec![
        "bias_witness".into(),
        EstimatorId::Js1.as_str().into(),
        bias.into(),
        ">".into(),
        BIAS_FLOOR.into(),
        Cell::Bool(bias > BIAS_FLOOR),
    ]);

    let (mut curve_dev, mut vertex_dev) = (0.0_f64, 0.0_f64);
    for env in &suite {
        let models = env.models();
        let closed = mse_quadratic_fixed_prompts(&models, env.m)?;
        let source = MseSource::Fixed(&models);
        let values = exact_mse_curve(source, env.m, MseMode::NaiveGamma, &GAMMA_GRID)?;
        for (g, v) in GAMMA_GRID.iter().zip(&values) {
            curve_dev = curve_dev.max((closed.eval(*g) - v).abs());
        }
        let fitted = enumerated_quadratic(source, env.m, MseMode::NaiveGamma)?;
        vertex_dev = vertex_dev.max((fitted.argmin() - closed.argmin()).abs());
    }
    below(
        &mut report,
        "relaxed_quadratic",
        "fixed_prompts",
        curve_dev,
        QUADRATIC_TOLERANCE,
    );
    below(
        &mut report,
        "relaxed_vertex",
        "fixed_prompts",
        vertex_dev,
        VERTEX_TOLERANCE,
    );

    let source = MseSource::Population { dist: &dist, n };
    let exact_q = mse_quadratic_population_exact(&dist, n, m)?;
    let closed = mse_quadratic_population(&dist, n, m)?;
    let values = exact_mse_curve(source, m, MseMode::TwoLevelLambda, &GAMMA_GRID)?;
    let stats = dist.population_stats(m)?;
    let excess = (stats.v2 - stats.mean_variance / m as f64) / (n - 1) as f64;
    let (mut curve_dev, mut excess_dev) = (0.0_f64, 0.0_f64);
    for (t, v) in GAMMA_GRID.iter().zip(&values) {
        curve_dev = curve_dev.max((exact_q.eval(*t) - v).abs());
        excess_dev = excess_dev.max((closed.eval(*t) - v - t * t * excess).abs());
    }
    below(
        &mut report,
        "two_level_quadratic",
        "population",
        curve_dev,
        QUADRATIC_TOLERANCE,
    );
    let fitted = enumerated_quadratic(source, m, MseMode::TwoLevelLambda)?;
    let vertex = exact_q.argmin();
    below(
        &mut report,
        "two_level_vertex",
        "population",
        (fitted.argmin() - vertex).abs(),
        VERTEX_TOLERANCE,
    );
    let mut grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    grid.push(vertex);
    let search = mse_grid_search(source, m, &grid, MseMode::TwoLevelLambda)?;
    below(
        &mut report,
        "grid_vertex",
        "population",
        (search.best - vertex).abs(),
        VERTEX_TOLERANCE,
    );
    below(
        &mut report,
        "anchor_noise_excess",
        "population",
        excess_dev,
        QUADRATIC_TOLERANCE,
    );
    report.push(vec![
        "closed_form_vertex_gap".into(),
        "population".into(),
        (closed.argmin() - vertex).abs().into(),
        "report".into(),
        Cell::Empty,
        Cell::Empty,
    ]);

    let hand = [vec![1.0, 0.0], vec![0.0, 1.0]]
        .into_iter()
        .enumerate()
        .map(|(r, v)| {
            GradientSample::new(
                v,
                SampleMeta {
                    seed: config.seed,
                    replication: r as u64,
                },
            )
        })
        .collect::<Vec<_>>();
    let reading = microbatch_trace_variance(&hand)?.trace_var;
    report.push(vec![
        "microbatch_hand_case".into(),
        "two_unit_vectors".into(),
        reading.into(),
        "==".into(),
        0.5.into(),
        Cell::Bool(reading == 0.5),
    ]);
    Ok(report)
}
