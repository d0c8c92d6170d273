//! Exact checks of the unbiasedness, relaxed-MSE and optimal-coefficient results.

mod common;

use common::{max_abs_diff, small_env, small_mixture};
use steinrl_core::env::{sample_responses, PromptModel, TabularPolicy};
use steinrl_core::estimators::{optimal_lambda_known, Estimator, LambdaMode};
use steinrl_core::gradient::{
    estimator_gradient, microbatch_trace_variance, GradientSample, SampleMeta,
};
use steinrl_core::oracle::{
    enumerate_expected_gradient, enumerated_quadratic, exact_baseline_mse, exact_mse_curve,
    mse_grid_search, mse_quadratic_fixed_prompts, mse_quadratic_population,
    mse_quadratic_population_exact, mse_quadratic_two_level_fixed, oracle_lambda_fixed, MseMode,
    MseSource,
};
use steinrl_core::rng::{Purpose, StreamKey};

const SEED: u64 = 20_251_016;

fn unbiased_estimators() -> Vec<Estimator<f64>> {
    vec![
        Estimator::Rloo,
        Estimator::Bloo,
        Estimator::Js2 {
            mode: LambdaMode::Paper,
        },
        Estimator::Js2 {
            mode: LambdaMode::Debiased,
        },
        Estimator::GlobalLoo,
        Estimator::Remax,
        Estimator::None,
    ]
}

#[test]
fn leave_one_out_baselines_are_unbiased() {
    for e in 0..20 {
        let env = small_env(SEED, e);
        let exact = env.policy.exact_gradient(&env.prompts).unwrap();
        for est in unbiased_estimators() {
            let res = enumerate_expected_gradient(&env.policy, &env.prompts, env.m, &est).unwrap();
            let dev = max_abs_diff(&res.expected_gradient, &exact);
            assert!(dev < 1e-10, "env {e} {:?}: deviation {dev}", est.id());
        }
    }
}

#[test]
fn reinforce_identity_to_1e12() {
    for e in 0..20 {
        let env = small_env(SEED + 1, e);
        let exact = env.policy.exact_gradient(&env.prompts).unwrap();
        let res = enumerate_expected_gradient(&env.policy, &env.prompts, env.m, &Estimator::None)
            .unwrap();
        assert!(max_abs_diff(&res.expected_gradient, &exact) < 1e-12);
        let k: u128 = 2;
        assert_eq!(res.outcome_count, k.pow((env.prompts.len() * env.m) as u32));
    }
}

/// Two prompts whose value functions sit far apart: the naive shrinkage
/// baseline reuses r_i^j and shifts the expected gradient.
fn asymmetric_policy() -> TabularPolicy<f64> {
    TabularPolicy::new(
        vec![vec![0.0, 0.0], vec![1.5, -1.0]],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    )
    .unwrap()
}

#[test]
fn naive_shrinkage_is_biased() {
    let policy = asymmetric_policy();
    let exact = policy.exact_gradient(&[0, 1]).unwrap();
    let res =
        enumerate_expected_gradient(&policy, &[0, 1], 2, &Estimator::Js1 { lambda: 0.5 }).unwrap();
    let bias = max_abs_diff(&res.expected_gradient, &exact);
    assert!(bias > 1e-3, "bias {bias}");

    let unbiased = enumerate_expected_gradient(
        &policy,
        &[0, 1],
        2,
        &Estimator::Js2 {
            mode: LambdaMode::Paper,
        },
    )
    .unwrap();
    assert!(max_abs_diff(&unbiased.expected_gradient, &exact) < 1e-10);
}

#[test]
fn relaxed_mse_is_the_gamma_quadratic() {
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    for e in 0..20 {
        let env = small_env(SEED + 2, e);
        let models = env.models();
        let n = models.len();
        let closed = mse_quadratic_fixed_prompts(&models, env.m).unwrap();
        let enumerated =
            exact_mse_curve(MseSource::Fixed(&models), env.m, MseMode::NaiveGamma, &grid).unwrap();
        for (g, v) in grid.iter().zip(&enumerated) {
            assert!((closed.eval(*g) - v).abs() < 1e-12, "env {e} gamma {g}");
        }
        let fitted =
            enumerated_quadratic(MseSource::Fixed(&models), env.m, MseMode::NaiveGamma).unwrap();
        let stats = steinrl_core::env::true_value_stats(&models, env.m.max(2)).unwrap();
        let v = models.iter().map(PromptModel::variance).sum::<f64>() / (n * env.m) as f64;
        let lambda_star = v / (stats.s + v);
        let vertex_as_lambda = fitted.argmin() * n as f64 / (n - 1) as f64;
        assert!((vertex_as_lambda - lambda_star).abs() < 1e-9, "env {e}");
        let opt = optimal_lambda_known(v, stats.s, n).unwrap();
        assert!((fitted.argmin() - opt.gamma).abs() < 1e-9);
    }
}

#[test]
fn two_level_mse_vertex_beats_both_endpoints() {
    for e in 0..20 {
        let env = small_env(SEED + 3, e);
        let models = env.models();
        let q = mse_quadratic_two_level_fixed(&models, env.m).unwrap();
        let lambda = oracle_lambda_fixed(&models, env.m).unwrap();
        let at = |est: Estimator<f64>| exact_baseline_mse(&models, env.m, &est, None).unwrap();
        let js = at(Estimator::Js2Fixed { lambda });
        let rloo = at(Estimator::Rloo);
        let bloo = at(Estimator::Bloo);
        assert!((q.eval(lambda) - js).abs() < 1e-12);
        assert!((q.eval(0.0) - rloo).abs() < 1e-12);
        assert!((q.eval(1.0) - bloo).abs() < 1e-12);
        assert!(js <= rloo.min(bloo) + 1e-15, "env {e}");
    }
}

#[test]
fn population_mse_is_the_lambda_quadratic() {
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    for e in 0..10 {
        let dist = small_mixture(SEED, e);
        for (n, m) in [(2, 2), (3, 2), (2, 3), (3, 3)] {
            let closed = mse_quadratic_population_exact(&dist, n, m).unwrap();
            let source = MseSource::Population { dist: &dist, n };
            let values = exact_mse_curve(source, m, MseMode::TwoLevelLambda, &grid).unwrap();
            for (t, v) in grid.iter().zip(&values) {
                assert!(
                    (closed.eval(*t) - v).abs() < 1e-12,
                    "dist {e} n {n} m {m} t {t}"
                );
            }
            let fitted = enumerated_quadratic(source, m, MseMode::TwoLevelLambda).unwrap();
            assert!((fitted.argmin() - closed.argmin()).abs() < 1e-9);
        }
    }
}

#[test]
fn closed_form_quadratic_overstates_anchor_noise() {
    let grid = [0.0, 0.3, 0.6, 1.0];
    for e in 0..10 {
        let dist = small_mixture(SEED + 1, e);
        for (n, m) in [(2, 2), (3, 2), (2, 3)] {
            let closed = mse_quadratic_population(&dist, n, m).unwrap();
            let stats = dist.population_stats(m).unwrap();
            let excess = (stats.v2 - stats.mean_variance / m as f64) / (n - 1) as f64;
            let source = MseSource::Population { dist: &dist, n };
            let values = exact_mse_curve(source, m, MseMode::TwoLevelLambda, &grid).unwrap();
            for (t, v) in grid.iter().zip(&values) {
                assert!((closed.eval(*t) - v - t * t * excess).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn grid_search_lands_on_closed_form() {
    let dist = small_mixture(SEED, 99);
    let (n, m) = (3, 2);
    let lambda = mse_quadratic_population_exact(&dist, n, m)
        .unwrap()
        .argmin();
    let grid = [0.0, lambda, 1.0];
    let res = mse_grid_search(
        MseSource::Population { dist: &dist, n },
        m,
        &grid,
        MseMode::TwoLevelLambda,
    )
    .unwrap();
    assert_eq!(res.best, lambda);
}

#[test]
fn exact_gradient_matches_finite_differences() {
    for e in 0..5 {
        let env = small_env(SEED + 4, e);
        let exact = env.policy.exact_gradient(&env.prompts).unwrap();
        let theta = env.policy.params();
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut probe = env.policy.clone();
            let mut up = theta.clone();
            up[k] += h;
            probe.set_params(&up).unwrap();
            let j_up = probe.objective(&env.prompts).unwrap();
            let mut down = theta.clone();
            down[k] -= h;
            probe.set_params(&down).unwrap();
            let j_down = probe.objective(&env.prompts).unwrap();
            let fd = (j_up - j_down) / (2.0 * h);
            assert!((fd - exact[k]).abs() < 1e-6, "env {e} coord {k}");
        }
    }
}

#[test]
fn microbatch_estimator_is_unbiased() {
    let env = small_env(SEED + 5, 0);
    let estimator = Estimator::Rloo;
    let per_sample = enumerate_expected_gradient(&env.policy, &env.prompts, env.m, &estimator)
        .unwrap()
        .gradient_trace_variance;
    let micro = 4;
    let redraws = 100_000u64;
    let mut total = 0.0;
    for r in 0..redraws {
        let samples: Vec<GradientSample<f64>> = (0..micro)
            .map(|k| {
                let rep = r * micro as u64 + k as u64;
                let key = StreamKey::new(SEED, Purpose::Microbatch, rep);
                let batch = sample_responses(&env.policy, &env.prompts, env.m, key).unwrap();
                GradientSample::new(
                    estimator_gradient(&env.policy, &batch, &estimator).unwrap(),
                    SampleMeta {
                        seed: SEED,
                        replication: rep,
                    },
                )
            })
            .collect();
        total += microbatch_trace_variance(&samples).unwrap().trace_var;
    }
    let mean = total / redraws as f64;
    let target = per_sample / micro as f64;
    assert!(
        ((mean - target) / target).abs() < 0.02,
        "{mean} vs {target}"
    );
}
