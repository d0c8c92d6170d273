//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use steinrl::report::Cell;
use steinrl::scenarios::{self, bias_witness, small_policy_suite};
use steinrl::{ExperimentConfig, ExperimentReport};
use steinrl_core::env::{
    sample_responses, true_value_stats, PromptDistribution, PromptModel, TabularPolicy,
};
use steinrl_core::estimators::{
    optimal_lambda_known, shrinkage_diagnostics_with, Estimator, LambdaMode,
};
use steinrl_core::gradient::{
    estimator_gradient, microbatch_trace_variance, GradientSample, SampleMeta,
};
use steinrl_core::oracle::{
    enumerate_expected_gradient, enumerated_quadratic, exact_mse_curve,
    mse_quadratic_fixed_prompts, mse_quadratic_population, mse_quadratic_population_exact, MseMode,
    MseSource,
};
use steinrl_core::rng::{Purpose, Stream, StreamKey};

const SEED: u64 = 20_251_016;
const GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn criterion(
    label: &str,
    title: &str,
    limit: Option<Duration>,
    check: impl FnOnce() -> Outcome,
) -> bool {
    let start = Instant::now();
    let out = check();
    let elapsed = start.elapsed();
    let passed = out.passed && limit.is_none_or(|l| elapsed <= l);
    let budget = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
    println!(
        "criterion {label:>2} {title}: {} | {} | {:.2}s{budget}",
        if passed { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
    );
    passed
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn uniform(s: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * s.next_f64()
}

/// Mixture of two or three two-point reward laws with random weights.
fn small_mixture(index: u64) -> PromptDistribution<f64> {
    let mut s = StreamKey::new(SEED, Purpose::EnvSynthesis, 5000 + index).stream();
    let count = 2 + s.below(2);
    let models = (0..count)
        .map(|k| {
            let p = uniform(&mut s, 0.05, 0.95);
            let lo = uniform(&mut s, 0.0, 0.5);
            let hi = uniform(&mut s, 0.5, 1.0);
            PromptModel::new(k, vec![lo, hi], vec![1.0 - p, p]).unwrap()
        })
        .collect();
    let raw: Vec<f64> = (0..count).map(|_| uniform(&mut s, 0.2, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    weights[count - 1] = 1.0 - weights[..count - 1].iter().sum::<f64>();
    PromptDistribution::new(models, weights).unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn config(text: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(text).unwrap();
    c.inline_distribution(&configs_dir()).unwrap();
    c
}

fn float(report: &ExperimentReport, row: usize, column: &str) -> f64 {
    report.rows()[row][report.column(column).unwrap()]
        .as_f64()
        .unwrap()
}

fn row_of(report: &ExperimentReport, m: usize, estimator: &str) -> usize {
    let (mk, ek) = (
        report.column("m").unwrap(),
        report.column("estimator").unwrap(),
    );
    report
        .rows()
        .iter()
        .position(|r| r[mk] == Cell::Int(m as u64) && r[ek] == Cell::from(estimator))
        .unwrap()
}

fn unbiasedness() -> Outcome {
    let estimators = [
        Estimator::Rloo,
        Estimator::Bloo,
        Estimator::Js2 {
            mode: LambdaMode::Paper,
        },
        Estimator::GlobalLoo,
    ];
    let suite = small_policy_suite(SEED, 20);
    let mut worst = 0.0_f64;
    for env in &suite {
        let exact = env.policy.exact_gradient(&env.prompts).unwrap();
        for est in &estimators {
            let res = enumerate_expected_gradient(&env.policy, &env.prompts, env.m, est).unwrap();
            worst = worst.max(max_abs_diff(&res.expected_gradient, &exact));
        }
    }
    outcome(
        worst < 1e-10,
        format!(
            "{} envs, max |E[g] - grad J| = {worst:.3e} (< 1e-10)",
            suite.len()
        ),
    )
}

fn js1_bias() -> Outcome {
    let env = bias_witness();
    let exact = env.policy.exact_gradient(&env.prompts).unwrap();
    let res = enumerate_expected_gradient(
        &env.policy,
        &env.prompts,
        env.m,
        &Estimator::Js1 { lambda: 0.5 },
    )
    .unwrap();
    let bias = max_abs_diff(&res.expected_gradient, &exact);
    outcome(
        bias > 1e-3,
        format!("|E[g] - grad J|_inf = {bias:.6} (> 1e-3)"),
    )
}

fn relaxed_quadratic() -> Outcome {
    let (mut curve, mut vertex) = (0.0_f64, 0.0_f64);
    let suite = small_policy_suite(SEED + 1, 20);
    for env in &suite {
        let models = env.models();
        let n = models.len();
        let closed = mse_quadratic_fixed_prompts(&models, env.m).unwrap();
        let source = MseSource::Fixed(&models);
        let values = exact_mse_curve(source, env.m, MseMode::NaiveGamma, &GRID).unwrap();
        for (g, v) in GRID.iter().zip(&values) {
            curve = curve.max((closed.eval(*g) - v).abs());
        }
        let stats = true_value_stats(&models, env.m).unwrap();
        let target = optimal_lambda_known(stats.v, stats.s, n).unwrap().gamma;
        let fitted = enumerated_quadratic(source, env.m, MseMode::NaiveGamma).unwrap();
        vertex = vertex.max((fitted.argmin() - target).abs());
    }
    outcome(
        curve < 1e-12 && vertex < 1e-9,
        format!(
            "{} envs, curve dev {curve:.3e} (< 1e-12), vertex dev {vertex:.3e} (< 1e-9)",
            suite.len()
        ),
    )
}

const POPULATION_CASES: [(usize, usize); 4] = [(2, 2), (3, 2), (2, 3), (3, 3)];

/// Closed form and vertex, checked verbatim.
fn closed_form_verbatim() -> Outcome {
    let (mut curve, mut vertex) = (0.0_f64, 0.0_f64);
    for e in 0..10 {
        let dist = small_mixture(e);
        for (n, m) in POPULATION_CASES {
            let closed = mse_quadratic_population(&dist, n, m).unwrap();
            let source = MseSource::Population { dist: &dist, n };
            let values = exact_mse_curve(source, m, MseMode::TwoLevelLambda, &GRID).unwrap();
            for (t, v) in GRID.iter().zip(&values) {
                curve = curve.max((closed.eval(*t) - v).abs());
            }
            let stats = dist.population_stats(m).unwrap();
            let target = (n - 1) as f64 / n as f64 * stats.v2 / (stats.s2 + stats.v2);
            let fitted = enumerated_quadratic(source, m, MseMode::TwoLevelLambda).unwrap();
            vertex = vertex.max((fitted.argmin() - target).abs());
        }
    }
    outcome(
        curve < 1e-12 && vertex < 1e-9,
        format!(
            "10 mixtures x 4 (n, m), curve dev {curve:.3e} (< 1e-12), \
             vertex dev {vertex:.3e} (< 1e-9); closed form overstates anchor noise"
        ),
    )
}

/// Same enumeration against the exact two-level quadratic.
fn two_level_exact() -> Outcome {
    let (mut curve, mut vertex) = (0.0_f64, 0.0_f64);
    for e in 0..10 {
        let dist = small_mixture(e);
        for (n, m) in POPULATION_CASES {
            let closed = mse_quadratic_population_exact(&dist, n, m).unwrap();
            let source = MseSource::Population { dist: &dist, n };
            let values = exact_mse_curve(source, m, MseMode::TwoLevelLambda, &GRID).unwrap();
            for (t, v) in GRID.iter().zip(&values) {
                curve = curve.max((closed.eval(*t) - v).abs());
            }
            let fitted = enumerated_quadratic(source, m, MseMode::TwoLevelLambda).unwrap();
            vertex = vertex.max((fitted.argmin() - closed.argmin()).abs());
        }
    }
    outcome(
        curve < 1e-12 && vertex < 1e-9,
        format!(
            "exact form (1-l)^2 v2 + l^2 (n s2 + E[sigma^2]/m)/(n-1): \
             curve dev {curve:.3e} (< 1e-12), vertex dev {vertex:.3e} (< 1e-9)"
        ),
    )
}

fn microbatch_meter() -> Outcome {
    let hand: Vec<GradientSample<f64>> = [vec![1.0, 0.0], vec![0.0, 1.0]]
        .into_iter()
        .enumerate()
        .map(|(r, v)| {
            GradientSample::new(
                v,
                SampleMeta {
                    seed: 0,
                    replication: r as u64,
                },
            )
        })
        .collect();
    let hand_value = microbatch_trace_variance(&hand).unwrap().trace_var;

    let env = &small_policy_suite(SEED + 2, 1)[0];
    let estimator = Estimator::Rloo;
    let per_batch = enumerate_expected_gradient(&env.policy, &env.prompts, env.m, &estimator)
        .unwrap()
        .gradient_trace_variance;
    let micro = 4u64;
    let redraws = 100_000u64;
    let mut total = 0.0;
    for r in 0..redraws {
        let samples: Vec<GradientSample<f64>> = (0..micro)
            .map(|k| {
                let rep = r * micro + k;
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
    let target = per_batch / micro as f64;
    let rel = ((mean - target) / target).abs();
    outcome(
        hand_value == 0.5 && rel < 0.02,
        format!(
            "hand case {hand_value} (== 0.5); MC mean {mean:.6e} vs Tr Cov {target:.6e}, \
             rel err {:.3}% (< 2%)",
            rel * 100.0
        ),
    )
}

fn mse_gap() -> Outcome {
    let report = scenarios::run(&config(
        r#"{"seed": 20251016, "n": 64, "m": [2, 4, 8], "estimators": ["rloo", "js2"],
            "distribution": "heterogeneous.json", "replications": 10000,
            "lambda_mode": "paper", "scenario": "mse_sweep"}"#,
    ))
    .unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    let mut last_gap = f64::INFINITY;
    for m in [2, 4, 8] {
        let (r, j) = (row_of(&report, m, "rloo"), row_of(&report, m, "js2"));
        let (rloo, js2) = (float(&report, r, "mse"), float(&report, j, "mse"));
        let se = float(&report, r, "mse_stderr").hypot(float(&report, j, "mse_stderr"));
        let margin = (rloo - js2) / se;
        let gap = (rloo - js2) / rloo;
        passed &= margin > 3.0 && gap < last_gap;
        last_gap = gap;
        parts.push(format!(
            "m={m}: js2 {js2:.5} vs rloo {rloo:.5}, {margin:.0} se, gap {:.1}%",
            gap * 100.0
        ));
    }
    outcome(passed, parts.join("; "))
}

fn lambda_trend() -> Outcome {
    let report = scenarios::run(&config(
        r#"{"seed": 20251016, "n": 16, "m": [2, 4, 8, 16], "estimators": ["js2"],
            "distribution": "heterogeneous.json", "replications": 1000,
            "lambda_mode": "paper", "scenario": "lambda_curve"}"#,
    ))
    .unwrap();
    let kind = report.column("kind").unwrap();
    let means: Vec<f64> = report
        .rows()
        .iter()
        .filter(|r| r[kind] == Cell::from("summary"))
        .map(|r| r[report.column("mean_lambda").unwrap()].as_f64().unwrap())
        .collect();
    let decreasing = means.len() == 4 && means.windows(2).all(|w| w[1] < w[0]);
    outcome(
        decreasing,
        format!(
            "mean lambda_hat at m=2,4,8,16: {}",
            means
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(" > ")
        ),
    )
}

fn gradient_ordering() -> Outcome {
    let report = scenarios::run(&config(
        r#"{"seed": 20251016, "n": 64, "m": 2, "estimators": ["none", "rloo", "js2"],
            "distribution": "heterogeneous.json", "replications": 100000,
            "lambda_mode": "paper", "scenario": "grad_variance"}"#,
    ))
    .unwrap();
    let get = |e: &str| {
        let r = row_of(&report, 2, e);
        (
            float(&report, r, "trace_var_mc"),
            float(&report, r, "trace_var_mc_stderr"),
        )
    };
    let (none, rloo, js2) = (get("none"), get("rloo"), get("js2"));
    let none_margin = (none.0 - rloo.0) / none.1.hypot(rloo.1);
    let js2_margin = (rloo.0 - js2.0) / rloo.1.hypot(js2.1);
    outcome(
        none_margin > 3.0 && js2_margin > 3.0,
        format!(
            "Tr Var none {:.4e}, rloo {:.4e}, js2 {:.4e}; none-rloo {none_margin:.0} se, \
             rloo-js2 {js2_margin:.0} se",
            none.0, rloo.0, js2.0
        ),
    )
}

const DETERMINISM_CONFIGS: [(&str, &str); 5] = [
    (
        "mse-sweep",
        r#"{"seed": 7, "n": 8, "m": [2, 4], "estimators": ["rloo", "bloo", "js2", "remax"],
            "distribution": "heterogeneous.json", "replications": 400, "scenario": "mse_sweep"}"#,
    ),
    (
        "grad-variance",
        r#"{"seed": 7, "n": 8, "m": 2, "estimators": ["none", "rloo", "js2", "grpo"],
            "distribution": "heterogeneous.json", "replications": 800, "scenario": "grad_variance"}"#,
    ),
    (
        "lambda-curve",
        r#"{"seed": 7, "n": 8, "m": [2, 4], "estimators": ["js2"],
            "distribution": "heterogeneous.json", "replications": 200, "scenario": "lambda_curve"}"#,
    ),
    (
        "oracle-check",
        r#"{"seed": 7, "n": 2, "m": 2, "estimators": ["rloo", "js2", "js1"],
            "distribution": {"models": [{"support": [0.0, 1.0], "probs": [0.7, 0.3]},
                                        {"support": [0.0, 1.0], "probs": [0.2, 0.8]}],
                             "weights": [0.5, 0.5]},
            "replications": 1, "scenario": "oracle_check"}"#,
    ),
    (
        "toy-train",
        r#"{"seed": 7, "n": 4, "m": 2, "estimators": ["rloo", "js2"],
            "distribution": "heterogeneous.json", "replications": 3, "scenario": "toy_train",
            "learning_rate": 0.5, "steps": 200}"#,
    ),
];

fn run_cli(subcommand: &str, config: &Path, threads: u32, format: &str) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_steinrl"))
        .args([subcommand, "--config"])
        .arg(config)
        .args(["--threads", &threads.to_string(), "--format", format])
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(
        configs_dir().join("heterogeneous.json"),
        dir.path().join("heterogeneous.json"),
    )
    .unwrap();
    let mut failures = Vec::new();
    let mut runs = 0;
    for (subcommand, text) in DETERMINISM_CONFIGS {
        let path = dir.path().join(format!("{subcommand}.json"));
        std::fs::write(&path, text).unwrap();
        for format in ["csv", "json"] {
            let (c1, one) = run_cli(subcommand, &path, 1, format);
            let (c8, eight) = run_cli(subcommand, &path, 8, format);
            let (c8b, again) = run_cli(subcommand, &path, 8, format);
            runs += 3;
            if c1 != 0 || c8 != 0 || c8b != 0 || one.is_empty() || one != eight || eight != again {
                failures.push(format!("{subcommand}/{format}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{runs} CLI runs over 5 scenarios x 2 formats at --threads 1 and 8; mismatches: {}",
            if failures.is_empty() {
                "none".to_string()
            } else {
                failures.join(", ")
            }
        ),
    )
}

fn degenerate() -> Outcome {
    let n = 4;
    let policy = TabularPolicy::new(vec![vec![0.3, -0.2]; n], vec![vec![0.7, 0.7]; n]).unwrap();
    let prompts: Vec<usize> = (0..n).collect();
    let batch = sample_responses(
        &policy,
        &prompts,
        3,
        StreamKey::new(SEED, Purpose::Responses, 0),
    )
    .unwrap();
    let mut problems = Vec::new();
    for mode in [LambdaMode::Paper, LambdaMode::Debiased] {
        let diag = shrinkage_diagnostics_with(&batch, mode).unwrap();
        if diag.lambda_hat.iter().any(|&l| l != 0.0) {
            problems.push(format!("lambda_hat {:?}", diag.lambda_hat));
        }
    }
    let estimators = [
        Estimator::PromptMean,
        Estimator::Rloo,
        Estimator::Bloo,
        Estimator::GlobalMean,
        Estimator::GlobalLoo,
        Estimator::Js1 { lambda: 0.5 },
        Estimator::Js2 {
            mode: LambdaMode::Paper,
        },
        Estimator::Js2 {
            mode: LambdaMode::Debiased,
        },
        Estimator::Grpo { epsilon: 1e-6 },
        Estimator::Grpo { epsilon: 0.0 },
        Estimator::GrpoNoStd,
        Estimator::Remax,
    ];
    for est in &estimators {
        let adv = est.advantages(&batch, Some(&policy)).unwrap();
        let g = estimator_gradient(&policy, &batch, est).unwrap();
        if adv.as_slice().iter().any(|&a| a != 0.0) || g.iter().any(|&x| x != 0.0) {
            problems.push(format!("{} nonzero", est.id()));
        }
    }

    let point = r#"{"models": [{"support": [0.7], "probs": [1.0]},
                               {"support": [0.7, 0.7], "probs": [0.5, 0.5]}],
                    "weights": [0.5, 0.5]}"#;
    let reports = [
        format!(
            r#"{{"seed": 3, "n": 4, "m": [2, 4], "estimators": ["rloo", "bloo", "js2", "js2_debiased", "global_loo"],
                "distribution": {point}, "replications": 50, "scenario": "mse_sweep"}}"#
        ),
        format!(
            r#"{{"seed": 3, "n": 4, "m": 2, "estimators": ["rloo", "js2", "grpo", "global_mean"],
                "distribution": {point}, "replications": 64, "scenario": "grad_variance"}}"#
        ),
        format!(
            r#"{{"seed": 3, "n": 4, "m": [2, 3], "estimators": ["js2"],
                "distribution": {point}, "replications": 20, "scenario": "lambda_curve"}}"#
        ),
        format!(
            r#"{{"seed": 3, "n": 4, "m": 2, "estimators": ["js2", "grpo"],
                "distribution": {point}, "replications": 2, "scenario": "toy_train",
                "learning_rate": 0.5, "steps": 20}}"#
        ),
    ]
    .map(|text| scenarios::run(&config(&text)).unwrap());
    for report in &reports {
        if report.has_non_finite() {
            problems.push(format!("{} non-finite", report.scenario));
        }
        for column in [
            "mse",
            "exact_mse",
            "trace_var_mc",
            "trace_var_microbatch",
            "mean_lambda",
        ] {
            if report.column(column).is_some()
                && report
                    .values(column)
                    .iter()
                    .any(|c| c.as_f64().is_some_and(|v| v != 0.0))
            {
                problems.push(format!("{} {column} nonzero", report.scenario));
            }
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "{} estimators on an all-equal batch, 4 scenarios on a deterministic env; problems: {}",
            estimators.len(),
            if problems.is_empty() {
                "none".to_string()
            } else {
                problems.join(", ")
            }
        ),
    )
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let results = [
        criterion("1", "unbiasedness by enumeration", secs(10), unbiasedness),
        criterion("2", "js1 bias witness", secs(1), js1_bias),
        criterion(
            "3",
            "relaxed MSE quadratic and vertex",
            secs(10),
            relaxed_quadratic,
        ),
        criterion(
            "4",
            "two-level MSE matches (m-1)-anchor closed form",
            secs(30),
            closed_form_verbatim,
        ),
        criterion(
            "4*",
            "two-level MSE matches exact closed form",
            secs(30),
            two_level_exact,
        ),
        criterion(
            "5",
            "micro-batch variance meter",
            secs(20),
            microbatch_meter,
        ),
        criterion(
            "6",
            "js2 beats rloo in baseline MSE, gap shrinks in m",
            secs(120),
            mse_gap,
        ),
        criterion(
            "7",
            "mean lambda_hat strictly decreasing in m",
            secs(30),
            lambda_trend,
        ),
        criterion(
            "8",
            "gradient variance none > rloo >= js2",
            secs(180),
            gradient_ordering,
        ),
        criterion(
            "9",
            "CLI reports byte-identical across threads",
            None,
            determinism,
        ),
        criterion(
            "10",
            "degenerate batches stay finite and zero",
            None,
            degenerate,
        ),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
