//! Exact brute-force oracles.
//!
//! Expectations are computed by visiting every response tuple (and, in
//! population mode, every assignment of mixture components to batch slots)
//! with its exact probability. Nothing here samples. Probabilities are
//! accumulated as sums of logs and exponentiated once per outcome. Outcomes
//! are processed in fixed-size index chunks that may run in parallel; chunk
//! totals are combined in index order.

use rayon::prelude::*;

use crate::env::{PromptDistribution, PromptModel, RewardBatch, TabularPolicy};
use crate::error::{Error, Result};
use crate::estimators::{prompt_means, shrink_cap, Estimator};
use crate::gradient::gradient_from_advantages;
use crate::numeric::{mean_excluding, pairwise_sum_by, shifted_mean, Matrix};
use crate::scalar::Scalar;

/// Largest number of outcome tuples an oracle will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

const CHUNK: u64 = 2048;

/// Which coefficient the quadratic is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MseConvention {
    /// `t = gamma`, the weight on the leave-one-out batch mean in the naive shrinkage form.
    Gamma,
    /// `t = lambda`, the coefficient of the two-level leave-one-out form.
    Lambda,
}

impl MseConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            MseConvention::Gamma => "gamma",
            MseConvention::Lambda => "lambda",
        }
    }
}

/// `MSE(t) = a t^2 + b t + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticMse<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub convention: MseConvention,
}

impl<T: Scalar> QuadraticMse<T> {
    /// Builds `(n/(n-1)) (s + v) t^2 - 2 v t + v`.
    pub fn shrinkage(v: T, s: T, n: usize, convention: MseConvention) -> Self {
        let a = T::of_usize(n) / T::of_usize(n - 1) * (s + v);
        Self {
            a,
            b: -(v + v),
            c: v,
            convention,
        }
    }

    /// Builds `(1 - t)^2 v_local + t^2 (n s + v_anchor) / (n - 1)`.
    ///
    /// `v_local` is the noise of the local estimate, `v_anchor` the noise of a
    /// single prompt mean entering the leave-one-out batch mean. With
    /// `v_local == v_anchor` this is [`QuadraticMse::shrinkage`].
    pub fn two_level(v_local: T, v_anchor: T, s: T, n: usize, convention: MseConvention) -> Self {
        let a = v_local + (T::of_usize(n) * s + v_anchor) / T::of_usize(n - 1);
        Self {
            a,
            b: -(v_local + v_local),
            c: v_local,
            convention,
        }
    }

    pub fn eval(&self, t: T) -> T {
        (self.a * t + self.b) * t + self.c
    }

    /// Vertex `-b / (2a)`; zero when the quadratic is flat.
    pub fn argmin(&self) -> T {
        if self.a > T::zero() {
            -self.b / (self.a + self.a)
        } else {
            T::zero()
        }
    }

    /// Interpolates the quadratic through three points with distinct abscissae.
    pub fn through(points: [(T, T); 3], convention: MseConvention) -> Self {
        let [(x0, y0), (x1, y1), (x2, y2)] = points;
        let d01 = (y1 - y0) / (x1 - x0);
        let d12 = (y2 - y1) / (x2 - x1);
        let a = (d12 - d01) / (x2 - x0);
        let b = d01 - a * (x0 + x1);
        let c = y0 - (a * x0 + b) * x0;
        Self {
            a,
            b,
            c,
            convention,
        }
    }
}

/// Exact expectations over every outcome tuple of a fixed prompt list.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult<T> {
    pub expected_gradient: Vec<T>,
    /// `(1/nm) sum E[(b_i^j - mu_i)^2]`; `None` when the estimator has no baseline.
    pub expected_mse: Option<T>,
    /// `E||g||^2 - ||E g||^2`.
    pub gradient_trace_variance: T,
    pub outcome_count: u128,
}

/// Which enumeration to run.
#[derive(Debug, Clone, Copy)]
pub enum MseSource<'a, T> {
    /// Prompts fixed; only responses are random.
    Fixed(&'a [PromptModel<T>]),
    /// `n` prompts drawn i.i.d. from a finite mixture, then responses.
    Population {
        dist: &'a PromptDistribution<T>,
        n: usize,
    },
}

/// Which baseline family the coefficient parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MseMode {
    /// `b_i = (1 - gamma) mu_hat_i + gamma mu_bar_hat_{-i}`, shared across the row.
    NaiveGamma,
    /// `b_i^j = (1 - lambda) mu_hat_i^{-j} + lambda mu_bar_hat_{-i}`.
    TwoLevelLambda,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch<T> {
    pub best: T,
    pub values: Vec<T>,
}

struct Law<'a, T> {
    rewards: &'a [T],
    log_probs: Vec<T>,
}

impl<'a, T: Scalar> Law<'a, T> {
    fn new(probs: &[T], rewards: &'a [T]) -> Self {
        Self {
            rewards,
            log_probs: probs.iter().map(|p| p.ln()).collect(),
        }
    }

    fn len(&self) -> usize {
        self.rewards.len()
    }
}

fn checked_count(radices: impl IntoIterator<Item = usize>) -> Result<u128> {
    let mut count: u128 = 1;
    for k in radices {
        count = count
            .checked_mul(k as u128)
            .filter(|&c| c <= ENUMERATION_LIMIT)
            .ok_or(Error::Intractable {
                count: count.saturating_mul(k as u128),
                limit: ENUMERATION_LIMIT,
            })?;
    }
    Ok(count)
}

/// `prod_i K_i^m`, refusing anything above [`ENUMERATION_LIMIT`].
pub fn outcome_count(supports: &[usize], m: usize) -> Result<u128> {
    checked_count(supports.iter().flat_map(|&k| std::iter::repeat_n(k, m)))
}

/// Total outcomes of population-mode enumeration: `(sum_k K_k^m)^n`.
pub fn population_outcome_count<T: Scalar>(
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
) -> Result<u128> {
    let mut per_slot: u128 = 0;
    for model in dist.models() {
        per_slot += outcome_count(&[model.num_outcomes()], m)?;
    }
    checked_count(std::iter::repeat_n(per_slot as usize, n))
}

/// `sum_outcomes exp(log_prefix + log P(outcome)) * f(batch)`, `f` returning `width` values.
fn expectation<T, F>(
    laws: &[Law<'_, T>],
    prompt_ids: &[usize],
    m: usize,
    log_prefix: T,
    width: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&RewardBatch<T>) -> Result<Vec<T>> + Sync,
{
    let n = laws.len();
    let count = outcome_count(&laws.iter().map(Law::len).collect::<Vec<_>>(), m)? as u64;
    let chunks = count.div_ceil(CHUNK);
    let partials: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![T::zero(); width];
            let mut rewards = Matrix::zeros(n, m);
            let mut responses = vec![0usize; n * m];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(count) {
                let mut rest = idx;
                let mut log_w = log_prefix;
                for i in 0..n {
                    let k = laws[i].len() as u64;
                    for j in 0..m {
                        let y = (rest % k) as usize;
                        rest /= k;
                        responses[i * m + j] = y;
                        rewards[(i, j)] = laws[i].rewards[y];
                        log_w += laws[i].log_probs[y];
                    }
                }
                let w = log_w.exp();
                if w == T::zero() {
                    continue;
                }
                let batch = RewardBatch::new(prompt_ids.to_vec(), rewards.clone())?
                    .with_responses(responses.clone())?;
                let values = f(&batch)?;
                debug_assert_eq!(values.len(), width);
                for (a, v) in acc.iter_mut().zip(values) {
                    *a += w * v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![T::zero(); width];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total)
}

fn baseline_mse<T: Scalar>(baseline: &Matrix<T>, means: &[T]) -> T {
    let (n, m) = baseline.shape();
    pairwise_sum_by(n * m, |k| {
        let d = baseline.as_slice()[k] - means[k / m];
        d * d
    }) / T::of_usize(n * m)
}

/// Exact `E[g]`, `Tr Var[g]` and baseline MSE for `m` responses on each listed prompt.
pub fn enumerate_expected_gradient<T: Scalar>(
    policy: &TabularPolicy<T>,
    prompts: &[usize],
    m: usize,
    estimator: &Estimator<T>,
) -> Result<EnumerationResult<T>> {
    if prompts.is_empty() {
        return Err(Error::InvalidBatchSize { needed: 1, got: 0 });
    }
    let probs = prompts
        .iter()
        .map(|&p| policy.num_responses(p).map(|_| policy.probs(p)))
        .collect::<Result<Vec<_>>>()?;
    let laws: Vec<Law<T>> = prompts
        .iter()
        .zip(&probs)
        .map(|(&p, pr)| Law::new(pr, policy.rewards(p)))
        .collect();
    let count = outcome_count(&laws.iter().map(Law::len).collect::<Vec<_>>(), m)?;
    let means: Vec<T> = prompts.iter().map(|&p| policy.expected_reward(p)).collect();
    let dim = policy.param_count();
    let has_baseline = !matches!(estimator, Estimator::Grpo { .. });
    let totals = expectation(&laws, prompts, m, T::zero(), dim + 2, |batch| {
        let out = estimator.evaluate(batch, Some(policy))?;
        let mut g = gradient_from_advantages(policy, batch, &out.advantages)?;
        let norm = pairwise_sum_by(dim, |k| g[k] * g[k]);
        let mse = out
            .baseline
            .map_or(T::zero(), |b| baseline_mse(b.values(), &means));
        g.push(norm);
        g.push(mse);
        Ok(g)
    })?;
    let expected_gradient = totals[..dim].to_vec();
    let mean_norm = pairwise_sum_by(dim, |k| expected_gradient[k] * expected_gradient[k]);
    Ok(EnumerationResult {
        gradient_trace_variance: totals[dim] - mean_norm,
        expected_mse: has_baseline.then_some(totals[dim + 1]),
        expected_gradient,
        outcome_count: count,
    })
}

/// Exact `(1/nm) sum_ij E[(b_i^j - mu_i)^2]` for fixed prompts.
///
/// `policy` is only needed for the greedy-reference estimator.
pub fn exact_baseline_mse<T: Scalar>(
    prompts: &[PromptModel<T>],
    m: usize,
    estimator: &Estimator<T>,
    policy: Option<&TabularPolicy<T>>,
) -> Result<T> {
    if matches!(estimator, Estimator::Grpo { .. }) {
        return Err(Error::UnsupportedEstimator(
            "grpo normalizes advantages and has no baseline".into(),
        ));
    }
    let laws: Vec<Law<T>> = prompts
        .iter()
        .map(|p| Law::new(p.probs(), p.support()))
        .collect();
    let ids: Vec<usize> = prompts.iter().map(PromptModel::prompt_id).collect();
    let means: Vec<T> = prompts.iter().map(PromptModel::mean).collect();
    let total = expectation(&laws, &ids, m, T::zero(), 1, |batch| {
        let b = estimator
            .baseline(batch, policy)?
            .ok_or_else(|| Error::UnsupportedEstimator(estimator.id().to_string()))?;
        Ok(vec![baseline_mse(b.values(), &means)])
    })?;
    Ok(total[0])
}

/// Exact MSE-optimal two-level coefficient for a fixed prompt list.
pub fn oracle_lambda_fixed<T: Scalar>(prompts: &[PromptModel<T>], m: usize) -> Result<T> {
    let q = mse_quadratic_two_level_fixed(prompts, m)?;
    Ok(q.argmin())
}

/// Exact MSE-optimal two-level coefficient for `n` prompts from a mixture.
pub fn oracle_lambda_population<T: Scalar>(
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
) -> Result<T> {
    Ok(mse_quadratic_population_exact(dist, n, m)?.argmin())
}

fn fixed_v_s<T: Scalar>(prompts: &[PromptModel<T>]) -> (T, T) {
    let n = prompts.len();
    let means: Vec<T> = prompts.iter().map(PromptModel::mean).collect();
    let variances: Vec<T> = prompts.iter().map(PromptModel::variance).collect();
    let mu_bar = shifted_mean(&means);
    let s = pairwise_sum_by(n, |i| {
        let d = means[i] - mu_bar;
        d * d
    }) / T::of_usize(n - 1);
    (shifted_mean(&variances), s)
}

/// Relaxed MSE of the naive shrinkage baseline as a quadratic in `gamma`.
pub fn mse_quadratic_fixed_prompts<T: Scalar>(
    prompts: &[PromptModel<T>],
    m: usize,
) -> Result<QuadraticMse<T>> {
    let n = prompts.len();
    if n < 2 {
        return Err(Error::InvalidBatchSize { needed: 2, got: n });
    }
    if m < 1 {
        return Err(Error::InvalidRolloutCount { needed: 1, got: m });
    }
    let (mean_var, s) = fixed_v_s(prompts);
    Ok(QuadraticMse::shrinkage(
        mean_var / T::of_usize(m),
        s,
        n,
        MseConvention::Gamma,
    ))
}

/// MSE of the two-level leave-one-out baseline on fixed prompts, as a quadratic in `lambda`.
///
/// The local term carries `mean sigma^2/(m-1)`; the batch anchor averages
/// full `m`-sample prompt means, each carrying `sigma^2/m`.
pub fn mse_quadratic_two_level_fixed<T: Scalar>(
    prompts: &[PromptModel<T>],
    m: usize,
) -> Result<QuadraticMse<T>> {
    let n = prompts.len();
    if n < 2 {
        return Err(Error::InvalidBatchSize { needed: 2, got: n });
    }
    if m < 2 {
        return Err(Error::InvalidRolloutCount { needed: 2, got: m });
    }
    let (mean_var, s) = fixed_v_s(prompts);
    Ok(QuadraticMse::two_level(
        mean_var / T::of_usize(m - 1),
        mean_var / T::of_usize(m),
        s,
        n,
        MseConvention::Lambda,
    ))
}

fn check_population(n: usize, m: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidBatchSize { needed: 2, got: n });
    }
    if m < 2 {
        return Err(Error::InvalidRolloutCount { needed: 2, got: m });
    }
    Ok(())
}

/// Closed form `(n/(n-1)) (s2 + v2) lambda^2 - 2 v2 lambda + v2` with
/// `v2 = E[sigma^2]/(m-1)` and `s2 = Var[mu]`.
///
/// Its vertex is `((n-1)/n) v2/(s2+v2)`. The form charges each prompt mean in
/// the batch anchor with `sigma^2/(m-1)` instead of `sigma^2/m`, so it exceeds
/// the true MSE by exactly `lambda^2 (v2 - E[sigma^2]/m) / (n-1)`; see
/// [`mse_quadratic_population_exact`].
pub fn mse_quadratic_population<T: Scalar>(
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
) -> Result<QuadraticMse<T>> {
    check_population(n, m)?;
    let stats = dist.population_stats(m)?;
    Ok(QuadraticMse::shrinkage(
        stats.v2,
        stats.s2,
        n,
        MseConvention::Lambda,
    ))
}

/// True MSE of the two-level baseline with prompts drawn from `dist`, as a quadratic in `lambda`.
pub fn mse_quadratic_population_exact<T: Scalar>(
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
) -> Result<QuadraticMse<T>> {
    check_population(n, m)?;
    let stats = dist.population_stats(m)?;
    Ok(QuadraticMse::two_level(
        stats.v2,
        stats.mean_variance / T::of_usize(m),
        stats.s2,
        n,
        MseConvention::Lambda,
    ))
}

fn coefficient_baseline<T: Scalar>(batch: &RewardBatch<T>, mode: MseMode, t: T) -> Matrix<T> {
    let (n, m) = (batch.n(), batch.m());
    let means = prompt_means(batch);
    let loo: Vec<T> = (0..n).map(|i| mean_excluding(n, i, |k| means[k])).collect();
    match mode {
        MseMode::NaiveGamma => Matrix::from_fn(n, m, |i, _| (T::one() - t) * means[i] + t * loo[i]),
        MseMode::TwoLevelLambda => Matrix::from_fn(n, m, |i, j| {
            let row = batch.row(i);
            (T::one() - t) * mean_excluding(m, j, |k| row[k]) + t * loo[i]
        }),
    }
}

fn check_mode(n: usize, m: usize, mode: MseMode) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidBatchSize { needed: 2, got: n });
    }
    let needed = match mode {
        MseMode::NaiveGamma => 1,
        MseMode::TwoLevelLambda => 2,
    };
    if m < needed {
        return Err(Error::InvalidRolloutCount { needed, got: m });
    }
    Ok(())
}

/// Exact MSE of the coefficient family at each point of `coefficients`.
pub fn exact_mse_curve<T: Scalar>(
    source: MseSource<'_, T>,
    m: usize,
    mode: MseMode,
    coefficients: &[T],
) -> Result<Vec<T>> {
    let width = coefficients.len();
    match source {
        MseSource::Fixed(prompts) => {
            check_mode(prompts.len(), m, mode)?;
            let laws: Vec<Law<T>> = prompts
                .iter()
                .map(|p| Law::new(p.probs(), p.support()))
                .collect();
            let ids: Vec<usize> = prompts.iter().map(PromptModel::prompt_id).collect();
            let means: Vec<T> = prompts.iter().map(PromptModel::mean).collect();
            expectation(&laws, &ids, m, T::zero(), width, |batch| {
                Ok(coefficients
                    .iter()
                    .map(|&t| baseline_mse(&coefficient_baseline(batch, mode, t), &means))
                    .collect())
            })
        }
        MseSource::Population { dist, n } => {
            check_mode(n, m, mode)?;
            population_expectation(dist, n, m, width, |batch, means| {
                Ok(coefficients
                    .iter()
                    .map(|&t| baseline_mse(&coefficient_baseline(batch, mode, t), means))
                    .collect())
            })
        }
    }
}

/// Sums `P(assignment, outcomes) * f(batch, true means)` over `n` i.i.d. prompt
/// draws from `dist` and `m` responses each.
fn population_expectation<T, F>(
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
    width: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&RewardBatch<T>, &[T]) -> Result<Vec<T>> + Sync,
{
    population_outcome_count(dist, n, m)?;
    let models = dist.models();
    let log_w: Vec<T> = dist.weights().iter().map(|w| w.ln()).collect();
    let slots = models.len() as u64;
    let mut total = vec![T::zero(); width];
    let mut assign = vec![0usize; n];
    for a in 0..slots.pow(n as u32) {
        let mut rest = a;
        let mut prefix = T::zero();
        for slot in assign.iter_mut() {
            *slot = (rest % slots) as usize;
            rest /= slots;
            prefix += log_w[*slot];
        }
        if prefix.exp() == T::zero() {
            continue;
        }
        let laws: Vec<Law<T>> = assign
            .iter()
            .map(|&k| Law::new(models[k].probs(), models[k].support()))
            .collect();
        let means: Vec<T> = assign.iter().map(|&k| models[k].mean()).collect();
        let part = expectation(&laws, &assign, m, prefix, width, |batch| f(batch, &means))?;
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total)
}

/// Exact baseline MSE when the `n` prompts are themselves drawn from `dist`.
///
/// `policy` is only needed for the greedy-reference estimator; its prompt
/// indices must match the distribution's.
pub fn exact_population_mse<T: Scalar>(
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
    estimator: &Estimator<T>,
    policy: Option<&TabularPolicy<T>>,
) -> Result<T> {
    if matches!(estimator, Estimator::Grpo { .. }) {
        return Err(Error::UnsupportedEstimator(
            "grpo normalizes advantages and has no baseline".into(),
        ));
    }
    let total = population_expectation(dist, n, m, 1, |batch, means| {
        let b = estimator
            .baseline(batch, policy)?
            .ok_or_else(|| Error::UnsupportedEstimator(estimator.id().to_string()))?;
        Ok(vec![baseline_mse(b.values(), means)])
    })?;
    Ok(total[0])
}

/// Exact MSE on a coefficient grid and the grid point that minimizes it (first on ties).
pub fn mse_grid_search<T: Scalar>(
    source: MseSource<'_, T>,
    m: usize,
    grid: &[T],
    mode: MseMode,
) -> Result<GridSearch<T>> {
    if grid.is_empty() {
        return Err(Error::Config("empty coefficient grid".into()));
    }
    if let Some(bad) = grid.iter().find(|t| !(**t >= T::zero() && **t <= T::one())) {
        return Err(Error::InvalidLambda(bad.as_f64()));
    }
    let values = exact_mse_curve(source, m, mode, grid)?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = k;
        }
    }
    Ok(GridSearch {
        best: grid[best],
        values,
    })
}

/// Fits the exact MSE curve through `t = 0, 1/2, 1` and returns the quadratic.
///
/// Both coefficient families are exactly quadratic, so the fit recovers the
/// curve from enumeration alone, independent of any closed form.
pub fn enumerated_quadratic<T: Scalar>(
    source: MseSource<'_, T>,
    m: usize,
    mode: MseMode,
) -> Result<QuadraticMse<T>> {
    let ts = [T::zero(), T::of(0.5), T::one()];
    let ys = exact_mse_curve(source, m, mode, &ts)?;
    let convention = match mode {
        MseMode::NaiveGamma => MseConvention::Gamma,
        MseMode::TwoLevelLambda => MseConvention::Lambda,
    };
    Ok(QuadraticMse::through(
        [(ts[0], ys[0]), (ts[1], ys[1]), (ts[2], ys[2])],
        convention,
    ))
}

/// Converts a naive-form shrinkage weight `lambda` to the `gamma` of the relaxed quadratic.
pub fn gamma_from_lambda<T: Scalar>(lambda: T, n: usize) -> T {
    lambda * shrink_cap(n)
}
