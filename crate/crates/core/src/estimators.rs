//! Baseline and advantage estimators computed from a [`RewardBatch`] alone.
//!
//! Leave-one-out quantities are summed directly over the retained entries,
//! never as "total minus held-out", so an estimator that is meant to be
//! independent of `r_i^j` is bitwise unchanged when `r_i^j` changes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{RewardBatch, TabularPolicy};
use crate::error::{Error, Result};
use crate::numeric::{mean_excluding, pairwise_sum_by, shifted_mean, shifted_mean_by, Matrix};
use crate::scalar::Scalar;

/// Default GRPO stabilizer added to the group standard deviation.
pub const DEFAULT_GRPO_EPSILON: f64 = 1e-6;

/// Entry `(i, j)` is the baseline `b_i^j` paired with reward `r_i^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineMatrix<T>(pub Matrix<T>);

impl<T: Scalar> BaselineMatrix<T> {
    pub fn values(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.0[(i, j)]
    }

    /// Broadcasts one value per row.
    pub fn from_row_values(values: &[T], m: usize) -> Self {
        Self(Matrix::from_fn(values.len(), m, |i, _| values[i]))
    }

    /// `r_i^j - b_i^j`.
    pub fn advantages(&self, batch: &RewardBatch<T>) -> Matrix<T> {
        batch.rewards().zip_map(&self.0, |r, b| r - b)
    }
}

/// How the plug-in shrinkage statistics are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Statistics exactly as in the reference listing.
    #[default]
    Paper,
    /// `v` rescaled by `m/(m-1)`, `s` reduced by the sampling noise of the prompt means.
    Debiased,
}

/// Per-prompt leave-one-out shrinkage statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageDiagnostics<T> {
    pub v_hat: Vec<T>,
    pub s_hat: Vec<T>,
    pub lambda_hat: Vec<T>,
    pub loo_batch_mean: Vec<T>,
}

impl<T: Scalar> ShrinkageDiagnostics<T> {
    pub fn mean_lambda(&self) -> T {
        shifted_mean(&self.lambda_hat)
    }
}

/// Result of the closed-form optimal coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalLambda<T> {
    /// `((n-1)/n) v/(s+v)`: coefficient on the leave-one-out batch mean.
    pub gamma: T,
    /// `v/(s+v)`: coefficient on the full batch mean in the naive form.
    pub lambda: T,
    /// `v + s == 0`; both coefficients are reported as zero.
    pub degenerate: bool,
}

fn require_rollouts<T: Scalar>(batch: &RewardBatch<T>, needed: usize) -> Result<()> {
    if batch.m() < needed {
        return Err(Error::InvalidRolloutCount {
            needed,
            got: batch.m(),
        });
    }
    Ok(())
}

fn require_prompts<T: Scalar>(batch: &RewardBatch<T>, needed: usize) -> Result<()> {
    if batch.n() < needed {
        return Err(Error::InvalidBatchSize {
            needed,
            got: batch.n(),
        });
    }
    Ok(())
}

/// `mu_hat_i`, the mean of each row.
pub fn prompt_means<T: Scalar>(batch: &RewardBatch<T>) -> Vec<T> {
    (0..batch.n()).map(|i| shifted_mean(batch.row(i))).collect()
}

pub fn prompt_mean_baseline<T: Scalar>(batch: &RewardBatch<T>) -> BaselineMatrix<T> {
    BaselineMatrix::from_row_values(&prompt_means(batch), batch.m())
}

/// Leave-one-out prompt mean `mu_hat_i^{-j}`.
pub fn rloo_baseline<T: Scalar>(batch: &RewardBatch<T>) -> Result<BaselineMatrix<T>> {
    require_rollouts(batch, 2)?;
    let m = batch.m();
    Ok(BaselineMatrix(Matrix::from_fn(batch.n(), m, |i, j| {
        let row = batch.row(i);
        mean_excluding(m, j, |k| row[k])
    })))
}

fn loo_batch_means<T: Scalar>(means: &[T]) -> Vec<T> {
    let n = means.len();
    (0..n).map(|i| mean_excluding(n, i, |k| means[k])).collect()
}

/// Leave-one-prompt-out batch mean `mu_bar_hat_{-i}`, constant along each row.
pub fn bloo_baseline<T: Scalar>(batch: &RewardBatch<T>) -> Result<BaselineMatrix<T>> {
    require_prompts(batch, 2)?;
    let loo = loo_batch_means(&prompt_means(batch));
    Ok(BaselineMatrix::from_row_values(&loo, batch.m()))
}

/// Mean of every reward in the batch.
pub fn global_mean_baseline<T: Scalar>(batch: &RewardBatch<T>) -> BaselineMatrix<T> {
    let mean = shifted_mean(batch.rewards().as_slice());
    BaselineMatrix(Matrix::filled(batch.n(), batch.m(), mean))
}

/// Mean of every reward except `r_i^j` itself.
pub fn global_loo_baseline<T: Scalar>(batch: &RewardBatch<T>) -> Result<BaselineMatrix<T>> {
    let total = batch.n() * batch.m();
    if total < 2 {
        return Err(Error::InvalidShape(
            "global leave-one-out mean needs at least two rewards".into(),
        ));
    }
    let flat = batch.rewards().as_slice();
    let m = batch.m();
    Ok(BaselineMatrix(Matrix::from_fn(batch.n(), m, |i, j| {
        mean_excluding(total, i * m + j, |k| flat[k])
    })))
}

/// Shrinks each prompt mean toward the global batch mean by a fixed `lambda`.
///
/// The baseline uses `r_i^j` itself, so the resulting gradient is biased.
pub fn naive_js_baseline<T: Scalar>(
    batch: &RewardBatch<T>,
    lambda: T,
) -> Result<BaselineMatrix<T>> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(Error::InvalidLambda(lambda.as_f64()));
    }
    let global = shifted_mean(batch.rewards().as_slice());
    let shrunk: Vec<T> = prompt_means(batch)
        .into_iter()
        .map(|mu| (T::one() - lambda) * mu + lambda * global)
        .collect();
    Ok(BaselineMatrix::from_row_values(&shrunk, batch.m()))
}

/// Optimal shrinkage from known within-prompt noise `v` and cross-prompt dispersion `s`.
pub fn optimal_lambda_known<T: Scalar>(v: T, s: T, n: usize) -> Result<OptimalLambda<T>> {
    if n < 2 {
        return Err(Error::InvalidBatchSize { needed: 2, got: n });
    }
    if !(v >= T::zero() && s >= T::zero()) {
        return Err(Error::Config(format!(
            "noise {v} and dispersion {s} must be nonnegative"
        )));
    }
    let total = v + s;
    if total == T::zero() {
        return Ok(OptimalLambda {
            gamma: T::zero(),
            lambda: T::zero(),
            degenerate: true,
        });
    }
    let lambda = v / total;
    Ok(OptimalLambda {
        gamma: lambda * shrink_cap(n),
        lambda,
        degenerate: false,
    })
}

/// `(n - 1) / n`, the largest coefficient the two-level estimator uses.
pub fn shrink_cap<T: Scalar>(n: usize) -> T {
    T::of_usize(n - 1) / T::of_usize(n)
}

fn ratio_or_zero<T: Scalar>(num: T, den: T) -> T {
    if den > T::zero() {
        num / den
    } else {
        T::zero()
    }
}

/// Plug-in statistics with the reference-listing conventions.
pub fn shrinkage_diagnostics<T: Scalar>(batch: &RewardBatch<T>) -> Result<ShrinkageDiagnostics<T>> {
    shrinkage_diagnostics_with(batch, LambdaMode::Paper)
}

pub fn shrinkage_diagnostics_with<T: Scalar>(
    batch: &RewardBatch<T>,
    mode: LambdaMode,
) -> Result<ShrinkageDiagnostics<T>> {
    require_prompts(batch, 2)?;
    require_rollouts(batch, 2)?;
    let (n, m) = (batch.n(), batch.m());
    let means = prompt_means(batch);
    // sample variance of each prompt mean: (1/(m(m-1))) sum_j (r - mu_hat)^2
    let mean_noise: Vec<T> = (0..n)
        .map(|k| {
            let row = batch.row(k);
            let ss = pairwise_sum_by(m, |j| {
                let d = row[j] - means[k];
                d * d
            });
            ss / T::of_usize(m * (m - 1))
        })
        .collect();
    let cap = shrink_cap::<T>(n);
    let mut out = ShrinkageDiagnostics {
        v_hat: Vec::with_capacity(n),
        s_hat: Vec::with_capacity(n),
        lambda_hat: Vec::with_capacity(n),
        loo_batch_mean: Vec::with_capacity(n),
    };
    for i in 0..n {
        let loo_mean = mean_excluding(n, i, |k| means[k]);
        let v = mean_excluding(n, i, |k| mean_noise[k]);
        let s = shifted_mean_by(n - 1, |k| {
            let k = if k < i { k } else { k + 1 };
            let d = means[k] - loo_mean;
            d * d
        });
        let (v, s) = match mode {
            LambdaMode::Paper => (v, s),
            LambdaMode::Debiased => (
                v * T::of_usize(m) / T::of_usize(m - 1),
                (s - v).max(T::zero()),
            ),
        };
        out.lambda_hat.push(ratio_or_zero(v, v + s) * cap);
        out.v_hat.push(v);
        out.s_hat.push(s);
        out.loo_batch_mean.push(loo_mean);
    }
    Ok(out)
}

/// Two-level leave-one-out baseline with a caller-chosen coefficient per prompt.
pub fn js2_with_lambdas<T: Scalar>(
    batch: &RewardBatch<T>,
    lambdas: &[T],
) -> Result<BaselineMatrix<T>> {
    require_prompts(batch, 2)?;
    require_rollouts(batch, 2)?;
    if lambdas.len() != batch.n() {
        return Err(Error::InvalidShape(format!(
            "{} coefficients for {} prompts",
            lambdas.len(),
            batch.n()
        )));
    }
    let loo = loo_batch_means(&prompt_means(batch));
    Ok(combine(batch, &loo, lambdas))
}

fn combine<T: Scalar>(batch: &RewardBatch<T>, loo_batch: &[T], lambdas: &[T]) -> BaselineMatrix<T> {
    let m = batch.m();
    BaselineMatrix(Matrix::from_fn(batch.n(), m, |i, j| {
        let row = batch.row(i);
        let local = mean_excluding(m, j, |k| row[k]);
        let lambda = lambdas[i];
        if lambda == T::zero() {
            local
        } else if lambda == T::one() {
            loo_batch[i]
        } else {
            (T::one() - lambda) * local + lambda * loo_batch[i]
        }
    }))
}

/// James-Stein baseline with plug-in per-prompt coefficients.
pub fn js_baseline<T: Scalar>(
    batch: &RewardBatch<T>,
) -> Result<(BaselineMatrix<T>, ShrinkageDiagnostics<T>)> {
    js_baseline_with(batch, LambdaMode::Paper)
}

pub fn js_baseline_with<T: Scalar>(
    batch: &RewardBatch<T>,
    mode: LambdaMode,
) -> Result<(BaselineMatrix<T>, ShrinkageDiagnostics<T>)> {
    let diag = shrinkage_diagnostics_with(batch, mode)?;
    let baseline = combine(batch, &diag.loo_batch_mean, &diag.lambda_hat);
    Ok((baseline, diag))
}

/// Group-relative advantages. With `normalize == false` this is plain centering.
///
/// A zero-variance row yields zero advantages even when `epsilon == 0`.
pub fn grpo_advantage<T: Scalar>(
    batch: &RewardBatch<T>,
    epsilon: T,
    normalize: bool,
) -> Result<Matrix<T>> {
    require_rollouts(batch, 2)?;
    let m = batch.m();
    let means = prompt_means(batch);
    let mut out = Matrix::zeros(batch.n(), m);
    for i in 0..batch.n() {
        let row = batch.row(i);
        let mu = means[i];
        let scale = if normalize {
            let ss = pairwise_sum_by(m, |j| {
                let d = row[j] - mu;
                d * d
            });
            (ss / T::of_usize(m - 1)).sqrt() + epsilon
        } else {
            T::one()
        };
        for j in 0..m {
            let centered = row[j] - mu;
            out[(i, j)] = if centered == T::zero() {
                T::zero()
            } else {
                centered / scale
            };
        }
    }
    Ok(out)
}

/// Reward of the greedy response of each prompt, shared across the row.
pub fn remax_baseline<T: Scalar>(
    policy: &TabularPolicy<T>,
    batch: &RewardBatch<T>,
) -> Result<BaselineMatrix<T>> {
    let values = batch
        .prompt_ids()
        .iter()
        .map(|&p| {
            let y = policy.greedy_response(p)?;
            policy.reward(p, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineMatrix::from_row_values(&values, batch.m()))
}

/// Stable string identifiers used in configs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorId {
    PromptMean,
    Rloo,
    Bloo,
    GlobalMean,
    Js1,
    Js2,
    Js2Debiased,
    Grpo,
    GrpoNoStd,
    Remax,
    None,
    GlobalLoo,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 12] = [
        EstimatorId::PromptMean,
        EstimatorId::Rloo,
        EstimatorId::Bloo,
        EstimatorId::GlobalMean,
        EstimatorId::Js1,
        EstimatorId::Js2,
        EstimatorId::Js2Debiased,
        EstimatorId::Grpo,
        EstimatorId::GrpoNoStd,
        EstimatorId::Remax,
        EstimatorId::None,
        EstimatorId::GlobalLoo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::PromptMean => "prompt_mean",
            EstimatorId::Rloo => "rloo",
            EstimatorId::Bloo => "bloo",
            EstimatorId::GlobalMean => "global_mean",
            EstimatorId::Js1 => "js1",
            EstimatorId::Js2 => "js2",
            EstimatorId::Js2Debiased => "js2_debiased",
            EstimatorId::Grpo => "grpo",
            EstimatorId::GrpoNoStd => "grpo_nostd",
            EstimatorId::Remax => "remax",
            EstimatorId::None => "none",
            EstimatorId::GlobalLoo => "global_loo",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

impl TryFrom<String> for EstimatorId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorId> for String {
    fn from(id: EstimatorId) -> String {
        id.as_str().to_string()
    }
}

/// A fully parameterized estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator<T> {
    PromptMean,
    Rloo,
    Bloo,
    GlobalMean,
    GlobalLoo,
    Js1 {
        lambda: T,
    },
    Js2 {
        mode: LambdaMode,
    },
    /// Two-level structure with one coefficient for every prompt, e.g. the
    /// closed-form optimum computed from true population statistics.
    Js2Fixed {
        lambda: T,
    },
    Grpo {
        epsilon: T,
    },
    GrpoNoStd,
    Remax,
    None,
}

/// Everything an estimator produces for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput<T> {
    /// `None` for GRPO with normalization, which is not a baseline.
    pub baseline: Option<BaselineMatrix<T>>,
    pub advantages: Matrix<T>,
    pub diagnostics: Option<ShrinkageDiagnostics<T>>,
}

impl<T: Scalar> Estimator<T> {
    pub fn id(&self) -> EstimatorId {
        match self {
            Estimator::PromptMean => EstimatorId::PromptMean,
            Estimator::Rloo => EstimatorId::Rloo,
            Estimator::Bloo => EstimatorId::Bloo,
            Estimator::GlobalMean => EstimatorId::GlobalMean,
            Estimator::GlobalLoo => EstimatorId::GlobalLoo,
            Estimator::Js1 { .. } => EstimatorId::Js1,
            Estimator::Js2 {
                mode: LambdaMode::Debiased,
            } => EstimatorId::Js2Debiased,
            Estimator::Js2 { .. } | Estimator::Js2Fixed { .. } => EstimatorId::Js2,
            Estimator::Grpo { .. } => EstimatorId::Grpo,
            Estimator::GrpoNoStd => EstimatorId::GrpoNoStd,
            Estimator::Remax => EstimatorId::Remax,
            Estimator::None => EstimatorId::None,
        }
    }

    /// Whether `b_i^j` is independent of `r_i^j` by construction.
    pub fn is_unbiased(&self) -> bool {
        matches!(
            self,
            Estimator::Rloo
                | Estimator::Bloo
                | Estimator::GlobalLoo
                | Estimator::Js2 { .. }
                | Estimator::Js2Fixed { .. }
                | Estimator::Remax
                | Estimator::None
        )
    }

    /// `policy` is only consulted by [`Estimator::Remax`].
    pub fn evaluate(
        &self,
        batch: &RewardBatch<T>,
        policy: Option<&TabularPolicy<T>>,
    ) -> Result<EstimatorOutput<T>> {
        let with_baseline = |b: BaselineMatrix<T>| EstimatorOutput {
            advantages: b.advantages(batch),
            baseline: Some(b),
            diagnostics: None,
        };
        Ok(match *self {
            Estimator::PromptMean | Estimator::GrpoNoStd => {
                with_baseline(prompt_mean_baseline(batch))
            }
            Estimator::Rloo => with_baseline(rloo_baseline(batch)?),
            Estimator::Bloo => with_baseline(bloo_baseline(batch)?),
            Estimator::GlobalMean => with_baseline(global_mean_baseline(batch)),
            Estimator::GlobalLoo => with_baseline(global_loo_baseline(batch)?),
            Estimator::Js1 { lambda } => with_baseline(naive_js_baseline(batch, lambda)?),
            Estimator::Js2 { mode } => {
                let (b, diag) = js_baseline_with(batch, mode)?;
                EstimatorOutput {
                    advantages: b.advantages(batch),
                    baseline: Some(b),
                    diagnostics: Some(diag),
                }
            }
            Estimator::Js2Fixed { lambda } => {
                with_baseline(js2_with_lambdas(batch, &vec![lambda; batch.n()])?)
            }
            Estimator::Grpo { epsilon } => EstimatorOutput {
                baseline: None,
                advantages: grpo_advantage(batch, epsilon, true)?,
                diagnostics: None,
            },
            Estimator::Remax => {
                let policy = policy
                    .ok_or_else(|| Error::UnsupportedEstimator("remax without a policy".into()))?;
                with_baseline(remax_baseline(policy, batch)?)
            }
            Estimator::None => with_baseline(BaselineMatrix(Matrix::zeros(batch.n(), batch.m()))),
        })
    }

    pub fn baseline(
        &self,
        batch: &RewardBatch<T>,
        policy: Option<&TabularPolicy<T>>,
    ) -> Result<Option<BaselineMatrix<T>>> {
        Ok(self.evaluate(batch, policy)?.baseline)
    }

    pub fn advantages(
        &self,
        batch: &RewardBatch<T>,
        policy: Option<&TabularPolicy<T>>,
    ) -> Result<Matrix<T>> {
        Ok(self.evaluate(batch, policy)?.advantages)
    }
}
