//! Policy-gradient estimation and the two trace-variance meters.
//!
//! [`mc_gradient_moments`] measures the variance of a single-batch gradient by
//! redrawing independent batches. [`microbatch_trace_variance`] estimates the
//! variance of the *average* of `M` micro-batch gradients from those `M`
//! gradients alone. The two differ by a factor of `M`.

use rayon::prelude::*;

use crate::env::{
    sample_prompt_ids, sample_responses, PromptDistribution, RewardBatch, TabularPolicy,
};
use crate::error::{Error, Result};
use crate::estimators::{BaselineMatrix, Estimator};
use crate::numeric::{pairwise_sum_by, Matrix};
use crate::rng::{Purpose, StreamKey};
use crate::scalar::Scalar;

/// Where a gradient sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SampleMeta {
    pub seed: u64,
    pub replication: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample<T> {
    pub vector: Vec<T>,
    pub meta: SampleMeta,
}

impl<T: Scalar> GradientSample<T> {
    pub fn new(vector: Vec<T>, meta: SampleMeta) -> Self {
        Self { vector, meta }
    }

    pub fn norm_squared(&self) -> T {
        pairwise_sum_by(self.vector.len(), |k| self.vector[k] * self.vector[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceKind {
    /// Spread of independently redrawn single-batch gradients.
    McPopulation,
    /// Unbiased estimate of the variance of an average of micro-batch gradients.
    MicrobatchUnbiased,
}

impl VarianceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceKind::McPopulation => "mc_population",
            VarianceKind::MicrobatchUnbiased => "microbatch_unbiased",
        }
    }
}

/// Estimate of `Tr Var[g]`. Micro-batch readings may be negative and are not clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReading<T> {
    pub trace_var: T,
    pub n_samples: usize,
    pub kind: VarianceKind,
    /// Standard error of `trace_var` across samples, when available.
    pub std_error: Option<T>,
}

/// `(1/n) sum_i (1/m) sum_j A_i^j score(x_i, y_i^j)`.
pub fn gradient_from_advantages<T: Scalar>(
    policy: &TabularPolicy<T>,
    batch: &RewardBatch<T>,
    advantages: &Matrix<T>,
) -> Result<Vec<T>> {
    let (n, m) = (batch.n(), batch.m());
    if advantages.shape() != (n, m) {
        return Err(Error::InvalidShape(format!(
            "advantages are {:?} but the batch is {n}x{m}",
            advantages.shape()
        )));
    }
    if !batch.has_responses() {
        return Err(Error::InvalidShape("batch carries no response ids".into()));
    }
    let mut out = vec![T::zero(); policy.param_count()];
    let scale = T::one() / T::of_usize(n * m);
    for i in 0..n {
        let prompt = batch.prompt_ids()[i];
        let k = policy.num_responses(prompt)?;
        let probs = policy.probs(prompt);
        for j in 0..m {
            let y = batch.response(i, j).unwrap_or_default();
            if y >= k {
                return Err(Error::IndexOutOfRange {
                    what: "response",
                    index: y,
                    len: k,
                });
            }
            let a = advantages[(i, j)];
            if a != T::zero() {
                policy.add_scaled_score(&mut out, prompt, y, a * scale, &probs);
            }
        }
    }
    Ok(out)
}

/// Policy-gradient estimate with baseline `b_i^j`.
pub fn policy_gradient<T: Scalar>(
    policy: &TabularPolicy<T>,
    batch: &RewardBatch<T>,
    baseline: &BaselineMatrix<T>,
) -> Result<Vec<T>> {
    if baseline.values().shape() != (batch.n(), batch.m()) {
        return Err(Error::InvalidShape(format!(
            "baseline is {:?} but the batch is {}x{}",
            baseline.values().shape(),
            batch.n(),
            batch.m()
        )));
    }
    gradient_from_advantages(policy, batch, &baseline.advantages(batch))
}

/// Gradient under any estimator, including GRPO's normalized advantages.
pub fn estimator_gradient<T: Scalar>(
    policy: &TabularPolicy<T>,
    batch: &RewardBatch<T>,
    estimator: &Estimator<T>,
) -> Result<Vec<T>> {
    let advantages = estimator.advantages(batch, Some(policy))?;
    gradient_from_advantages(policy, batch, &advantages)
}

/// Draws replication `r`'s batch: `n` prompts by weight, then `m` responses each from the policy.
pub fn draw_batch<T: Scalar>(
    policy: &TabularPolicy<T>,
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
    seed: u64,
    replication: u64,
) -> Result<RewardBatch<T>> {
    let mut prompt_stream = StreamKey::new(seed, Purpose::Prompts, replication).stream();
    let ids = sample_prompt_ids(dist, n, &mut prompt_stream)?;
    sample_responses(
        policy,
        &ids,
        m,
        StreamKey::new(seed, Purpose::Responses, replication),
    )
}

/// Gradient samples for every estimator on the same `replications` batches.
///
/// Result is indexed `[estimator][replication]`. Replications run on the
/// current rayon pool; output order never depends on scheduling.
pub fn paired_gradient_samples<T: Scalar>(
    policy: &TabularPolicy<T>,
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
    estimators: &[Estimator<T>],
    replications: usize,
    seed: u64,
) -> Result<Vec<Vec<GradientSample<T>>>> {
    if dist.len() > policy.num_prompts() {
        return Err(Error::InvalidShape(format!(
            "distribution has {} prompts but the policy only {}",
            dist.len(),
            policy.num_prompts()
        )));
    }
    let per_rep: Vec<Vec<GradientSample<T>>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let batch = draw_batch(policy, dist, n, m, seed, r)?;
            let meta = SampleMeta {
                seed,
                replication: r,
            };
            estimators
                .iter()
                .map(|e| {
                    Ok(GradientSample::new(
                        estimator_gradient(policy, &batch, e)?,
                        meta,
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Vec<GradientSample<T>>> = (0..estimators.len())
        .map(|_| Vec::with_capacity(replications))
        .collect();
    for rep in per_rep {
        for (e, sample) in rep.into_iter().enumerate() {
            out[e].push(sample);
        }
    }
    Ok(out)
}

/// Coordinate-wise mean of the samples, in index order.
pub fn sample_mean<T: Scalar>(samples: &[GradientSample<T>]) -> Vec<T> {
    let dim = samples.first().map_or(0, |s| s.vector.len());
    let count = T::of_usize(samples.len().max(1));
    (0..dim)
        .map(|c| pairwise_sum_by(samples.len(), |r| samples[r].vector[c]) / count)
        .collect()
}

/// `||g_r - mean||^2` for each sample.
pub fn squared_deviations<T: Scalar>(samples: &[GradientSample<T>], mean: &[T]) -> Vec<T> {
    samples
        .iter()
        .map(|s| {
            pairwise_sum_by(mean.len(), |c| {
                let d = s.vector[c] - mean[c];
                d * d
            })
        })
        .collect()
}

/// Mean and Monte Carlo trace variance `(1/(R-1)) sum ||g_r - g_bar||^2` of single-batch gradients.
pub fn trace_moments<T: Scalar>(
    samples: &[GradientSample<T>],
) -> Result<(Vec<T>, VarianceReading<T>)> {
    let r = samples.len();
    if r < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: r });
    }
    let mean = sample_mean(samples);
    let dev = squared_deviations(samples, &mean);
    let rescale = T::of_usize(r) / T::of_usize(r - 1);
    let terms: Vec<T> = dev.iter().map(|&d| d * rescale).collect();
    let (trace_var, std_error) = mean_and_stderr(&terms);
    Ok((
        mean,
        VarianceReading {
            trace_var,
            n_samples: r,
            kind: VarianceKind::McPopulation,
            std_error: Some(std_error),
        },
    ))
}

/// Mean and `(R-1)`-denominator standard error of the mean.
pub fn mean_and_stderr<T: Scalar>(values: &[T]) -> (T, T) {
    let r = values.len();
    let mean = pairwise_sum_by(r, |k| values[k]) / T::of_usize(r.max(1));
    if r < 2 {
        return (mean, T::zero());
    }
    let ss = pairwise_sum_by(r, |k| {
        let d = values[k] - mean;
        d * d
    });
    let var = ss / T::of_usize(r - 1);
    (mean, (var / T::of_usize(r)).sqrt())
}

/// Monte Carlo mean gradient and trace variance for one estimator.
#[allow(clippy::too_many_arguments)]
pub fn mc_gradient_moments<T: Scalar>(
    policy: &TabularPolicy<T>,
    dist: &PromptDistribution<T>,
    n: usize,
    m: usize,
    estimator: &Estimator<T>,
    replications: usize,
    seed: u64,
) -> Result<(Vec<T>, VarianceReading<T>)> {
    if replications < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: replications,
        });
    }
    let mut samples = paired_gradient_samples(
        policy,
        dist,
        n,
        m,
        std::slice::from_ref(estimator),
        replications,
        seed,
    )?;
    trace_moments(&samples.remove(0))
}

/// Unbiased estimate of the trace variance of the average of `M` micro-batch gradients:
/// `(1/M) (1/(M-1)) (sum ||g_i||^2 - (1/M) ||sum g_i||^2)`.
///
/// Samples are reduced in `(meta, vector)` order, so any permutation of the
/// input produces the same bits.
pub fn microbatch_trace_variance<T: Scalar>(
    samples: &[GradientSample<T>],
) -> Result<VarianceReading<T>> {
    let count = samples.len();
    if count < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: count,
        });
    }
    let dim = samples[0].vector.len();
    if samples.iter().any(|s| s.vector.len() != dim) {
        return Err(Error::InvalidShape(
            "micro-batch gradients differ in length".into(),
        ));
    }
    let mut order: Vec<&GradientSample<T>> = samples.iter().collect();
    order.sort_by(|a, b| {
        a.meta.cmp(&b.meta).then_with(|| {
            a.vector
                .iter()
                .zip(&b.vector)
                .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let sum_sq = pairwise_sum_by(count, |i| order[i].norm_squared());
    let sum_norm_sq = pairwise_sum_by(dim, |c| {
        let s = pairwise_sum_by(count, |i| order[i].vector[c]);
        s * s
    });
    let mm = T::of_usize(count);
    let trace_cov_micro = (sum_sq - sum_norm_sq / mm) / T::of_usize(count - 1);
    Ok(VarianceReading {
        trace_var: trace_cov_micro / mm,
        n_samples: count,
        kind: VarianceKind::MicrobatchUnbiased,
        std_error: None,
    })
}
