//! Synthetic verifiable-reward world with known value functions.
//!
//! A [`PromptModel`] is one prompt's finite reward law. A
//! [`PromptDistribution`] is a finite mixture of them. A [`TabularPolicy`]
//! holds one logit per response per prompt; its response space doubles as the
//! reward support so sampled batches can feed both the baseline estimators
//! and the gradient estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum_by, shifted_mean, Matrix};
use crate::rng::{Stream, StreamKey};
use crate::scalar::Scalar;

fn sum_tolerance<T: Scalar>(len: usize) -> f64 {
    1e-12_f64.max(8.0 * T::epsilon().as_f64() * len.max(1) as f64)
}

fn check_probability_vector<T: Scalar>(what: &str, probs: &[T]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Config(format!("{what}: empty probability vector")));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < T::zero()) {
        return Err(Error::Config(format!("{what}: invalid probability {p}")));
    }
    let total = pairwise_sum_by(probs.len(), |k| probs[k]).as_f64();
    if (total - 1.0).abs() > sum_tolerance::<T>(probs.len()) {
        return Err(Error::Config(format!(
            "{what}: probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// One prompt's finite-support reward law.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptModel<T> {
    prompt_id: usize,
    support: Vec<T>,
    probs: Vec<T>,
}

impl<T: Scalar> PromptModel<T> {
    pub fn new(prompt_id: usize, support: Vec<T>, probs: Vec<T>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::Config(format!(
                "prompt {prompt_id}: support has {} values but probs has {}",
                support.len(),
                probs.len()
            )));
        }
        if support.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config(format!(
                "prompt {prompt_id}: non-finite reward in support"
            )));
        }
        check_probability_vector(&format!("prompt {prompt_id}"), &probs)?;
        Ok(Self {
            prompt_id,
            support,
            probs,
        })
    }

    /// Reward 1 with probability `p`, else 0. Response 0 is the failure.
    pub fn bernoulli(prompt_id: usize, p: T) -> Result<Self> {
        Self::new(prompt_id, vec![T::zero(), T::one()], vec![T::one() - p, p])
    }

    pub fn point_mass(prompt_id: usize, reward: T) -> Result<Self> {
        Self::new(prompt_id, vec![reward], vec![T::one()])
    }

    pub fn prompt_id(&self) -> usize {
        self.prompt_id
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn num_outcomes(&self) -> usize {
        self.support.len()
    }

    /// The value function of this prompt.
    pub fn mean(&self) -> T {
        pairwise_sum_by(self.support.len(), |k| self.probs[k] * self.support[k])
    }

    pub fn variance(&self) -> T {
        let mu = self.mean();
        pairwise_sum_by(self.support.len(), |k| {
            let d = self.support[k] - mu;
            self.probs[k] * d * d
        })
    }

    fn with_id(&self, prompt_id: usize) -> Self {
        Self {
            prompt_id,
            ..self.clone()
        }
    }
}

/// Serialized form of a prompt model. Field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Serialized form of a [`PromptDistribution`]:
/// `{"models":[{"support":[...],"probs":[...]}],"weights":[...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionDoc {
    pub models: Vec<ModelDoc>,
    pub weights: Vec<f64>,
}

/// Finite mixture of prompt models. Model `k` has `prompt_id == k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDistribution<T> {
    models: Vec<PromptModel<T>>,
    weights: Vec<T>,
}

/// Exact population quantities of a distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationStats<T> {
    /// `E[sigma^2(x)] / (m - 1)`, the variance of a leave-one-out prompt mean.
    pub v2: T,
    /// `Var[mu(x)]`.
    pub s2: T,
    pub mean_value: T,
    pub mean_variance: T,
}

impl<T: Scalar> PromptDistribution<T> {
    /// Model ids are reassigned to their position in `models`.
    pub fn new(models: Vec<PromptModel<T>>, weights: Vec<T>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("distribution has no prompt models".into()));
        }
        if models.len() != weights.len() {
            return Err(Error::Config(format!(
                "distribution has {} models but {} weights",
                models.len(),
                weights.len()
            )));
        }
        check_probability_vector("distribution weights", &weights)?;
        let models = models
            .iter()
            .enumerate()
            .map(|(k, model)| model.with_id(k))
            .collect();
        Ok(Self { models, weights })
    }

    pub fn uniform(models: Vec<PromptModel<T>>) -> Result<Self> {
        let w = T::one() / T::of_usize(models.len().max(1));
        let weights = vec![w; models.len()];
        Self::new(models, weights)
    }

    pub fn from_doc(doc: &DistributionDoc) -> Result<Self> {
        let models = doc
            .models
            .iter()
            .enumerate()
            .map(|(k, m)| {
                PromptModel::new(
                    k,
                    m.support.iter().map(|&x| T::of(x)).collect(),
                    m.probs.iter().map(|&x| T::of(x)).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(models, doc.weights.iter().map(|&x| T::of(x)).collect())
    }

    pub fn to_doc(&self) -> DistributionDoc {
        DistributionDoc {
            models: self
                .models
                .iter()
                .map(|m| ModelDoc {
                    support: m.support.iter().map(|x| x.as_f64()).collect(),
                    probs: m.probs.iter().map(|x| x.as_f64()).collect(),
                })
                .collect(),
            weights: self.weights.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DistributionDoc = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("distribution JSON: {e}")))?;
        Self::from_doc(&doc)
    }

    pub fn models(&self) -> &[PromptModel<T>] {
        &self.models
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Draws one model index by weight.
    pub fn sample_index(&self, stream: &mut Stream) -> usize {
        stream.categorical(&self.weights)
    }

    pub fn population_stats(&self, m: usize) -> Result<PopulationStats<T>> {
        if m < 2 {
            return Err(Error::InvalidRolloutCount { needed: 2, got: m });
        }
        let k = self.models.len();
        let means: Vec<T> = self.models.iter().map(PromptModel::mean).collect();
        let variances: Vec<T> = self.models.iter().map(PromptModel::variance).collect();
        let mean_value = pairwise_sum_by(k, |i| self.weights[i] * means[i]);
        let mean_variance = pairwise_sum_by(k, |i| self.weights[i] * variances[i]);
        let s2 = pairwise_sum_by(k, |i| {
            let d = means[i] - mean_value;
            self.weights[i] * d * d
        });
        Ok(PopulationStats {
            v2: mean_variance / T::of_usize(m - 1),
            s2,
            mean_value,
            mean_variance,
        })
    }

    /// Highest reward reachable by a policy that always picks each prompt's best response.
    pub fn max_expected_reward(&self) -> T {
        pairwise_sum_by(self.models.len(), |i| {
            let best = self.models[i]
                .support
                .iter()
                .copied()
                .fold(T::neg_infinity(), T::max);
            self.weights[i] * best
        })
    }
}

/// Per-prompt logits over that prompt's responses, with the reward of each response.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy<T> {
    logits: Vec<Vec<T>>,
    reward_table: Vec<Vec<T>>,
    offsets: Vec<usize>,
}

impl<T: Scalar> TabularPolicy<T> {
    /// Logits may be `-inf` (a response that is never produced) but not NaN or `+inf`.
    pub fn new(logits: Vec<Vec<T>>, reward_table: Vec<Vec<T>>) -> Result<Self> {
        if logits.is_empty() || logits.len() != reward_table.len() {
            return Err(Error::Config(format!(
                "policy needs matching nonempty logits/rewards, got {} and {}",
                logits.len(),
                reward_table.len()
            )));
        }
        let mut offsets = Vec::with_capacity(logits.len() + 1);
        let mut total = 0;
        for (p, (l, r)) in logits.iter().zip(&reward_table).enumerate() {
            if l.is_empty() || l.len() != r.len() {
                return Err(Error::Config(format!(
                    "prompt {p}: {} logits for {} rewards",
                    l.len(),
                    r.len()
                )));
            }
            if l.iter().any(|x| x.is_nan() || *x == T::infinity()) {
                return Err(Error::Config(format!("prompt {p}: invalid logit")));
            }
            if l.iter().all(|x| *x == T::neg_infinity()) {
                return Err(Error::Config(format!("prompt {p}: every logit is -inf")));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("prompt {p}: non-finite reward")));
            }
            offsets.push(total);
            total += l.len();
        }
        offsets.push(total);
        Ok(Self {
            logits,
            reward_table,
            offsets,
        })
    }

    /// Policy whose response law for prompt `k` reproduces model `k` of the distribution.
    pub fn from_distribution(dist: &PromptDistribution<T>) -> Result<Self> {
        Self::from_models(dist.models())
    }

    pub fn from_models(models: &[PromptModel<T>]) -> Result<Self> {
        let logits = models
            .iter()
            .map(|m| m.probs.iter().map(|p| p.ln()).collect())
            .collect();
        let rewards = models.iter().map(|m| m.support.clone()).collect();
        Self::new(logits, rewards)
    }

    /// Zero logits: uniform over each prompt's responses.
    pub fn uniform(reward_table: Vec<Vec<T>>) -> Result<Self> {
        let logits = reward_table
            .iter()
            .map(|r| vec![T::zero(); r.len()])
            .collect();
        Self::new(logits, reward_table)
    }

    pub fn num_prompts(&self) -> usize {
        self.logits.len()
    }

    pub fn num_responses(&self, prompt: usize) -> Result<usize> {
        self.check_prompt(prompt)?;
        Ok(self.logits[prompt].len())
    }

    /// Dimension of the flattened parameter vector.
    pub fn param_count(&self) -> usize {
        self.offsets[self.logits.len()]
    }

    /// Start of `prompt`'s block in the flattened parameter vector.
    pub fn offset(&self, prompt: usize) -> usize {
        self.offsets[prompt]
    }

    pub fn logits(&self, prompt: usize) -> &[T] {
        &self.logits[prompt]
    }

    pub fn rewards(&self, prompt: usize) -> &[T] {
        &self.reward_table[prompt]
    }

    pub fn reward(&self, prompt: usize, response: usize) -> Result<T> {
        self.check_response(prompt, response)?;
        Ok(self.reward_table[prompt][response])
    }

    pub fn params(&self) -> Vec<T> {
        self.logits.concat()
    }

    pub fn set_params(&mut self, theta: &[T]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::InvalidShape(format!(
                "parameter vector has {} entries, policy has {}",
                theta.len(),
                self.param_count()
            )));
        }
        for (p, block) in self.logits.iter_mut().enumerate() {
            let start = self.offsets[p];
            let len = block.len();
            block.copy_from_slice(&theta[start..start + len]);
        }
        Ok(())
    }

    /// `theta += step * direction`.
    pub fn ascend(&mut self, direction: &[T], step: T) -> Result<()> {
        let mut theta = self.params();
        if direction.len() != theta.len() {
            return Err(Error::InvalidShape(format!(
                "direction has {} entries, policy has {}",
                direction.len(),
                theta.len()
            )));
        }
        for (t, d) in theta.iter_mut().zip(direction) {
            *t += step * *d;
        }
        self.set_params(&theta)
    }

    /// Softmax response probabilities for `prompt`.
    pub fn probs(&self, prompt: usize) -> Vec<T> {
        softmax(&self.logits[prompt])
    }

    pub fn expected_reward(&self, prompt: usize) -> T {
        let probs = self.probs(prompt);
        let rewards = &self.reward_table[prompt];
        pairwise_sum_by(probs.len(), |k| probs[k] * rewards[k])
    }

    /// `J` restricted to the listed prompts, each weighted equally.
    pub fn objective(&self, prompts: &[usize]) -> Result<T> {
        for &p in prompts {
            self.check_prompt(p)?;
        }
        Ok(shifted_mean(
            &prompts
                .iter()
                .map(|&p| self.expected_reward(p))
                .collect::<Vec<_>>(),
        ))
    }

    /// `J` with prompt `k` drawn with probability `weights[k]`.
    pub fn population_objective(&self, weights: &[T]) -> Result<T> {
        self.check_weights(weights)?;
        Ok(pairwise_sum_by(weights.len(), |k| {
            weights[k] * self.expected_reward(k)
        }))
    }

    /// Score of one response: `e_y - pi(.|x)` on the prompt's block, zero elsewhere.
    pub fn score_vector(&self, prompt: usize, response: usize) -> Result<Vec<T>> {
        self.check_response(prompt, response)?;
        let mut out = vec![T::zero(); self.param_count()];
        self.add_scaled_score(&mut out, prompt, response, T::one(), &self.probs(prompt));
        Ok(out)
    }

    /// `out += scale * score(prompt, response)` given precomputed `probs` of the prompt.
    pub(crate) fn add_scaled_score(
        &self,
        out: &mut [T],
        prompt: usize,
        response: usize,
        scale: T,
        probs: &[T],
    ) {
        let start = self.offsets[prompt];
        for (k, p) in probs.iter().enumerate() {
            let indicator = if k == response { T::one() } else { T::zero() };
            out[start + k] += scale * (indicator - *p);
        }
    }

    /// Exact `grad J` over the listed prompts, each weighted equally.
    pub fn exact_gradient(&self, prompts: &[usize]) -> Result<Vec<T>> {
        if prompts.is_empty() {
            return Err(Error::InvalidBatchSize { needed: 1, got: 0 });
        }
        for &p in prompts {
            self.check_prompt(p)?;
        }
        let mut counts = vec![0usize; self.num_prompts()];
        for &p in prompts {
            counts[p] += 1;
        }
        let weights: Vec<T> = counts
            .iter()
            .map(|&c| T::of_usize(c) / T::of_usize(prompts.len()))
            .collect();
        Ok(self.weighted_gradient(&weights))
    }

    /// Exact `grad J` with prompt `k` drawn with probability `weights[k]`.
    pub fn population_gradient(&self, weights: &[T]) -> Result<Vec<T>> {
        self.check_weights(weights)?;
        Ok(self.weighted_gradient(weights))
    }

    fn weighted_gradient(&self, weights: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.param_count()];
        for (p, &w) in weights.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            let probs = self.probs(p);
            let rewards = &self.reward_table[p];
            let mu = pairwise_sum_by(probs.len(), |k| probs[k] * rewards[k]);
            // sum_y pi(y) r(y) (e_y - pi) = pi * (r - mu)
            let start = self.offsets[p];
            for k in 0..probs.len() {
                out[start + k] += w * probs[k] * (rewards[k] - mu);
            }
        }
        out
    }

    /// Highest-probability response, ties to the lowest index.
    pub fn greedy_response(&self, prompt: usize) -> Result<usize> {
        self.check_prompt(prompt)?;
        let logits = &self.logits[prompt];
        let mut best = 0;
        for (k, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = k;
            }
        }
        Ok(best)
    }

    /// The reward law the policy induces on `prompt`.
    pub fn prompt_model(&self, prompt: usize) -> Result<PromptModel<T>> {
        self.check_prompt(prompt)?;
        Ok(PromptModel {
            prompt_id: prompt,
            support: self.reward_table[prompt].clone(),
            probs: self.probs(prompt),
        })
    }

    fn check_prompt(&self, prompt: usize) -> Result<()> {
        if prompt >= self.num_prompts() {
            return Err(Error::IndexOutOfRange {
                what: "prompt",
                index: prompt,
                len: self.num_prompts(),
            });
        }
        Ok(())
    }

    fn check_response(&self, prompt: usize, response: usize) -> Result<()> {
        self.check_prompt(prompt)?;
        let len = self.logits[prompt].len();
        if response >= len {
            return Err(Error::IndexOutOfRange {
                what: "response",
                index: response,
                len,
            });
        }
        Ok(())
    }

    fn check_weights(&self, weights: &[T]) -> Result<()> {
        if weights.len() != self.num_prompts() {
            return Err(Error::InvalidShape(format!(
                "{} weights for {} prompts",
                weights.len(),
                self.num_prompts()
            )));
        }
        Ok(())
    }
}

pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total = pairwise_sum_by(exps.len(), |k| exps[k]);
    exps.into_iter().map(|e| e / total).collect()
}

/// One RL step's rewards: row `i` holds the `m` rewards observed for prompt `prompt_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBatch<T> {
    prompt_ids: Vec<usize>,
    rewards: Matrix<T>,
    response_ids: Option<Vec<usize>>,
}

impl<T: Scalar> RewardBatch<T> {
    pub fn new(prompt_ids: Vec<usize>, rewards: Matrix<T>) -> Result<Self> {
        let (n, m) = rewards.shape();
        if n == 0 {
            return Err(Error::InvalidBatchSize { needed: 1, got: 0 });
        }
        if m == 0 {
            return Err(Error::InvalidRolloutCount { needed: 1, got: 0 });
        }
        if prompt_ids.len() != n {
            return Err(Error::InvalidShape(format!(
                "{} prompt ids for {n} reward rows",
                prompt_ids.len()
            )));
        }
        Ok(Self {
            prompt_ids,
            rewards,
            response_ids: None,
        })
    }

    /// Rows of rewards with prompt ids `0..n`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let rewards = Matrix::from_rows(rows)
            .ok_or_else(|| Error::InvalidShape("ragged reward rows".into()))?;
        Self::new((0..rows.len()).collect(), rewards)
    }

    /// Attaches response indices (row-major, `n * m`).
    pub fn with_responses(mut self, response_ids: Vec<usize>) -> Result<Self> {
        if response_ids.len() != self.n() * self.m() {
            return Err(Error::InvalidShape(format!(
                "{} response ids for a {}x{} batch",
                response_ids.len(),
                self.n(),
                self.m()
            )));
        }
        self.response_ids = Some(response_ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.rewards.rows()
    }

    pub fn m(&self) -> usize {
        self.rewards.cols()
    }

    pub fn rewards(&self) -> &Matrix<T> {
        &self.rewards
    }

    pub fn reward(&self, i: usize, j: usize) -> T {
        self.rewards[(i, j)]
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.rewards.row(i)
    }

    pub fn prompt_ids(&self) -> &[usize] {
        &self.prompt_ids
    }

    pub fn has_responses(&self) -> bool {
        self.response_ids.is_some()
    }

    pub fn response(&self, i: usize, j: usize) -> Option<usize> {
        self.response_ids.as_ref().map(|r| r[i * self.m() + j])
    }

    /// Copy with entry `(i, j)` replaced.
    pub fn with_reward(&self, i: usize, j: usize, value: T) -> Self {
        let mut out = self.clone();
        out.rewards[(i, j)] = value;
        out
    }

    /// Checks every response id lies in its prompt's support under `policy`
    /// and that the recorded reward matches the policy's reward table.
    pub fn check_against(&self, policy: &TabularPolicy<T>) -> Result<()> {
        if !self.has_responses() {
            return Err(Error::InvalidShape("batch carries no response ids".into()));
        }
        for i in 0..self.n() {
            let p = self.prompt_ids[i];
            for j in 0..self.m() {
                let y = self.response(i, j).unwrap_or_default();
                let r = policy.reward(p, y)?;
                if r != self.reward(i, j) {
                    return Err(Error::InvalidShape(format!(
                        "reward ({i},{j}) = {} but response {y} of prompt {p} pays {r}",
                        self.reward(i, j)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draws `n` prompt models independently by weight.
pub fn sample_prompts<T: Scalar>(
    dist: &PromptDistribution<T>,
    n: usize,
    stream: &mut Stream,
) -> Result<Vec<PromptModel<T>>> {
    if dist.is_empty() {
        return Err(Error::Config("distribution has no prompt models".into()));
    }
    if n == 0 {
        return Err(Error::InvalidBatchSize { needed: 1, got: 0 });
    }
    Ok((0..n)
        .map(|_| dist.models[dist.sample_index(stream)].clone())
        .collect())
}

/// Draws `n` model indices by weight.
pub fn sample_prompt_ids<T: Scalar>(
    dist: &PromptDistribution<T>,
    n: usize,
    stream: &mut Stream,
) -> Result<Vec<usize>> {
    Ok(sample_prompts(dist, n, stream)?
        .iter()
        .map(PromptModel::prompt_id)
        .collect())
}

/// Draws `m` i.i.d. rewards per prompt. Row `i` uses stream `key.with_prompt(i)`.
pub fn sample_rewards<T: Scalar>(
    prompts: &[PromptModel<T>],
    m: usize,
    key: StreamKey,
) -> Result<RewardBatch<T>> {
    if m == 0 {
        return Err(Error::InvalidRolloutCount { needed: 1, got: 0 });
    }
    let n = prompts.len();
    let mut responses = Vec::with_capacity(n * m);
    let mut rewards = Matrix::zeros(n, m);
    for (i, model) in prompts.iter().enumerate() {
        let mut stream = key.with_prompt(i as u64).stream();
        for j in 0..m {
            let y = stream.categorical(&model.probs);
            responses.push(y);
            rewards[(i, j)] = model.support[y];
        }
    }
    RewardBatch::new(
        prompts.iter().map(PromptModel::prompt_id).collect(),
        rewards,
    )?
    .with_responses(responses)
}

/// Samples `m` responses per listed prompt from the policy itself.
pub fn sample_responses<T: Scalar>(
    policy: &TabularPolicy<T>,
    prompt_ids: &[usize],
    m: usize,
    key: StreamKey,
) -> Result<RewardBatch<T>> {
    let models = prompt_ids
        .iter()
        .map(|&p| policy.prompt_model(p))
        .collect::<Result<Vec<_>>>()?;
    sample_rewards(&models, m, key)
}

/// Exact value statistics of a fixed list of prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueStats<T> {
    /// `(1/(n m)) sum sigma_i^2`.
    pub v: T,
    /// `(1/(n-1)) sum (mu_i - mu_bar)^2`; zero when `n == 1`.
    pub s: T,
    /// `(1/n) sum sigma_i^2 / (m - 1)`.
    pub v2: T,
    /// `(1/n) sum (mu_i - mu_bar)^2`, the list treated as a uniform population.
    pub s2: T,
    pub means: Vec<T>,
    pub variances: Vec<T>,
}

/// Computes value statistics from model parameters, not samples.
pub fn true_value_stats<T: Scalar>(prompts: &[PromptModel<T>], m: usize) -> Result<ValueStats<T>> {
    if prompts.is_empty() {
        return Err(Error::InvalidBatchSize { needed: 1, got: 0 });
    }
    if m < 2 {
        return Err(Error::InvalidRolloutCount { needed: 2, got: m });
    }
    let n = prompts.len();
    let means: Vec<T> = prompts.iter().map(PromptModel::mean).collect();
    let variances: Vec<T> = prompts.iter().map(PromptModel::variance).collect();
    let mean_variance = shifted_mean(&variances);
    let mu_bar = shifted_mean(&means);
    let dispersion = pairwise_sum_by(n, |i| {
        let d = means[i] - mu_bar;
        d * d
    });
    let s = if n > 1 {
        dispersion / T::of_usize(n - 1)
    } else {
        T::zero()
    };
    Ok(ValueStats {
        v: mean_variance / T::of_usize(m),
        s,
        v2: mean_variance / T::of_usize(m - 1),
        s2: dispersion / T::of_usize(n),
        means,
        variances,
    })
}
