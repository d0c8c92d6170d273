#![allow(dead_code)]

use steinrl_core::env::{PromptDistribution, PromptModel, TabularPolicy};
use steinrl_core::rng::{Purpose, Stream, StreamKey};

/// Random small world: `n` two-response prompts with rewards in [0, 1] and logits in [-2, 2].
pub struct SmallEnv {
    pub policy: TabularPolicy<f64>,
    pub prompts: Vec<usize>,
    pub m: usize,
}

impl SmallEnv {
    pub fn models(&self) -> Vec<PromptModel<f64>> {
        self.prompts
            .iter()
            .map(|&p| self.policy.prompt_model(p).unwrap())
            .collect()
    }
}

fn uniform(stream: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * stream.next_f64()
}

pub fn small_env(seed: u64, index: u64) -> SmallEnv {
    let mut s = StreamKey::new(seed, Purpose::EnvSynthesis, index).stream();
    let n = 2 + s.below(2);
    let m = 2 + s.below(2);
    let logits = (0..n)
        .map(|_| vec![uniform(&mut s, -2.0, 2.0), uniform(&mut s, -2.0, 2.0)])
        .collect();
    let rewards = (0..n)
        .map(|_| vec![uniform(&mut s, 0.0, 1.0), uniform(&mut s, 0.0, 1.0)])
        .collect();
    SmallEnv {
        policy: TabularPolicy::new(logits, rewards).unwrap(),
        prompts: (0..n).collect(),
        m,
    }
}

/// Random finite mixture of up to three two-point reward laws.
pub fn small_mixture(seed: u64, index: u64) -> PromptDistribution<f64> {
    let mut s = StreamKey::new(seed, Purpose::EnvSynthesis, 1000 + index).stream();
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
    let head: f64 = weights[..count - 1].iter().sum();
    weights[count - 1] = 1.0 - head;
    PromptDistribution::new(models, weights).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
