//! Critic-free policy-gradient baselines for verifiable-reward RL.
//!
//! The crate covers a synthetic world with known value functions ([`env`]),
//! every prompt- and batch-level baseline including the leave-one-out
//! James-Stein shrinkage baseline ([`estimators`]), policy-gradient estimation
//! with two trace-variance meters ([`gradient`]), and exact enumeration oracles
//! ([`oracle`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The `F64`
//! aliases below are what the harness uses.

pub mod env;
pub mod error;
pub mod estimators;
pub mod gradient;
pub mod numeric;
pub mod oracle;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PromptModelF64 = env::PromptModel<f64>;
pub type PromptDistributionF64 = env::PromptDistribution<f64>;
pub type TabularPolicyF64 = env::TabularPolicy<f64>;
pub type RewardBatchF64 = env::RewardBatch<f64>;
pub type BaselineMatrixF64 = estimators::BaselineMatrix<f64>;
pub type EstimatorF64 = estimators::Estimator<f64>;
pub type ShrinkageDiagnosticsF64 = estimators::ShrinkageDiagnostics<f64>;
pub type GradientSampleF64 = gradient::GradientSample<f64>;
pub type VarianceReadingF64 = gradient::VarianceReading<f64>;
pub type QuadraticMseF64 = oracle::QuadraticMse<f64>;

pub type PromptModelF32 = env::PromptModel<f32>;
pub type PromptDistributionF32 = env::PromptDistribution<f32>;
pub type TabularPolicyF32 = env::TabularPolicy<f32>;
pub type RewardBatchF32 = env::RewardBatch<f32>;
pub type EstimatorF32 = estimators::Estimator<f32>;
