//! Experiment configuration files.
//!
//! A config is a JSON object whose field names are the ones below. The prompt
//! distribution may be given inline or as a path relative to the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use steinrl_core::env::{DistributionDoc, PromptDistribution};
use steinrl_core::estimators::{EstimatorId, LambdaMode};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    MseSweep,
    GradVariance,
    LambdaCurve,
    OracleCheck,
    ToyTrain,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::MseSweep,
        Scenario::GradVariance,
        Scenario::LambdaCurve,
        Scenario::OracleCheck,
        Scenario::ToyTrain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::MseSweep => "mse_sweep",
            Scenario::GradVariance => "grad_variance",
            Scenario::LambdaCurve => "lambda_curve",
            Scenario::OracleCheck => "oracle_check",
            Scenario::ToyTrain => "toy_train",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(HarnessError::field(
                "format",
                format!("expected `csv` or `json`, got `{other}`"),
            )),
        }
    }
}

/// How `js2` picks its shrinkage coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSetting {
    /// Plug-in statistics from the batch.
    #[default]
    Paper,
    /// Plug-in statistics with the noise corrections.
    Debiased,
    /// The exact MSE-optimal coefficient from the true distribution.
    Oracle,
}

impl LambdaSetting {
    pub fn plug_in(self) -> Option<LambdaMode> {
        match self {
            LambdaSetting::Paper => Some(LambdaMode::Paper),
            LambdaSetting::Debiased => Some(LambdaMode::Debiased),
            LambdaSetting::Oracle => None,
        }
    }
}

/// One rollout count or a list for sweeps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rollouts {
    One(usize),
    Many(Vec<usize>),
}

impl Rollouts {
    pub fn values(&self) -> Vec<usize> {
        match self {
            Rollouts::One(m) => vec![*m],
            Rollouts::Many(ms) => ms.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionSource {
    Inline(DistributionDoc),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Prompts per batch.
    pub n: usize,
    pub m: Rollouts,
    pub estimators: Vec<EstimatorId>,
    pub distribution: DistributionSource,
    pub replications: usize,
    #[serde(default)]
    pub lambda_mode: LambdaSetting,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    /// Step size for `toy_train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Gradient steps per run for `toy_train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Micro-batches per group for the `grad_variance` micro-batch meter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub microbatches: Option<usize>,
    /// Fixed coefficient for `js1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub js1_lambda: Option<f64>,
    /// Denominator guard for `grpo`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grpo_epsilon: Option<f64>,
}

pub const DEFAULT_MICROBATCHES: usize = 8;
pub const DEFAULT_JS1_LAMBDA: f64 = 0.5;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config and inlines a distribution given by path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.inline_distribution(base)?;
        Ok(config)
    }

    pub fn inline_distribution(&mut self, base: &Path) -> Result<()> {
        if let DistributionSource::Path(rel) = &self.distribution {
            let full = base.join(rel);
            let doc: DistributionDoc = serde_json::from_str(&read(&full)?).map_err(|e| {
                HarnessError::field("distribution", format!("{}: {e}", full.display()))
            })?;
            self.distribution = DistributionSource::Inline(doc);
        }
        Ok(())
    }

    pub fn distribution(&self) -> Result<PromptDistribution<f64>> {
        match &self.distribution {
            DistributionSource::Inline(doc) => PromptDistribution::from_doc(doc)
                .map_err(|e| HarnessError::field("distribution", e.to_string())),
            DistributionSource::Path(p) => Err(HarnessError::field(
                "distribution",
                format!("{} has not been loaded", p.display()),
            )),
        }
    }

    pub fn rollouts(&self) -> Vec<usize> {
        self.m.values()
    }

    pub fn microbatches(&self) -> usize {
        self.microbatches.unwrap_or(DEFAULT_MICROBATCHES)
    }

    /// Field-level checks shared by every scenario.
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(HarnessError::field("replications", "must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(HarnessError::field("estimators", "must not be empty"));
        }
        if self.n < 2 {
            return Err(HarnessError::field("n", "batches need at least 2 prompts"));
        }
        let ms = self.rollouts();
        if ms.is_empty() {
            return Err(HarnessError::field("m", "must not be empty"));
        }
        if let Some(m) = ms.iter().find(|&&m| m < 2) {
            return Err(HarnessError::field(
                "m",
                format!("{m} rollouts; at least 2 are needed"),
            ));
        }
        self.distribution()?;
        if let Some(lr) = self.learning_rate {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(HarnessError::field(
                    "learning_rate",
                    "must be finite and nonnegative",
                ));
            }
        }
        if let Some(l) = self.js1_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(HarnessError::field("js1_lambda", "must lie in [0, 1]"));
            }
        }
        if let Some(e) = self.grpo_epsilon {
            if !(e.is_finite() && e >= 0.0) {
                return Err(HarnessError::field(
                    "grpo_epsilon",
                    "must be finite and nonnegative",
                ));
            }
        }
        if self.microbatches() < 2 {
            return Err(HarnessError::field("microbatches", "must be at least 2"));
        }
        match self.scenario {
            Scenario::MseSweep => {
                if self.estimators.contains(&EstimatorId::Grpo) {
                    return Err(HarnessError::field(
                        "estimators",
                        "grpo rescales advantages and has no baseline; use grpo_nostd",
                    ));
                }
            }
            Scenario::GradVariance => {
                if self.replications < 2 {
                    return Err(HarnessError::field(
                        "replications",
                        "at least 2 are needed for a variance",
                    ));
                }
            }
            Scenario::ToyTrain => {
                if self.learning_rate.is_none() {
                    return Err(HarnessError::field(
                        "learning_rate",
                        "required by toy_train",
                    ));
                }
                if self.steps.is_none() {
                    return Err(HarnessError::field("steps", "required by toy_train"));
                }
            }
            Scenario::LambdaCurve | Scenario::OracleCheck => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of everything that determines report content.
    ///
    /// `output` and `format` only control where and how rows are written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        canonical.format = Format::default();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}
