//! Experiment configuration and its validation.
//!
//! Configs are flat JSON objects whose keys are the snake_case field names
//! of [`ExperimentConfig`]; unknown keys are rejected.

use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{DataMode, DatasetSource};
use crate::error::{Error, FieldError, Result, ValidationErrors};
use crate::model::ModelSpec;
use crate::scheduler::{GammaSchedule, Policy};

/// Per-round energy budget: shared by all workers or given per worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnergyBudget {
    Shared(f64),
    PerWorker(Vec<f64>),
}

impl EnergyBudget {
    pub fn resolve(&self, workers: usize) -> Vec<f64> {
        match self {
            EnergyBudget::Shared(b) => vec![*b; workers],
            EnergyBudget::PerWorker(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_workers: usize,
    /// Defaults to `num_workers`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_shards: Option<usize>,
    pub num_subchannels: usize,
    pub num_rounds: usize,
    pub redundancy: usize,
    pub power_scalar: f64,
    /// Joules per round (energy and power are interchangeable at one round
    /// per time unit).
    pub energy_budget: EnergyBudget,
    /// Drift-plus-penalty weight `V`.
    pub weight: f64,
    pub queue_floor: f64,
    pub learning_rate: f64,
    pub gamma_schedule: GammaSchedule,
    pub policy: Policy,
    pub data_mode: DataMode,
    pub noise_enabled: bool,
    pub master_seed: u64,
    pub model_spec: ModelSpec,
    pub dataset: DatasetSource,
    /// Samples per shard; defaults to `⌊train_samples / num_shards⌋`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard_size: Option<usize>,
    /// Evaluate on the test set every this many rounds (and always on the
    /// last round).
    #[serde(default = "default_eval_stride")]
    pub eval_stride: usize,
}

fn default_eval_stride() -> usize {
    1
}

impl ExperimentConfig {
    /// MNIST setup: 50 workers, 100 sub-channels, 100 rounds, redundancy 2,
    /// σ = 1, Ē = 5 J, V = 1500, q_min = 0.3, η = 0.05, label-sorted shards,
    /// dynamic scheduling.
    pub fn mnist_defaults() -> Self {
        ExperimentConfig {
            num_workers: 50,
            num_shards: None,
            num_subchannels: 100,
            num_rounds: 100,
            redundancy: 2,
            power_scalar: 1.0,
            energy_budget: EnergyBudget::Shared(5.0),
            weight: 1500.0,
            queue_floor: 0.3,
            learning_rate: 0.05,
            gamma_schedule: GammaSchedule::standard(),
            policy: Policy::Dynamic,
            data_mode: DataMode::NonIidByLabel,
            noise_enabled: true,
            master_seed: 0,
            model_spec: ModelSpec::mnist(),
            dataset: DatasetSource::Mnist { dir: None },
            shard_size: None,
            eval_stride: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(self) -> std::result::Result<ValidatedConfig, ValidationErrors> {
        let mut errs = Vec::new();
        let mut err = |field: &'static str, msg: String| errs.push(FieldError::new(field, msg));

        let n = self.num_workers;
        let k = self.num_shards.unwrap_or(n);
        if n == 0 {
            err("num_workers", "must be positive".into());
        }
        if k == 0 {
            err("num_shards", "must be positive".into());
        } else if k != n {
            err("num_shards", format!("cyclic placement needs num_shards == num_workers ({k} != {n})"));
        }
        if self.num_rounds == 0 {
            err("num_rounds", "must be positive".into());
        }
        if self.redundancy == 0 || self.redundancy > k {
            err("redundancy", format!("redundancy out of range: {} not in [1, {k}]", self.redundancy));
        }
        let model_ok = match self.model_spec.check() {
            Ok(()) => true,
            Err(m) => {
                err("model_spec", m);
                false
            }
        };
        if self.num_subchannels == 0 {
            err("num_subchannels", "must be positive".into());
        } else if model_ok && self.num_subchannels > self.model_spec.num_params() {
            err(
                "num_subchannels",
                format!(
                    "{} sub-channels exceed the {} parameters",
                    self.num_subchannels,
                    self.model_spec.num_params()
                ),
            );
        }
        if !(self.power_scalar > 0.0 && self.power_scalar.is_finite()) {
            err("power_scalar", format!("must be positive, got {}", self.power_scalar));
        }
        match &self.energy_budget {
            EnergyBudget::Shared(b) if b.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) => err("energy_budget", format!("must be positive, got {b}")),
            EnergyBudget::PerWorker(v) if v.len() != n => {
                err("energy_budget", format!("{} budgets for {n} workers", v.len()))
            }
            EnergyBudget::PerWorker(v) if v.iter().any(|b| b.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) => {
                err("energy_budget", "every budget must be positive".into())
            }
            _ => {}
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            err("weight", format!("must be positive, got {}", self.weight));
        }
        if !(self.queue_floor >= 0.0 && self.queue_floor.is_finite()) {
            err("queue_floor", format!("must be non-negative, got {}", self.queue_floor));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            err("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if let Err(m) = self.gamma_schedule.check_horizon(self.num_rounds) {
            err("gamma_schedule", m);
        }
        if self.eval_stride == 0 {
            err("eval_stride", "must be positive".into());
        }
        if self.shard_size == Some(0) {
            err("shard_size", "must be positive".into());
        }
        match &self.dataset {
            DatasetSource::Mnist { .. } if model_ok => {
                if self.model_spec.input_dim() != 784 || self.model_spec.num_classes() != 10 {
                    err("model_spec", "MNIST needs 784 inputs and 10 outputs".into());
                }
            }
            DatasetSource::Synthetic {
                train_samples,
                feature_dim,
                ..
            } => {
                if model_ok && (self.model_spec.input_dim() != *feature_dim || self.model_spec.num_classes() != 2) {
                    err("model_spec", format!("synthetic data needs {feature_dim} inputs and 2 outputs"));
                }
                let d = self.shard_size.unwrap_or(train_samples.checked_div(k).unwrap_or(0));
                if k > 0 && (d == 0 || d * k > *train_samples) {
                    err("dataset", format!("{train_samples} samples cannot fill {k} shards of {d}"));
                }
            }
            _ => {}
        }

        if !errs.is_empty() {
            return Err(ValidationErrors(errs));
        }
        let budgets = self.energy_budget.resolve(n);
        Ok(ValidatedConfig {
            num_shards: k,
            budgets,
            inner: self,
        })
    }
}

/// A config whose invariants have been checked. Read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    inner: ExperimentConfig,
    num_shards: usize,
    budgets: Vec<f64>,
}

impl ValidatedConfig {
    pub fn num_shards(&self) -> usize {
        self.num_shards
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.inner
    }

    pub fn into_inner(self) -> ExperimentConfig {
        self.inner
    }
}

impl Deref for ValidatedConfig {
    type Target = ExperimentConfig;

    fn deref(&self) -> &ExperimentConfig {
        &self.inner
    }
}

pub fn validate(config: ExperimentConfig) -> std::result::Result<ValidatedConfig, ValidationErrors> {
    config.validate()
}
