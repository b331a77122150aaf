//! Randomized small instances for checking the dynamic policy's bounds.
//!
//! Each instance is a full (tiny) training run on synthetic data: real
//! gradients, real fading channels, so the energy traces have the same
//! structure as a large run. The per-round budget is set from a pilot
//! always-on run so that it actually binds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EnergyBudget, ExperimentConfig};
use crate::datasets::{DataMode, DatasetSource};
use crate::error::Result;
use crate::model::{InitScheme, ModelSpec};
use crate::oracle::{bound_report, drift_trace, worker_traces, BoundReport, DriftReport, WorkerTrace};
use crate::orchestrator::{run_experiment_with, Datasets};
use crate::rng::{derive_stream, StreamTag};
use crate::scheduler::{GammaSchedule, Policy};

pub const DEFAULT_WEIGHTS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

/// Shape of one randomized instance before the budget is fixed.
pub fn instance_config(seed: u64, index: usize) -> ExperimentConfig {
    let mut s = derive_stream(seed, StreamTag::Instance, None, Some(index));
    let workers = s.random_range(1..=3usize);
    let rounds = s.random_range(4..=16usize);
    let subchannels = s.random_range(1..=4usize);
    let shard = s.random_range(8..=24usize);
    let redundancy = s.random_range(1..=workers);
    let feature_dim = 6;
    ExperimentConfig {
        num_workers: workers,
        num_shards: None,
        num_subchannels: subchannels,
        num_rounds: rounds,
        redundancy,
        power_scalar: s.random_range(0.5..2.0),
        energy_budget: EnergyBudget::Shared(1.0),
        weight: 1.0,
        queue_floor: 0.0,
        learning_rate: 0.2,
        gamma_schedule: GammaSchedule::standard(),
        policy: Policy::Dynamic,
        data_mode: if s.random_bool(0.5) { DataMode::Iid } else { DataMode::NonIidByLabel },
        noise_enabled: true,
        master_seed: s.random(),
        model_spec: ModelSpec {
            layer_sizes: vec![feature_dim, 5, 2],
            dropout_p: 0.5,
            momentum: 0.5,
            init: InitScheme::Glorot,
        },
        dataset: DatasetSource::Synthetic {
            train_samples: workers * shard,
            test_samples: 32,
            feature_dim,
            separation: 1.0,
        },
        shard_size: Some(shard),
        eval_stride: rounds,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub instance: usize,
    pub weight: f64,
    pub num_workers: usize,
    pub num_rounds: usize,
    pub budget: f64,
    pub report: BoundReport,
    pub drift: DriftReport,
    pub traces: Vec<WorkerTrace>,
    pub schedules: Vec<Vec<bool>>,
}

impl InstanceOutcome {
    pub fn passed(&self) -> bool {
        self.report.all_satisfied() && self.drift.holds()
    }
}

/// Runs instance `index` for every weight in `weights`.
pub fn verify_instance(seed: u64, index: usize, weights: &[f64]) -> Result<Vec<InstanceOutcome>> {
    let mut cfg = instance_config(seed, index);
    let mut pilot_cfg = cfg.clone();
    pilot_cfg.policy = Policy::AlwaysOn;
    let pilot_cfg = pilot_cfg.validate()?;
    let data = Datasets::load(&pilot_cfg)?;
    let pilot = run_experiment_with(&pilot_cfg, &data, 1)?;
    let energies: Vec<f64> = pilot.records.iter().flat_map(|r| r.energies.iter().copied()).collect();
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let mut s = derive_stream(seed, StreamTag::Instance, Some(1), Some(index));
    let budget = mean * s.random_range(0.2..1.2);
    cfg.energy_budget = EnergyBudget::Shared(budget);

    weights
        .iter()
        .map(|&weight| {
            let mut c = cfg.clone();
            c.weight = weight;
            let c = c.validate()?;
            let result = run_experiment_with(&c, &data, 1)?;
            let traces = worker_traces(&result);
            let schedules = result.schedules();
            Ok(InstanceOutcome {
                instance: index,
                weight,
                num_workers: c.num_workers,
                num_rounds: c.num_rounds,
                budget,
                report: bound_report(&traces, &schedules, weight)?,
                drift: drift_trace(&result)?,
                traces,
                schedules,
            })
        })
        .collect()
}

/// `instances × weights.len()` outcomes, instance-major.
pub fn verify_bounds(instances: usize, seed: u64, weights: &[f64]) -> Result<Vec<InstanceOutcome>> {
    let mut out = Vec::with_capacity(instances * weights.len());
    for i in 0..instances {
        out.extend(verify_instance(seed, i, weights)?);
    }
    Ok(out)
}
