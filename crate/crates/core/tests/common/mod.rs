#![allow(dead_code)]

use airfl::model::InitScheme;
use airfl::{DataMode, DatasetSource, EnergyBudget, ExperimentConfig, GammaSchedule, ModelSpec, Policy};

/// A seconds-scale synthetic setup: 4 workers, 6 rounds, a 6-8-2 MLP.
pub fn toy_config() -> ExperimentConfig {
    ExperimentConfig {
        num_workers: 4,
        num_shards: None,
        num_subchannels: 3,
        num_rounds: 6,
        redundancy: 2,
        power_scalar: 1.0,
        energy_budget: EnergyBudget::Shared(1.0),
        weight: 10.0,
        queue_floor: 0.0,
        learning_rate: 0.1,
        gamma_schedule: GammaSchedule::standard(),
        policy: Policy::Dynamic,
        data_mode: DataMode::NonIidByLabel,
        noise_enabled: true,
        master_seed: 17,
        model_spec: ModelSpec {
            layer_sizes: vec![6, 8, 2],
            dropout_p: 0.5,
            momentum: 0.5,
            init: InitScheme::Glorot,
        },
        dataset: DatasetSource::Synthetic {
            train_samples: 80,
            test_samples: 40,
            feature_dim: 6,
            separation: 1.0,
        },
        shard_size: None,
        eval_stride: 1,
    }
}
