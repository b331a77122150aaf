//! Round-by-round execution of energy-aware analog federated training.
//!
//! Each round:
//!
//! 1. every worker samples a fresh minibatch (a `1/r` fraction of its stored
//!    data) and computes its local gradient at the broadcast parameters;
//! 2. the round's channel is drawn and each worker's inversion energy is
//!    computed;
//! 3. the policy decides, using the queue values from *before* this round;
//! 4. the virtual queues advance (dynamic policy only);
//! 5. the scheduled gradients are superposed over the noisy channel;
//! 6. the server descales and takes a momentum step.
//!
//! A round in which nobody is scheduled skips 5–6 and leaves the parameters
//! and momentum untouched.
//!
//! All randomness comes from streams keyed by `(tag, worker, round)`, so the
//! result does not depend on the thread count and two policies run with the
//! same seed see identical channels, minibatches and dropout masks until
//! their parameters diverge.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel, mac_aggregate, ps_descale_update, segment, worker_energy, GradientSegments, SegmentLayout};
use crate::config::{ExperimentConfig, ValidatedConfig};
use crate::datasets::{cyclic_assign, load_mnist, make_shards, sample_minibatch, synthetic_blobs, DatasetSource, LabeledDataset, ShardAssignment};
use crate::error::{Error, Result};
use crate::model::{evaluate, init_params, local_gradient, ParamVector};
use crate::rng::{derive_stream, StreamTag};
use crate::scheduler::{decide_all, Policy, RoundContext, VirtualQueue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub gamma: f64,
    pub scheduled: Vec<bool>,
    /// Energy each worker would need this round, Joules.
    pub energies: Vec<f64>,
    /// Pre-decision queue values (the floor for non-dynamic policies).
    pub queues: Vec<f64>,
    pub scheduled_fraction: f64,
    /// Mean minibatch loss over all workers at the broadcast parameters.
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    /// Energy actually spent through this round, per worker.
    pub cumulative_energy: Vec<f64>,
    /// `‖g_n(t)‖²` per worker.
    pub gradient_power: Vec<f64>,
    pub update_skipped: bool,
}

impl RoundRecord {
    pub fn scheduled_count(&self) -> usize {
        self.scheduled.iter().filter(|&&b| b).count()
    }

    pub fn max_cumulative_energy(&self) -> f64 {
        self.cumulative_energy.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_gradient_power(&self) -> f64 {
        self.gradient_power.iter().sum::<f64>() / self.gradient_power.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
    pub final_params: ParamVector,
    /// q(T) per worker, after the last round's update.
    pub final_queues: Vec<f64>,
    pub wall_clock: Duration,
}

impl ExperimentResult {
    pub fn mean_scheduled_fraction(&self) -> f64 {
        self.records.iter().map(|r| r.scheduled_fraction).sum::<f64>() / self.records.len() as f64
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.test_accuracy)
    }

    pub fn total_energy(&self) -> Vec<f64> {
        self.records
            .last()
            .map(|r| r.cumulative_energy.clone())
            .unwrap_or_default()
    }

    /// Per-worker series of required energies, `energies[n][t]`.
    pub fn energy_traces(&self) -> Vec<Vec<f64>> {
        let n = self.config.num_workers;
        (0..n)
            .map(|w| self.records.iter().map(|r| r.energies[w]).collect())
            .collect()
    }

    /// Per-worker realized schedules, `schedules[n][t]`.
    pub fn schedules(&self) -> Vec<Vec<bool>> {
        let n = self.config.num_workers;
        (0..n)
            .map(|w| self.records.iter().map(|r| r.scheduled[w]).collect())
            .collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gamma).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl Datasets {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        match &config.dataset {
            src @ DatasetSource::Mnist { .. } => {
                let dir = src
                    .mnist_dir()
                    .ok_or_else(|| Error::DatasetNotFound(format!("${}", crate::datasets::DATA_DIR_ENV).into()))?;
                let (train, test) = load_mnist(&dir)?;
                Ok(Datasets { train, test })
            }
            DatasetSource::Synthetic {
                train_samples,
                test_samples,
                feature_dim,
                separation,
            } => {
                let mut s = derive_stream(config.master_seed, StreamTag::Synthetic, None, Some(0));
                let train = synthetic_blobs(*train_samples, *feature_dim, *separation, &mut s);
                let mut s = derive_stream(config.master_seed, StreamTag::Synthetic, None, Some(1));
                let test = synthetic_blobs(*test_samples, *feature_dim, *separation, &mut s);
                Ok(Datasets { train, test })
            }
        }
    }
}

struct WorkerOutput {
    segments: GradientSegments,
    energy: f64,
    loss: f64,
    power: f64,
}

/// Mutable training state: parameters, momentum, queues and energy ledger.
pub struct Simulation<'a> {
    config: &'a ValidatedConfig,
    data: &'a Datasets,
    assignment: ShardAssignment,
    layout: SegmentLayout,
    params: ParamVector,
    velocity: Vec<f64>,
    queues: Vec<VirtualQueue>,
    cumulative: Vec<f64>,
    pool: rayon::ThreadPool,
}

fn at_round(round: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { what } => Error::NonFiniteAtRound { what, round },
        other => other,
    }
}

impl<'a> Simulation<'a> {
    /// `threads == 0` lets rayon pick; the count never affects results.
    pub fn new(config: &'a ValidatedConfig, data: &'a Datasets, threads: usize) -> Result<Self> {
        let spec = &config.model_spec;
        if data.train.feature_dim() != spec.input_dim() {
            return Err(Error::Precondition(format!(
                "dataset has {} features, model expects {}",
                data.train.feature_dim(),
                spec.input_dim()
            )));
        }
        let k = config.num_shards();
        let shard_size = config.shard_size.unwrap_or(data.train.len() / k);
        let mut part = derive_stream(config.master_seed, StreamTag::Partition, None, None);
        let shards = make_shards(&data.train, k, shard_size, config.data_mode, &mut part)?;
        let worker_shards = cyclic_assign(k, config.num_workers, config.redundancy)?;
        let params = init_params(spec, &mut derive_stream(config.master_seed, StreamTag::Init, None, None));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
        Ok(Self {
            config,
            data,
            assignment: ShardAssignment { shards, worker_shards },
            layout: SegmentLayout::new(spec.num_params(), config.num_subchannels)?,
            velocity: vec![0.0; params.len()],
            params,
            queues: vec![VirtualQueue::new(config.queue_floor); config.num_workers],
            cumulative: vec![0.0; config.num_workers],
            pool,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) {
        assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    pub fn assignment(&self) -> &ShardAssignment {
        &self.assignment
    }

    pub fn queues(&self) -> Vec<f64> {
        self.queues.iter().map(VirtualQueue::value).collect()
    }

    fn worker_step(&self, n: usize, t: usize, gains: &[f64]) -> Result<WorkerOutput> {
        let cfg = self.config;
        let seed = cfg.master_seed;
        let mut sampling = derive_stream(seed, StreamTag::Sampling, Some(n), Some(t));
        let batch = sample_minibatch(
            &self.assignment.worker_shards[n],
            &self.assignment.shards,
            1.0 / cfg.redundancy as f64,
            &mut sampling,
        )?;
        let mut dropout = derive_stream(seed, StreamTag::Dropout, Some(n), Some(t));
        let local = local_gradient(&self.params, &self.data.train, &batch, &cfg.model_spec, Some(&mut dropout))?;
        let power = local.gradient.squared_norm();
        let segments = segment(local.gradient, cfg.num_subchannels)?;
        let energy = worker_energy(cfg.power_scalar, gains, &segments)?;
        Ok(WorkerOutput {
            segments,
            energy,
            loss: local.loss,
            power,
        })
    }

    pub fn run_round(&mut self, t: usize) -> Result<RoundRecord> {
        let cfg = self.config;
        let n_workers = cfg.num_workers;
        let gamma = cfg.gamma_schedule.gamma(t)?;
        let channel = draw_channel(
            cfg.num_subchannels,
            n_workers,
            &mut derive_stream(cfg.master_seed, StreamTag::Channel, None, Some(t)),
        );

        let this = &*self;
        let outputs: Vec<WorkerOutput> = self.pool.install(|| {
            (0..n_workers)
                .into_par_iter()
                .map(|n| this.worker_step(n, t, channel.worker_gains(n)))
                .collect::<Result<Vec<_>>>()
        })
        .map_err(at_round(t))?;

        let energies: Vec<f64> = outputs.iter().map(|o| o.energy).collect();
        let queues_before = self.queues();
        let ctx = RoundContext {
            policy: cfg.policy,
            gamma,
            weight: cfg.weight,
            budgets: cfg.budgets(),
        };
        let decisions = decide_all(&ctx, &queues_before, &energies);
        let scheduled: Vec<bool> = decisions.iter().map(|d| d.scheduled).collect();

        if cfg.policy == Policy::Dynamic {
            for ((q, &s), (&e, &b)) in self.queues.iter_mut().zip(&scheduled).zip(energies.iter().zip(cfg.budgets())) {
                q.update(s, e, b);
            }
        }
        for ((c, &s), &e) in self.cumulative.iter_mut().zip(&scheduled).zip(&energies) {
            if s {
                *c += e;
            }
        }

        let chosen: Vec<&GradientSegments> = outputs
            .iter()
            .zip(&scheduled)
            .filter(|(_, &s)| s)
            .map(|(o, _)| &o.segments)
            .collect();
        let update_skipped = chosen.is_empty();
        if !update_skipped {
            debug_assert!(chosen.iter().all(|s| s.layout() == self.layout));
            let mut noise = derive_stream(cfg.master_seed, StreamTag::Noise, None, Some(t));
            let y = mac_aggregate(&chosen, cfg.power_scalar, cfg.noise_enabled.then_some(&mut noise))?;
            ps_descale_update(
                &mut self.params,
                &y,
                cfg.power_scalar,
                chosen.len(),
                cfg.learning_rate,
                &mut self.velocity,
                cfg.model_spec.momentum,
            )?;
            if !self.params.is_finite() {
                return Err(Error::NonFiniteAtRound {
                    what: "parameters",
                    round: t,
                });
            }
        }

        let evaluate_now = t.is_multiple_of(cfg.eval_stride) || t + 1 == cfg.num_rounds;
        let eval = if evaluate_now {
            Some(evaluate(&self.params, &self.data.test, &cfg.model_spec).map_err(at_round(t))?)
        } else {
            None
        };

        Ok(RoundRecord {
            round: t,
            gamma,
            scheduled_fraction: scheduled.iter().filter(|&&s| s).count() as f64 / n_workers as f64,
            scheduled,
            energies,
            queues: queues_before,
            train_loss: outputs.iter().map(|o| o.loss).sum::<f64>() / n_workers as f64,
            test_accuracy: eval.map(|e| e.accuracy),
            test_loss: eval.map(|e| e.mean_loss),
            cumulative_energy: self.cumulative.clone(),
            gradient_power: outputs.iter().map(|o| o.power).collect(),
            update_skipped,
        })
    }

    pub fn run(mut self) -> Result<ExperimentResult> {
        let start = Instant::now();
        let mut records = Vec::with_capacity(self.config.num_rounds);
        for t in 0..self.config.num_rounds {
            records.push(self.run_round(t)?);
        }
        Ok(ExperimentResult {
            config: self.config.config().clone(),
            records,
            final_queues: self.queues(),
            final_params: self.params,
            wall_clock: start.elapsed(),
        })
    }
}

/// Loads the configured data and runs all rounds.
pub fn run_experiment(config: &ValidatedConfig, threads: usize) -> Result<ExperimentResult> {
    let data = Datasets::load(config)?;
    run_experiment_with(config, &data, threads)
}

/// Runs all rounds on already-loaded data.
pub fn run_experiment_with(config: &ValidatedConfig, data: &Datasets, threads: usize) -> Result<ExperimentResult> {
    Simulation::new(config, data, threads)?.run()
}
