//! Federated learning over a fading multiple-access channel with analog
//! (over-the-air) gradient aggregation, per-worker long-term energy budgets,
//! and redundant cyclic data placement.
//!
//! Each round every worker computes a local minibatch gradient, the channel
//! draws fresh Rayleigh gains per subchannel, and a scheduling policy decides
//! who transmits. Scheduled workers invert their channel so their segments
//! add up coherently at the parameter server, which rescales the received
//! superposition and takes a momentum step.
//!
//! The crate is organised bottom-up:
//!
//! * [`rng`]: per-purpose reproducible random streams.
//! * [`datasets`]: MNIST loading, sharding, cyclic assignment, minibatches.
//! * [`model`]: the MLP, its gradient, and evaluation.
//! * [`channel`]: fading, truncated inversion energy, and the analog sum.
//! * [`scheduler`]: always-on, myopic and queue-based dynamic policies.
//! * [`orchestrator`]: the round loop.
//! * [`oracle`]: the offline optimum and the long-horizon bound checks.
//! * [`verify`]: randomized instances for those checks.
//! * [`cli`]: file formats and the `airfl` commands.
//!
//! ```no_run
//! use airfl::{run_experiment, ExperimentConfig};
//!
//! let cfg = ExperimentConfig::mnist_defaults().validate()?;
//! let result = run_experiment(&cfg, 0)?;
//! println!("accuracy {:?}", result.final_accuracy());
//! # Ok::<(), airfl::Error>(())
//! ```

pub mod channel;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod model;
pub mod oracle;
pub mod orchestrator;
pub mod rng;
pub mod scheduler;
pub mod verify;

pub use config::{EnergyBudget, ExperimentConfig, ValidatedConfig};
pub use datasets::{DataMode, DatasetSource, LabeledDataset};
pub use error::{Error, Result};
pub use model::{ModelSpec, ParamVector};
pub use orchestrator::{run_experiment, run_experiment_with, Datasets, ExperimentResult, RoundRecord, Simulation};
pub use scheduler::{GammaSchedule, GammaSegment, Policy};

/// Guide chapters, compiled as doctests so their examples stay current.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/library.md")]
    mod library {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    mod scheduling {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/outputs.md")]
    mod outputs {}
}
