//! Age-of-Information scheduling over stochastic channels with contextual
//! bandit channel selection.
//!
//! A slotted network of `M` sources shares `N` channels. Each slot a source
//! policy picks which sources transmit and a channel policy picks which
//! channels they use, observing only per-channel side information. The crate
//! simulates the linear contextual bandit family (LinUCB, LinTS and their
//! age-dependent variants) against an oracle benchmark on common randomness
//! and reports AoI regret and sub-optimal channel counts.
//!
//! Modules, bottom up:
//!
//! - [`linalg`]: small dense SPD kernels for the ridge estimator.
//! - [`stochastic`]: seeded per-slot random streams and distributions.
//! - [`envmodel`]: channel models mapping side information to success
//!   probabilities.
//! - [`policies`]: source and channel scheduling rules.
//! - [`simulator`]: the coupled multi-run round engine.
//! - [`metrics`]: regret, AoI and sub-optimal-choice reductions.
//! - [`config`], [`experiment`], [`verify`]: configuration, parallel runs,
//!   result files and the self-check battery.

pub mod config;
pub mod envmodel;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod policies;
pub mod simulator;
pub mod stochastic;
pub mod verify;

pub use config::{parse_config, SimConfig};
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_to_dir};
pub use metrics::RunMetrics;
