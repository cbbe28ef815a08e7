//! Guarded majority-vote test-time RL over a synthetic policy.
//!
//! - [`monitor`]: label-free per-problem state (pseudo-labels, match and flip rates).
//! - [`guard`]: reward scaling, minority preservation, risk-conditioned skipping, routing.
//! - [`sim`]: categorical policy surrogate with a group-relative update.
//! - [`analytics`]: label accuracy, fate taxonomy, correct-vote and scissor statistics.
//! - [`harness`]: configs, runs, JSONL logs, sweeps, and reports.

pub mod analytics;
pub mod config;
pub mod error;
pub mod guard;
pub mod harness;
pub mod monitor;
pub mod rng;
pub mod sim;

pub use config::GuardConfig;
pub use error::{Error, Result};
pub use monitor::{AnswerId, ProblemId, ProblemState, RolloutBatch};
