//! Simulation and analysis toolkit for multi-reversal two-armed bandit
//! experiments on early success, behavioural lock-in and confidence freeze.
//!
//! - [`protocol`]: task configuration, reward schedules, trial directives
//! - [`agents`]: Rescorla–Wagner + stickiness learner, ideal observer, confidence model
//! - [`log`]: canonical session log with JSONL and CSV formats
//! - [`metrics`]: per-trial features and behavioural indices
//! - [`inference`]: logistic regression, model ladder, survival analysis, hypothesis tests
//! - [`fitting`]: maximum-likelihood fitting and parameter recovery

pub mod agents;
pub mod error;
pub mod fitting;
pub mod inference;
pub mod log;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
