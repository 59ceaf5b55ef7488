//! Experiment harness: run configs, training and evaluation runs, metrics
//! files, checkpoints and plots.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod run;

pub use error::{HarnessError, Result};
