//! Team regret minimization for cooperative multi-agent learning.
//!
//! - [`regret`]: action selection from accumulated regrets, team-regret
//!   decompositions and an exact tabular recursion.
//! - [`belief`]: a differentiable particle filter that compresses each
//!   agent's observation history into a fixed-size vector.
//! - [`envs`]: a two-step matrix game and a grid battle.
//! - [`trainer`]: rollouts, losses and the training loop, plus baselines.

pub mod belief;
pub mod envs;
pub mod error;
pub mod regret;
pub mod trainer;

pub use error::{Error, Result};
