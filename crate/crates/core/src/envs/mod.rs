//! Built-in Dec-POMDP environments behind one stepping interface.
//!
//! Agents are indexed team-major: team `t`'s agents occupy
//! `t * agents_per_team .. (t + 1) * agents_per_team`. Every team receives
//! its own team reward and its own view of the global state.

pub mod battle;
pub mod matrix;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use battle::{BattleConfig, BattleGame, BattleState, RewardEvent, RewardKind};
pub use matrix::{matrix_optimal, MatrixGame, MatrixGameState, Payoffs, Phase};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n_teams: usize,
    pub agents_per_team: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub max_steps: usize,
}

impl EnvSpec {
    pub fn n_agents(&self) -> usize {
        self.n_teams * self.agents_per_team
    }

    pub fn team_of(&self, agent: usize) -> usize {
        agent / self.agents_per_team
    }

    pub fn team_agents(&self, team: usize) -> std::ops::Range<usize> {
        team * self.agents_per_team..(team + 1) * self.agents_per_team
    }
}

/// What every agent and team sees after `reset` or `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// One observation per agent; dead agents get zeros.
    pub obs: Vec<Vec<f64>>,
    /// Agents that act at the next step.
    pub alive: Vec<bool>,
    /// One reward per team for the step just taken (zeros after reset).
    pub team_rewards: Vec<f64>,
    /// Global state per team, as that team's shaping input.
    pub states: Vec<Vec<f64>>,
    pub done: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// A new instance with the same configuration, for parallel rollouts.
    fn fresh(&self) -> Box<dyn Env>;

    /// Starts a new episode; deterministic given `seed`.
    fn reset(&mut self, seed: u64) -> Result<Transition>;

    /// Advances with one action per agent (dead agents' entries are ignored).
    fn step(&mut self, actions: &[usize]) -> Result<Transition>;

    /// Per-team score after the episode ends: 1 win, 0 loss, 0.5 draw.
    fn scores(&self) -> Vec<f64>;

    /// Actions of a fixed heuristic policy for `team`, if the environment has one.
    fn scripted_actions(&self, _team: usize) -> Option<Vec<usize>> {
        None
    }
}

/// One-hot of `i` with `n` entries.
pub fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}
