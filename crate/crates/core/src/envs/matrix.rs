//! Two-step cooperative matrix game.
//!
//! Step 1: agent 0 picks the row block and agent 1 the column block of a
//! 2×2 grid of payoff matrices. Step 2: agent 0 picks the row and agent 1 the
//! column inside the chosen matrix. The team receives
//! `payoffs[col][row][subcol][subrow]` at the end and nothing before.
//! Agents never observe each other's choices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{one_hot, Env, EnvSpec, Transition};
use crate::error::{Error, Result};

/// `payoffs[col][row][subcol][subrow]`.
pub type Payoffs = [[[[f64; 2]; 2]; 2]; 2];

pub const OBS_DIM: usize = 6;
pub const STATE_DIM: usize = 7;

/// The matrix selected by `(0, 0)` is `[[8, -12], [-12, 0]]`; the other three
/// pay 7 everywhere.
pub fn canonical_payoffs() -> Payoffs {
    let seven = [[7.0; 2]; 2];
    [[[[8.0, -12.0], [-12.0, 0.0]], seven], [seven, seven]]
}

/// Header line written by [`write_payoffs`].
pub const PAYOFF_HEADER: &str =
    "# two-step matrix game payoffs: 16 reals ordered payoffs[col][row][subcol][subrow], last index fastest";

/// Parses the payoff text format: `#` lines are comments, the remaining
/// whitespace-separated tokens must be exactly 16 finite reals.
pub fn parse_payoffs(text: &str) -> Result<Payoffs> {
    let mut vals = Vec::with_capacity(16);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Env(format!("payoff file line {}: `{tok}` is not a number", lineno + 1)))?;
            if !v.is_finite() {
                return Err(Error::Env(format!("payoff file line {}: non-finite value", lineno + 1)));
            }
            vals.push(v);
        }
    }
    if vals.len() != 16 {
        return Err(Error::Env(format!("payoff file holds {} numbers, expected 16", vals.len())));
    }
    let mut p = [[[[0.0; 2]; 2]; 2]; 2];
    for (i, v) in vals.into_iter().enumerate() {
        p[i >> 3][(i >> 2) & 1][(i >> 1) & 1][i & 1] = v;
    }
    Ok(p)
}

pub fn load_payoffs(path: impl AsRef<Path>) -> Result<Payoffs> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Env(format!("{}: {e}", path.display())))?;
    parse_payoffs(&text)
}

pub fn write_payoffs(p: &Payoffs) -> String {
    let mut out = String::from(PAYOFF_HEADER);
    out.push('\n');
    for col in p {
        for row in col {
            for sub in row {
                out.push_str(&format!("{} {}\n", sub[0], sub[1]));
            }
        }
    }
    out
}

/// Brute force over all 16 joint trajectories.
///
/// Returns the best return and every optimal trajectory as
/// `[agent0 step1, agent1 step1, agent0 step2, agent1 step2]`.
pub fn matrix_optimal(p: &Payoffs) -> (f64, Vec<[usize; 4]>) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = Vec::new();
    for t in 0..16usize {
        let traj = [t >> 3, (t >> 2) & 1, (t >> 1) & 1, t & 1];
        let r = p[traj[1]][traj[0]][traj[3]][traj[2]];
        if r > best {
            best = r;
            arg.clear();
        }
        if r == best {
            arg.push(traj);
        }
    }
    (best, arg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    ChooseMatrix,
    ChooseCell,
    Terminal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGameState {
    pub phase: Phase,
    /// `(col, row)` chosen at step 1.
    pub block: Option<(usize, usize)>,
    pub accrued: f64,
}

pub struct MatrixGame {
    spec: EnvSpec,
    pub payoffs: Payoffs,
    pub state: MatrixGameState,
}

impl MatrixGame {
    pub fn new(payoffs: Payoffs) -> Result<Self> {
        if payoffs.iter().flatten().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Env("payoffs must be finite".into()));
        }
        Ok(Self {
            spec: EnvSpec {
                n_teams: 1,
                agents_per_team: 2,
                n_actions: 2,
                obs_dim: OBS_DIM,
                state_dim: STATE_DIM,
                max_steps: 2,
            },
            payoffs,
            state: MatrixGameState {
                phase: Phase::ChooseMatrix,
                block: None,
                accrued: 0.0,
            },
        })
    }

    pub fn canonical() -> Self {
        Self::new(canonical_payoffs()).expect("canonical payoffs are finite")
    }

    fn observe(&self, agent: usize) -> Vec<f64> {
        let mut o = vec![0.0; OBS_DIM];
        match self.state.phase {
            Phase::ChooseMatrix => o[0] = 1.0,
            Phase::ChooseCell | Phase::Terminal => o[1] = 1.0,
        }
        if let Some((col, row)) = self.state.block {
            let own = if agent == 0 { row } else { col };
            o[2 + own] = 1.0;
        }
        o[4 + agent] = 1.0;
        o
    }

    fn global_state(&self) -> Vec<f64> {
        let phase = match self.state.phase {
            Phase::ChooseMatrix => 0,
            Phase::ChooseCell => 1,
            Phase::Terminal => 2,
        };
        let mut s = one_hot(phase, 3);
        let mut joint = vec![0.0; 4];
        if let Some((col, row)) = self.state.block {
            joint[col * 2 + row] = 1.0;
        }
        s.extend(joint);
        s
    }

    fn transition(&self, reward: f64) -> Transition {
        let done = self.state.phase == Phase::Terminal;
        Transition {
            obs: vec![self.observe(0), self.observe(1)],
            alive: vec![!done; 2],
            team_rewards: vec![reward],
            states: vec![self.global_state()],
            done,
        }
    }

    /// One step with `(agent 0, agent 1)` actions; returns the team reward and done flag.
    pub fn step_matrix(&mut self, a0: usize, a1: usize) -> Result<(f64, bool)> {
        if a0 > 1 || a1 > 1 {
            return Err(Error::Env(format!("matrix game actions must be 0 or 1, got ({a0}, {a1})")));
        }
        match self.state.phase {
            Phase::ChooseMatrix => {
                self.state.block = Some((a1, a0));
                self.state.phase = Phase::ChooseCell;
                Ok((0.0, false))
            }
            Phase::ChooseCell => {
                let (col, row) = self.state.block.expect("set at step 1");
                let r = self.payoffs[col][row][a1][a0];
                self.state.accrued += r;
                self.state.phase = Phase::Terminal;
                Ok((r, true))
            }
            Phase::Terminal => Err(Error::Env("step called on a finished matrix game".into())),
        }
    }
}

impl Env for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn fresh(&self) -> Box<dyn Env> {
        Box::new(MatrixGame::new(self.payoffs).expect("payoffs validated at construction"))
    }

    fn reset(&mut self, _seed: u64) -> Result<Transition> {
        self.state = MatrixGameState {
            phase: Phase::ChooseMatrix,
            block: None,
            accrued: 0.0,
        };
        Ok(self.transition(0.0))
    }

    fn step(&mut self, actions: &[usize]) -> Result<Transition> {
        if actions.len() != 2 {
            return Err(Error::Env(format!("matrix game needs 2 actions, got {}", actions.len())));
        }
        let (r, _) = self.step_matrix(actions[0], actions[1])?;
        Ok(self.transition(r))
    }

    fn scores(&self) -> Vec<f64> {
        vec![0.5]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_optimum_is_eight() {
        let (best, arg) = matrix_optimal(&canonical_payoffs());
        assert_eq!(best, 8.0);
        assert_eq!(arg, vec![[0, 0, 0, 0]]);
    }

    #[test]
    fn zero_and_constant_games() {
        let (best, arg) = matrix_optimal(&[[[[0.0; 2]; 2]; 2]; 2]);
        assert_eq!((best, arg.len()), (0.0, 16));
        let (best, _) = matrix_optimal(&[[[[-3.5; 2]; 2]; 2]; 2]);
        assert_eq!(best, -3.5);
    }

    #[test]
    fn enumeration_agrees_with_stepping() {
        let p = canonical_payoffs();
        let (best, _) = matrix_optimal(&p);
        let mut seen = f64::NEG_INFINITY;
        for t in 0..16usize {
            let mut g = MatrixGame::new(p).unwrap();
            g.reset(0).unwrap();
            let t1 = g.step(&[t >> 3, (t >> 2) & 1]).unwrap();
            assert_eq!(t1.team_rewards, vec![0.0]);
            assert!(!t1.done);
            let t2 = g.step(&[(t >> 1) & 1, t & 1]).unwrap();
            assert!(t2.done);
            if (t >> 3, (t >> 2) & 1) != (0, 0) {
                assert_eq!(t2.team_rewards, vec![7.0]);
            }
            seen = seen.max(t2.team_rewards[0]);
            assert!(g.step(&[0, 0]).is_err());
        }
        assert_eq!(seen, best);
    }

    #[test]
    fn observations_hide_teammate_choice() {
        let mut g = MatrixGame::canonical();
        let t0 = g.reset(0).unwrap();
        assert_eq!(g.state.phase, Phase::ChooseMatrix);
        assert_eq!(g.state.accrued, 0.0);
        assert_eq!(t0.obs[0], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let a = g.step(&[1, 0]).unwrap();
        assert_eq!(a.obs[0], vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(a.obs[1], vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.states[0], vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn payoff_text_round_trip() {
        let mut p = canonical_payoffs();
        p[1][0][1][0] = 2.5;
        let text = write_payoffs(&p);
        assert!(text.starts_with(PAYOFF_HEADER));
        assert_eq!(parse_payoffs(&text).unwrap(), p);
        assert!(parse_payoffs("1 2 3").is_err());
        assert!(parse_payoffs(&"x ".repeat(16)).is_err());
    }

    #[test]
    fn rejects_bad_actions() {
        let mut g = MatrixGame::canonical();
        g.reset(0).unwrap();
        assert!(g.step(&[2, 0]).is_err());
        assert!(g.step(&[0]).is_err());
    }
}
