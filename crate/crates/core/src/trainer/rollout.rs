//! Episode rollouts and evaluation.

use diffcore::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{episode_rng, NetworkBundle};
use crate::belief::{batch_update, BatchBelief};
use crate::envs::{one_hot, Env};
use crate::error::{Error, Result};
use crate::regret::{ActionSelector, TieBreak};

/// Who picks a team's actions.
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    Learner(&'a NetworkBundle),
    Scripted,
}

/// Everything one step leaves behind for the losses.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// `[n_agents, obs_dim]`.
    pub obs: Tensor,
    pub prev_action: Vec<Option<usize>>,
    pub action: Vec<usize>,
    /// Agents acting at this step.
    pub alive: Vec<bool>,
    /// Per team: `[agents_per_team, K]` inputs of the q/V nets (learner teams only).
    pub kappa: Vec<Option<Tensor>>,
    /// Per team: the belief each agent held before this step (filter methods only).
    pub belief_prev: Vec<Option<BatchBelief>>,
    /// Team rewards received for this step.
    pub rewards: Vec<f64>,
    /// Per-team global state before acting.
    pub states: Vec<Vec<f64>>,
    /// The episode ended after this step.
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub episode: u64,
    pub env_seed: u64,
    pub n_teams: usize,
    pub agents_per_team: usize,
    pub n_actions: usize,
    /// Teams whose transitions train the bundle.
    pub learner: Vec<bool>,
    pub steps: Vec<StepRecord>,
    pub scores: Vec<f64>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted return per team.
    pub fn returns(&self) -> Vec<f64> {
        (0..self.n_teams)
            .map(|t| self.steps.iter().map(|s| s.rewards[t]).sum())
            .collect()
    }

    pub fn team_of(&self, agent: usize) -> usize {
        agent / self.agents_per_team
    }
}

/// ε-greedy argmax over Q values.
fn select_q<R: Rng + ?Sized>(values: &[f64], sel: &ActionSelector, rng: &mut R) -> usize {
    let n = values.len();
    if sel.epsilon > 0.0 && rng.random::<f64>() < sel.epsilon {
        return rng.random_range(0..n);
    }
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..n).filter(|&a| values[a] == best).collect();
    match sel.tie_break {
        TieBreak::Random if ties.len() > 1 => ties[rng.random_range(0..ties.len())],
        _ => ties[0],
    }
}

/// Plays one episode. Each learner agent builds `κ` from its own
/// observations and previous action only, then picks an action from its
/// per-action regret estimates (Q values for the baselines).
pub fn rollout_episode(
    env: &mut dyn Env,
    controllers: &[Controller<'_>],
    selector: ActionSelector,
    episode: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeTrace> {
    let spec = env.spec().clone();
    if controllers.len() != spec.n_teams {
        return Err(Error::InvalidArgument(format!(
            "{} controllers for {} teams",
            controllers.len(),
            spec.n_teams
        )));
    }
    for c in controllers {
        if let Controller::Learner(b) = c {
            if b.env != spec {
                return Err(Error::InvalidArgument(format!(
                    "bundle was built for {:?}, environment is {:?}",
                    b.env, spec
                )));
            }
        }
    }
    let n = spec.n_agents();
    let per = spec.agents_per_team;
    let env_seed: u64 = rng.random();
    let mut t = env.reset(env_seed)?;
    let mut beliefs: Vec<Option<BatchBelief>> = controllers
        .iter()
        .map(|c| match c {
            Controller::Learner(b) => b.filter.as_ref().map(|f| f.initial_batch(per)),
            Controller::Scripted => None,
        })
        .collect();
    let mut prev: Vec<Option<usize>> = vec![None; n];
    let mut steps = Vec::new();
    loop {
        if steps.len() >= spec.max_steps {
            return Err(Error::Env(format!("episode exceeded {} steps", spec.max_steps)));
        }
        let obs = Tensor::from_rows(&t.obs)?;
        let mut actions = vec![0usize; n];
        let mut kappas = vec![None; spec.n_teams];
        let mut belief_prev = vec![None; spec.n_teams];
        for (team, c) in controllers.iter().enumerate() {
            let agents = spec.team_agents(team);
            match c {
                Controller::Scripted => {
                    let a = env
                        .scripted_actions(team)
                        .ok_or_else(|| Error::Env("environment has no scripted policy".into()))?;
                    actions[agents.clone()].copy_from_slice(&a);
                }
                Controller::Learner(b) => {
                    let rows: Vec<&[f64]> = agents.clone().map(|i| t.obs[i].as_slice()).collect();
                    let team_obs = Tensor::from_rows(&rows)?;
                    let kappa = match (&b.filter, beliefs[team].as_mut()) {
                        (Some(f), Some(belief)) => {
                            let pa: Vec<Vec<f64>> = agents
                                .clone()
                                .map(|i| prev[i].map_or_else(|| vec![0.0; spec.n_actions], |a| one_hot(a, spec.n_actions)))
                                .collect();
                            let pa = Tensor::from_rows(&pa)?;
                            let (k, next) = batch_update(f, belief, &pa, &team_obs)?;
                            belief_prev[team] = Some(std::mem::replace(belief, next));
                            if b.concat_obs {
                                concat_cols(&k, &team_obs)?
                            } else {
                                k
                            }
                        }
                        _ => team_obs,
                    };
                    let scores = b.action_scores(&kappa)?;
                    for (row, i) in agents.clone().enumerate() {
                        if !t.alive[i] {
                            continue;
                        }
                        let s = scores.row_slice(row);
                        actions[i] = if b.method.is_regret() {
                            selector.select(s, rng)?
                        } else {
                            select_q(s, &selector, rng)
                        };
                    }
                    kappas[team] = Some(kappa);
                }
            }
        }
        let next = env.step(&actions)?;
        steps.push(StepRecord {
            obs,
            prev_action: prev.clone(),
            action: actions.clone(),
            alive: t.alive.clone(),
            kappa: kappas,
            belief_prev,
            rewards: next.team_rewards.clone(),
            states: t.states.clone(),
            done: next.done,
        });
        for i in 0..n {
            if t.alive[i] {
                prev[i] = Some(actions[i]);
            }
        }
        t = next;
        if t.done {
            break;
        }
    }
    Ok(EpisodeTrace {
        episode,
        env_seed,
        n_teams: spec.n_teams,
        agents_per_team: per,
        n_actions: spec.n_actions,
        learner: controllers.iter().map(|c| matches!(c, Controller::Learner(_))).collect(),
        steps,
        scores: env.scores(),
    })
}

pub(crate) fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = a.dims2();
    let (rb, cb) = b.dims2();
    if ra != rb {
        return Err(Error::Dimension(format!("concat of {ra} and {rb} rows")));
    }
    let mut out = Vec::with_capacity(ra * (ca + cb));
    for r in 0..ra {
        out.extend_from_slice(a.row_slice(r));
        out.extend_from_slice(b.row_slice(r));
    }
    Ok(Tensor::matrix(ra, ca + cb, out)?)
}

/// Result of [`evaluate`], from team 0's point of view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    pub win_rate: f64,
    pub returns: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Iteration index reserved for evaluation RNG streams.
pub const EVAL_STREAM: u64 = (1 << 43) - 1;

/// Greedy (ε = 0, lowest-index ties) episodes; team 0 is reported.
pub fn evaluate(env: &mut dyn Env, controllers: &[Controller<'_>], episodes: usize, seed: u64) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be positive".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut scores = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = episode_rng(seed, EVAL_STREAM, e as u64);
        let tr = rollout_episode(env, controllers, ActionSelector::eval(), e as u64, &mut rng)?;
        returns.push(tr.returns()[0]);
        scores.push(tr.scores[0]);
    }
    Ok(EvalSummary {
        episodes,
        mean_return: returns.iter().sum::<f64>() / episodes as f64,
        win_rate: scores.iter().sum::<f64>() / episodes as f64,
        returns,
        scores,
    })
}
