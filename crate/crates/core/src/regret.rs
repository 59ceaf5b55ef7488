//! Team-regret accounting.
//!
//! The accumulated team regret is decomposed either additively (the team
//! regret is the sum of the agents' regrets) or in shaping form (the sum plus
//! an action-independent term `c(s)` of the global state). Under either form
//! the joint greedy action is the tuple of individual greedy actions, which
//! is what lets every agent act on its own regrets at execution time.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `max(0, x)`.
pub fn positive_clip(x: f64) -> f64 {
    x.max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Greedy,
    RegretMatching,
}

/// How ties among maximal positive regrets are broken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lowest action index; used for evaluation.
    Lowest,
    /// Uniform among the tied actions; used while training.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSelector {
    pub mode: SelectionMode,
    pub epsilon: f64,
    pub tie_break: TieBreak,
}

impl ActionSelector {
    pub fn train(epsilon: f64) -> Self {
        Self {
            mode: SelectionMode::Greedy,
            epsilon,
            tie_break: TieBreak::Random,
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: SelectionMode::Greedy,
            epsilon: 0.0,
            tie_break: TieBreak::Lowest,
        }
    }

    pub fn select<R: Rng + ?Sized>(&self, regrets: &[f64], rng: &mut R) -> Result<usize> {
        select_action(regrets, self.mode, self.epsilon, self.tie_break, rng)
    }
}

/// Picks an action from per-action regrets.
///
/// Greedy mode takes the argmax of the positive-clipped regrets; when every
/// clipped regret is zero the action is uniform at random regardless of the
/// tie-break rule. With probability `epsilon` the action is uniform instead.
/// Regret matching samples proportionally to the clipped regrets.
pub fn select_action<R: Rng + ?Sized>(
    regrets: &[f64],
    mode: SelectionMode,
    epsilon: f64,
    tie_break: TieBreak,
    rng: &mut R,
) -> Result<usize> {
    if regrets.is_empty() {
        return invalid("select_action on an empty regret vector");
    }
    if let Some(bad) = regrets.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "regret",
            detail: bad.to_string(),
        });
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return invalid(format!("epsilon must lie in [0, 1], got {epsilon}"));
    }
    let n = regrets.len();
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..n));
    }
    match mode {
        SelectionMode::Greedy => {
            let best = regrets.iter().map(|&r| positive_clip(r)).fold(0.0, f64::max);
            if best <= 0.0 {
                return Ok(rng.random_range(0..n));
            }
            let ties: Vec<usize> = (0..n).filter(|&a| positive_clip(regrets[a]) == best).collect();
            Ok(match tie_break {
                TieBreak::Lowest => ties[0],
                TieBreak::Random if ties.len() == 1 => ties[0],
                TieBreak::Random => ties[rng.random_range(0..ties.len())],
            })
        }
        SelectionMode::RegretMatching => {
            let total: f64 = regrets.iter().map(|&r| positive_clip(r)).sum();
            if total <= 0.0 {
                return Ok(rng.random_range(0..n));
            }
            let mut u = rng.random::<f64>() * total;
            for (a, &r) in regrets.iter().enumerate() {
                let p = positive_clip(r);
                if p > 0.0 && u < p {
                    return Ok(a);
                }
                u -= p;
            }
            // Rounding can leave u marginally >= 0; fall back to the last positive entry.
            Ok((0..n).rev().find(|&a| regrets[a] > 0.0).unwrap())
        }
    }
}

/// Team regret under the additive decomposition: `Σ q_i − Σ v_i`.
pub fn team_regret_additive(per_agent_q: &[f64], per_agent_v: &[f64]) -> Result<f64> {
    if per_agent_q.len() != per_agent_v.len() {
        return Err(Error::Dimension(format!(
            "{} q values vs {} v values",
            per_agent_q.len(),
            per_agent_v.len()
        )));
    }
    Ok(per_agent_q.iter().sum::<f64>() - per_agent_v.iter().sum::<f64>())
}

/// Output `c(s)` of the global-state shaping term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapingValue(pub f64);

/// Team regret under the shaping decomposition: `Σ REG_i + c(s)`.
pub fn team_regret_shaped(per_agent_regret: &[f64], shaping: ShapingValue) -> f64 {
    per_agent_regret.iter().sum::<f64>() + shaping.0
}

/// Canonical key of an agent's information state for tabular mode.
///
/// The history is a token sequence `(action, observation)` per step; tokens
/// are offset so that "no action yet" and action 0 never collide.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InfoStateKey {
    pub agent: usize,
    pub history: Vec<u32>,
}

impl InfoStateKey {
    /// Keeps only the last `horizon` steps of `steps`.
    pub fn new(agent: usize, steps: &[(Option<usize>, u32)], horizon: usize) -> Self {
        let start = steps.len().saturating_sub(horizon);
        let mut history = Vec::with_capacity(2 * (steps.len() - start) + 1);
        history.push(steps.len() as u32);
        for &(a, o) in &steps[start..] {
            history.push(a.map_or(0, |a| a as u32 + 1));
            history.push(o);
        }
        Self { agent, history }
    }
}

impl fmt::Display for InfoStateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent {} history {:?}", self.agent, self.history)
    }
}

/// Exact accumulated regret `REG_{1:t}(I, a)` for small games.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegretTable {
    entries: BTreeMap<(InfoStateKey, usize), f64>,
    episodes: u64,
}

impl RegretTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn get(&self, key: &InfoStateKey, action: usize) -> f64 {
        self.entries.get(&(key.clone(), action)).copied().unwrap_or(0.0)
    }

    pub fn regrets(&self, key: &InfoStateKey, n_actions: usize) -> Vec<f64> {
        (0..n_actions).map(|a| self.get(key, a)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One episode of the recursion
    /// `REG_{1:t+1}(I, a) = REG_{1:t}(I, a) + q_t(I, a) − v_t(I)`.
    ///
    /// Every visited pair must have a value for its info state; on error the
    /// table is left unchanged.
    pub fn update(
        &mut self,
        q: &BTreeMap<(InfoStateKey, usize), f64>,
        v: &BTreeMap<InfoStateKey, f64>,
    ) -> Result<()> {
        let mut increments = Vec::with_capacity(q.len());
        for ((key, a), &qv) in q {
            let vv = v.get(key).ok_or_else(|| Error::MissingValue(key.to_string()))?;
            increments.push(((key.clone(), *a), qv - vv));
        }
        for (k, d) in increments {
            *self.entries.entry(k).or_insert(0.0) += d;
        }
        self.episodes += 1;
        Ok(())
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Outcome of [`consistency_check`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub trials: usize,
    pub additive_violations: usize,
    pub shaped_violations: usize,
}

impl ConsistencyReport {
    pub fn violations(&self) -> usize {
        self.additive_violations + self.shaped_violations
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            trials: self.trials + other.trials,
            additive_violations: self.additive_violations + other.additive_violations,
            shaped_violations: self.shaped_violations + other.shaped_violations,
        }
    }
}

/// Iterates the joint action space in lexicographic order.
fn for_each_joint(n_agents: usize, n_actions: usize, mut f: impl FnMut(&[usize])) {
    let mut joint = vec![0usize; n_agents];
    loop {
        f(&joint);
        let mut i = n_agents;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            joint[i] += 1;
            if joint[i] < n_actions {
                break;
            }
            joint[i] = 0;
        }
    }
}

/// Joint argmax by exhaustive enumeration; lexicographically first on ties.
pub fn joint_argmax(n_agents: usize, n_actions: usize, score: impl Fn(&[usize]) -> f64) -> Vec<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0; n_agents];
    for_each_joint(n_agents, n_actions, |j| {
        let s = score(j);
        if s > best {
            best = s;
            arg.copy_from_slice(j);
        }
    });
    arg
}

/// Randomized check that the team greedy action equals the tuple of
/// individual greedy actions, for the additive and the shaping forms.
///
/// Per-agent regrets are uniform in `[-1, 1)` and redrawn until the agent has
/// at least one strictly positive entry. The additive check maximizes the
/// clipped team regret `(Σ REG_i)_+`. The shaped check adds a random
/// `c ~ U[-4, 4)` and maximizes `Σ REG_i + c`; the clip is not applied there
/// because a negative enough `c` would clip every joint action to zero.
pub fn consistency_check<R: Rng + ?Sized>(
    n_agents: usize,
    n_actions: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ConsistencyReport> {
    if trials == 0 {
        return invalid("trials must be > 0");
    }
    if !(1..=4).contains(&n_agents) || !(1..=6).contains(&n_actions) {
        return invalid(format!(
            "exhaustive enumeration supports 1..=4 agents and 1..=6 actions, got {n_agents} x {n_actions}"
        ));
    }
    let mut report = ConsistencyReport {
        trials,
        ..Default::default()
    };
    let mut regrets = vec![vec![0.0; n_actions]; n_agents];
    for _ in 0..trials {
        for agent in regrets.iter_mut() {
            loop {
                agent.iter_mut().for_each(|r| *r = rng.random_range(-1.0..1.0));
                if agent.iter().any(|&r| r > 0.0) {
                    break;
                }
            }
        }
        let individual: Vec<usize> = regrets
            .iter()
            .map(|r| argmax_lowest(&r.iter().map(|&x| positive_clip(x)).collect::<Vec<_>>()))
            .collect();
        let team = |j: &[usize]| j.iter().enumerate().map(|(i, &a)| regrets[i][a]).sum::<f64>();

        let additive = joint_argmax(n_agents, n_actions, |j| positive_clip(team(j)));
        if additive != individual {
            report.additive_violations += 1;
        }

        let c = ShapingValue(rng.random_range(-4.0..4.0));
        let shaped = joint_argmax(n_agents, n_actions, |j| {
            let per_agent: Vec<f64> = j.iter().enumerate().map(|(i, &a)| regrets[i][a]).collect();
            team_regret_shaped(&per_agent, c)
        });
        if shaped != individual {
            report.shaped_violations += 1;
        }
    }
    Ok(report)
}
