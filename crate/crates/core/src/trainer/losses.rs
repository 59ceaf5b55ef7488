//! The q and V losses, batched over every (episode, team, step) sample.
//!
//! Rows are alive agent-steps of learner teams. A sample is either a whole
//! team at one step (team-sum methods) or a single agent-step. Team sums are
//! taken by gathering each sample's rows into a fixed-width block padded
//! with a zero row, then summing the block.

use diffcore::{mlp_forward, Graph, Mlp, Tensor, Var};

use super::rollout::EpisodeTrace;
use super::{Method, NetworkBundle, TrainConfig};
use crate::belief::{g_belief_update, BatchBelief, FilterVars};
use crate::envs::one_hot;
use crate::error::{invalid, Error, Result};

/// `Σ_{τ=τ0}^{min(τ0+k, T-1)} γ^{τ-τ0} r_τ + γ^{k+1} V(next)`, where the
/// bootstrap is dropped when `τ0+k+1` falls past the end of the episode or
/// `bootstrap` has no value there (the agent is dead).
fn advantage(
    rewards: &[f64],
    tau0: usize,
    k: usize,
    gamma: f64,
    strict: bool,
    mut bootstrap: impl FnMut(usize) -> Option<f64>,
) -> f64 {
    let t = rewards.len();
    let end = (tau0 + k).min(t - 1);
    let mut sum = 0.0;
    let mut disc = 1.0;
    for r in &rewards[tau0..=end] {
        sum += disc * r;
        disc *= gamma;
    }
    let boot_at = tau0 + k + 1;
    if boot_at < t {
        if let Some(v) = bootstrap(boot_at) {
            let exp = if strict { k + tau0 + 1 } else { k + 1 };
            sum += gamma.powi(exp as i32) * v;
        }
    }
    sum
}

/// k-step advantage of `agent` at `tau0`, with the team reward standing in
/// for the agent's reward and `v_target` evaluated on the recorded `κ`.
pub fn k_step_advantage(
    trace: &EpisodeTrace,
    agent: usize,
    tau0: usize,
    k: usize,
    gamma: f64,
    v_target: &Mlp,
    strict_exponent: bool,
) -> Result<f64> {
    if tau0 >= trace.len() {
        return invalid(format!("tau0 = {tau0} outside an episode of {} steps", trace.len()));
    }
    let team = trace.team_of(agent);
    if team >= trace.n_teams {
        return invalid(format!("agent {agent} out of range"));
    }
    let local = agent - team * trace.agents_per_team;
    let rewards: Vec<f64> = trace.steps.iter().map(|s| s.rewards[team]).collect();
    let mut err = None;
    let a = advantage(&rewards, tau0, k, gamma, strict_exponent, |tau| {
        let step = &trace.steps[tau];
        if !step.alive[agent] {
            return None;
        }
        let kappa = step.kappa[team].as_ref()?;
        match v_target.eval(&Tensor::row(kappa.row_slice(local).to_vec())) {
            Ok(v) => Some(v.item()),
            Err(e) => {
                err = Some(e);
                None
            }
        }
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(a),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct RowRef {
    ep: usize,
    step: usize,
    agent: usize,
}

/// A training batch with every frozen-network term precomputed.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub method: Method,
    rows: Vec<RowRef>,
    /// `[R, K]` recorded q/V inputs.
    pub kappa: Tensor,
    pub actions: Vec<usize>,
    /// `[R, obs_dim]`.
    pub obs: Tensor,
    /// `[R, n_actions]`, zero rows at the first step.
    pub prev_action: Tensor,
    pub belief_prev: Option<BatchBelief>,
    /// Row indices of each sample.
    pub groups: Vec<Vec<usize>>,
    pub width: usize,
    /// `[P, state_dim]` global state of each sample.
    pub states: Tensor,
    /// Per sample: the part of the q residual that does not depend on ω.
    pub q_const: Vec<f64>,
    /// Per sample: `Σᵢ 𝔸ⁱ(k, τ0)` (regret methods; empty otherwise).
    pub adv: Vec<f64>,
}

impl TrainBatch {
    pub fn n_samples(&self) -> usize {
        self.groups.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn build(traces: &[EpisodeTrace], bundle: &NetworkBundle, cfg: &TrainConfig) -> Result<Self> {
        let method = bundle.method;
        let a_dim = bundle.env.n_actions;
        let mut rows = Vec::new();
        let mut index: Vec<Vec<Vec<Option<usize>>>> = Vec::with_capacity(traces.len());
        let mut kappa = Vec::new();
        let mut obs = Vec::new();
        let mut prev_action = Vec::new();
        let mut actions = Vec::new();
        let mut beliefs: Vec<BatchBelief> = Vec::new();
        for (ep, tr) in traces.iter().enumerate() {
            let n = tr.n_teams * tr.agents_per_team;
            let mut ep_index = Vec::with_capacity(tr.len());
            for (step, rec) in tr.steps.iter().enumerate() {
                let mut at = vec![None; n];
                for agent in 0..n {
                    let team = tr.team_of(agent);
                    if !tr.learner[team] || !rec.alive[agent] {
                        continue;
                    }
                    let local = agent - team * tr.agents_per_team;
                    let k = rec.kappa[team]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidArgument(format!("episode {ep} step {step}: learner team {team} has no κ")))?;
                    at[agent] = Some(rows.len());
                    rows.push(RowRef { ep, step, agent });
                    kappa.extend_from_slice(k.row_slice(local));
                    obs.extend_from_slice(rec.obs.row_slice(agent));
                    match rec.prev_action[agent] {
                        Some(a) => prev_action.extend(one_hot(a, a_dim)),
                        None => prev_action.extend(std::iter::repeat_n(0.0, a_dim)),
                    }
                    actions.push(rec.action[agent]);
                    if bundle.filter.is_some() {
                        let b = rec.belief_prev[team]
                            .as_ref()
                            .ok_or_else(|| Error::InvalidArgument(format!("episode {ep} step {step}: missing belief")))?;
                        beliefs.push(b.instance(local));
                    }
                }
                ep_index.push(at);
            }
            index.push(ep_index);
        }
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let r = rows.len();
        let kappa = Tensor::matrix(r, kappa.len() / r, kappa)?;
        if kappa.cols() != bundle.kappa_dim() {
            return Err(Error::Dimension(format!(
                "recorded κ has width {}, bundle expects {}",
                kappa.cols(),
                bundle.kappa_dim()
            )));
        }
        let obs = Tensor::matrix(r, obs.len() / r, obs)?;
        let prev_action = Tensor::matrix(r, a_dim, prev_action)?;
        let belief_prev = if beliefs.is_empty() {
            None
        } else {
            Some(BatchBelief::stack(&beliefs.iter().collect::<Vec<_>>())?)
        };

        // Frozen-network values per row.
        let (lagged, next_value): (Vec<f64>, Vec<f64>) = if method.is_regret() {
            let qp = bundle.q_prev.eval(&kappa)?;
            let vt = bundle.v_target()?.eval(&kappa)?;
            let baseline = match (&bundle.v_net, cfg.regret_increment) {
                (Some(v), true) => v.eval(&kappa)?.data().to_vec(),
                _ => vec![0.0; r],
            };
            (
                actions.iter().enumerate().map(|(i, &a)| qp.get(i, a) - baseline[i]).collect(),
                vt.data().to_vec(),
            )
        } else {
            let qt = bundle.q_prev.eval(&kappa)?;
            let best = (0..r)
                .map(|i| qt.row_slice(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            (vec![0.0; r], best)
        };

        let team_sum = method.team_sum();
        let mut groups = Vec::new();
        let mut states = Vec::new();
        let mut q_const = Vec::new();
        let mut adv = Vec::new();
        for (ep, tr) in traces.iter().enumerate() {
            for team in (0..tr.n_teams).filter(|&t| tr.learner[t]) {
                let rewards: Vec<f64> = tr.steps.iter().map(|s| s.rewards[team]).collect();
                let agents = team * tr.agents_per_team..(team + 1) * tr.agents_per_team;
                for step in 0..tr.len() {
                    let members: Vec<usize> = agents.clone().filter_map(|a| index[ep][step][a]).collect();
                    if members.is_empty() {
                        continue;
                    }
                    let split: Vec<Vec<usize>> = if team_sum {
                        vec![members]
                    } else {
                        members.into_iter().map(|m| vec![m]).collect()
                    };
                    for group in split {
                        let mut qc = rewards[step];
                        let mut ad = 0.0;
                        for &row in &group {
                            let agent = rows[row].agent;
                            let next = index[ep].get(step + 1).and_then(|at| at[agent]);
                            qc += lagged[row] + cfg.gamma * next.map_or(0.0, |n| next_value[n]);
                            if method.is_regret() {
                                ad += advantage(&rewards, step, cfg.k, cfg.gamma, cfg.strict_exponent, |tau| {
                                    index[ep][tau][agent].map(|n| next_value[n])
                                });
                            }
                        }
                        states.extend_from_slice(&tr.steps[step].states[team]);
                        q_const.push(qc);
                        if method.is_regret() {
                            adv.push(ad);
                        }
                        groups.push(group);
                    }
                }
            }
        }
        let p = groups.len();
        let width = if team_sum { traces[0].agents_per_team } else { 1 };
        Ok(Self {
            method,
            rows,
            kappa,
            actions,
            obs,
            prev_action,
            belief_prev,
            groups,
            width,
            states: Tensor::matrix(p, states.len() / p, states)?,
            q_const,
            adv,
        })
    }
}

/// Graph handles for every parameter group of a bundle.
#[derive(Clone, Debug)]
pub struct BundleVars {
    pub q: Vec<Var>,
    pub v: Vec<Var>,
    pub shaping: Vec<Var>,
    pub filter: Option<FilterVars>,
}

impl BundleVars {
    /// Binds the live networks; `trainable` selects `(q, v, shaping, filter)`.
    pub fn bind(g: &mut Graph, bundle: &NetworkBundle, trainable: (bool, bool, bool, bool)) -> Self {
        let (tq, tv, ts, tf) = trainable;
        Self {
            q: bundle.q_net.bind(g, tq),
            v: bundle.v_net.as_ref().map_or_else(Vec::new, |m| m.bind(g, tv)),
            shaping: bundle.shaping.as_ref().map_or_else(Vec::new, |m| m.bind(g, ts)),
            filter: bundle.filter.as_ref().map(|f| f.bind(g, tf)),
        }
    }
}

fn group_sum(g: &mut Graph, vals: Var, batch: &TrainBatch) -> Result<Var> {
    let r = batch.n_rows();
    let zero = g.constant(Tensor::zeros(1, 1));
    let padded = g.concat_rows(&[vals, zero])?;
    let mut idx = Vec::with_capacity(batch.n_samples() * batch.width);
    for grp in &batch.groups {
        idx.extend_from_slice(grp);
        idx.extend(std::iter::repeat_n(r, batch.width - grp.len()));
    }
    let gathered = g.gather_rows(padded, idx)?;
    Ok(g.segment_sum(gathered, batch.width)?)
}

fn half_mean_square(g: &mut Graph, residual: Var) -> Var {
    let sq = g.square(residual);
    let m = g.mean(sq);
    g.scale(m, 0.5)
}

/// `½ mean (Σᵢ q(κⁱ)[aⁱ] − Σᵢ q_prev(κⁱ)[aⁱ] − γ Σᵢ V′(κⁱ_{τ0+1}) − r)²`.
///
/// For the Q-learning baselines the same form gives the TD loss with
/// `max_a Q′` in place of `V′` and no lagged term.
pub fn build_loss_q(g: &mut Graph, batch: &TrainBatch, bundle: &NetworkBundle, vars: &BundleVars) -> Result<Var> {
    let k = g.constant(batch.kappa.clone());
    let q = mlp_forward(g, &bundle.q_net.spec, &vars.q, k)?;
    let qa = g.pick_cols(q, batch.actions.clone())?;
    let summed = group_sum(g, qa, batch)?;
    let c = g.constant(Tensor::matrix(batch.n_samples(), 1, batch.q_const.clone())?);
    let res = g.sub(summed, c)?;
    Ok(half_mean_square(g, res))
}

/// `½ mean (Σᵢ 𝔸ⁱ − Σᵢ V(κⁱ_{τ0}) + f(s_{τ0}))²`.
///
/// With a filter, `κ_{τ0}` is recomputed from the recorded belief
/// `b_{τ0-1}` so the loss reaches λ through one belief update.
pub fn build_loss_v(g: &mut Graph, batch: &TrainBatch, bundle: &NetworkBundle, vars: &BundleVars) -> Result<Var> {
    let v_net = bundle.v_net()?;
    let kappa = match (&bundle.filter, &vars.filter, &batch.belief_prev) {
        (Some(f), Some(fv), Some(b)) => {
            let h = g.constant(b.hiddens.clone());
            let w = g.constant(b.weights.clone());
            let a = g.constant(batch.prev_action.clone());
            let o = g.constant(batch.obs.clone());
            let out = g_belief_update(g, f, fv, h, w, a, o, f.config.beta)?;
            if bundle.concat_obs {
                g.concat_cols(&[out.kappa, o])?
            } else {
                out.kappa
            }
        }
        (None, _, _) => g.constant(batch.kappa.clone()),
        _ => return invalid("filter bundle without filter variables or recorded beliefs"),
    };
    let v = mlp_forward(g, &v_net.spec, &vars.v, kappa)?;
    let vs = group_sum(g, v, batch)?;
    let adv = g.constant(Tensor::matrix(batch.n_samples(), 1, batch.adv.clone())?);
    let mut res = g.sub(adv, vs)?;
    if let Some(f) = &bundle.shaping {
        let s = g.constant(batch.states.clone());
        let fs = mlp_forward(g, &f.spec, &vars.shaping, s)?;
        res = g.add(res, fs)?;
    }
    Ok(half_mean_square(g, res))
}

/// A loss value with gradients of its trainable tensors.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

fn finish(g: &Graph, loss: Var, params: &[Var], what: &'static str) -> Result<LossValue> {
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what,
            detail: format!("loss = {value}"),
        });
    }
    let grads = g.backward(loss)?;
    Ok(LossValue {
        value,
        grads: params.iter().map(|&p| grads.get(p)).collect(),
    })
}

/// Value of the q loss and its gradient for every q_net tensor.
pub fn loss_q(batch: &TrainBatch, bundle: &NetworkBundle) -> Result<LossValue> {
    let mut g = Graph::new();
    let vars = BundleVars::bind(&mut g, bundle, (true, false, false, false));
    let loss = build_loss_q(&mut g, batch, bundle, &vars)?;
    finish(&g, loss, &vars.q, "loss_q")
}

/// Value of the V loss and its gradient for the V, shaping and filter
/// tensors, in that order. A frozen filter contributes no tensors.
pub fn loss_v(batch: &TrainBatch, bundle: &NetworkBundle, freeze_filter: bool) -> Result<LossValue> {
    let mut g = Graph::new();
    let vars = BundleVars::bind(&mut g, bundle, (false, true, true, !freeze_filter));
    let loss = build_loss_v(&mut g, batch, bundle, &vars)?;
    let mut params = vars.v.clone();
    params.extend(&vars.shaping);
    if !freeze_filter {
        if let Some(f) = &vars.filter {
            params.extend(f.all());
        }
    }
    finish(&g, loss, &params, "loss_v")
}
