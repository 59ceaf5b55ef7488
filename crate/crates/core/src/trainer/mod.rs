//! Centralized training with decentralized execution.
//!
//! Every learner shares one [`NetworkBundle`]. During rollouts an agent
//! reads only its own observation history (through the belief filter or
//! directly) and the q/V nets; the global state is recorded for the losses
//! and never consulted when acting.

mod losses;
mod rollout;
mod train;

use diffcore::{Activation, Mlp, MlpSpec, OptimizerKind, OutputActivation, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefConfig, FilterNets};
use crate::envs::EnvSpec;
use crate::error::{invalid, Result};
use crate::regret::SelectionMode;

pub use losses::{
    build_loss_q, build_loss_v, k_step_advantage, loss_q, loss_v, BundleVars, LossValue, TrainBatch,
};
pub use rollout::{evaluate, rollout_episode, Controller, EpisodeTrace, EvalSummary, StepRecord};
pub use train::{episode_rng, train_baseline, IterMetrics, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vrm,
    Bvrm,
    BvrmShaping,
    Iql,
    Vdn,
    Arm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Vrm,
        Method::Bvrm,
        Method::BvrmShaping,
        Method::Iql,
        Method::Vdn,
        Method::Arm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vrm => "vrm",
            Method::Bvrm => "bvrm",
            Method::BvrmShaping => "bvrm_shaping",
            Method::Iql => "iql",
            Method::Vdn => "vdn",
            Method::Arm => "arm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .map_or_else(|| invalid(format!("unknown method `{s}`")), Ok)
    }

    pub fn uses_filter(self) -> bool {
        matches!(self, Method::Bvrm | Method::BvrmShaping)
    }

    pub fn uses_shaping(self) -> bool {
        self == Method::BvrmShaping
    }

    /// q/V regret learners, as opposed to the Q-learning baselines.
    pub fn is_regret(self) -> bool {
        matches!(self, Method::Vrm | Method::Bvrm | Method::BvrmShaping | Method::Arm)
    }

    /// Whether the losses sum over teammates before squaring.
    pub fn team_sum(self) -> bool {
        matches!(self, Method::Vrm | Method::Bvrm | Method::BvrmShaping | Method::Vdn)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub k: usize,
    pub batch_episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_iterations: u64,
    /// q_prev ← q_net every this many iterations (regret methods).
    pub snapshot_period: u64,
    /// v_target ← v_net (regret methods) or Q target ← Q (baselines).
    pub target_period: u64,
    pub lr_q: f64,
    pub lr_v: f64,
    pub optimizer: OptimizerKind,
    /// Hidden widths of the q, V and baseline Q nets.
    pub hidden: Vec<usize>,
    pub shaping_hidden: Vec<usize>,
    pub activation: Activation,
    pub selection: SelectionMode,
    pub belief: BeliefConfig,
    /// Feed `κ ‖ o` instead of `κ` to the q/V nets.
    pub concat_obs: bool,
    /// Weight the bootstrap term by `γ^{k+τ0+1}` instead of `γ^{k+1}`.
    pub strict_exponent: bool,
    /// Keep the filter parameters fixed.
    pub freeze_filter: bool,
    /// Subtract the pre-update V estimate at κ from each q increment, so q
    /// accumulates `Q_t − V_{t−1}` rather than `Q_t`.
    pub regret_increment: bool,
    /// Rollout threads; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            k: 4,
            batch_episodes: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_iterations: 2500,
            snapshot_period: 1,
            target_period: 100,
            lr_q: 1e-3,
            lr_v: 1e-3,
            optimizer: OptimizerKind::adam(),
            hidden: vec![64, 64],
            shaping_hidden: vec![64],
            activation: Activation::Relu,
            selection: SelectionMode::Greedy,
            belief: BeliefConfig::default(),
            concat_obs: false,
            strict_exponent: false,
            freeze_filter: false,
            regret_increment: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return invalid(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.batch_episodes == 0 {
            return invalid("batch_episodes must be positive");
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return invalid(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if self.snapshot_period == 0 || self.target_period == 0 {
            return invalid("snapshot_period and target_period must be positive");
        }
        for (name, lr) in [("lr_q", self.lr_q), ("lr_v", self.lr_v)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return invalid(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.hidden.contains(&0) || self.shaping_hidden.contains(&0) {
            return invalid("hidden widths must be positive");
        }
        if self.threads == 0 {
            return invalid("threads must be >= 1");
        }
        self.belief.validate()
    }

    /// Linear anneal from `epsilon_start` to `epsilon_end`.
    pub fn epsilon(&self, iteration: u64) -> f64 {
        if self.epsilon_decay_iterations == 0 {
            return self.epsilon_end;
        }
        let frac = (iteration as f64 / self.epsilon_decay_iterations as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// All learnable state of one method: ω (q_net), θ (v_net), θ′ (v_target),
/// ξ (shaping), λ (filter) and the lagged q snapshot.
///
/// For the Q-learning baselines `q_net` is the Q network and `q_prev` its
/// target copy; the V, shaping and filter slots are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBundle {
    pub method: Method,
    pub env: EnvSpec,
    pub concat_obs: bool,
    pub q_net: Mlp,
    pub q_prev: Mlp,
    pub v_net: Option<Mlp>,
    pub v_target: Option<Mlp>,
    pub shaping: Option<Mlp>,
    pub filter: Option<FilterNets>,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl NetworkBundle {
    pub fn new<R: Rng + ?Sized>(method: Method, env: &EnvSpec, cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let filter = if method.uses_filter() {
            Some(FilterNets::init(cfg.belief.clone(), env.obs_dim, env.n_actions, rng)?)
        } else {
            None
        };
        let concat_obs = cfg.concat_obs && method.uses_filter();
        let kdim = match &filter {
            Some(f) => f.kappa_dim() + if concat_obs { env.obs_dim } else { 0 },
            None => env.obs_dim,
        };
        let q_spec = MlpSpec::new(widths(kdim, &cfg.hidden, env.n_actions), cfg.activation, OutputActivation::None)?;
        let q_net = Mlp::init(q_spec, rng)?;
        let q_prev = q_net.clone();
        let (v_net, v_target) = if method.is_regret() {
            let spec = MlpSpec::new(widths(kdim, &cfg.hidden, 1), cfg.activation, OutputActivation::None)?;
            let v = Mlp::init(spec, rng)?;
            (Some(v.clone()), Some(v))
        } else {
            (None, None)
        };
        let shaping = if method.uses_shaping() {
            let spec = MlpSpec::new(widths(env.state_dim, &cfg.shaping_hidden, 1), cfg.activation, OutputActivation::None)?;
            Some(Mlp::init(spec, rng)?)
        } else {
            None
        };
        Ok(Self {
            method,
            env: env.clone(),
            concat_obs,
            q_net,
            q_prev,
            v_net,
            v_target,
            shaping,
            filter,
        })
    }

    /// Width of the q/V input.
    pub fn kappa_dim(&self) -> usize {
        self.q_net.spec.input_width()
    }

    pub fn v_net(&self) -> Result<&Mlp> {
        self.v_net.as_ref().map_or_else(|| invalid("method has no V network"), Ok)
    }

    pub fn v_target(&self) -> Result<&Mlp> {
        self.v_target.as_ref().map_or_else(|| invalid("method has no target V network"), Ok)
    }

    /// Per-agent regret estimates `q(κ)[a] − V(κ)`, or Q values for the
    /// baselines. `kappa` is `[M, K]`; the result is `[M, A]`.
    pub fn action_scores(&self, kappa: &Tensor) -> Result<Tensor> {
        let mut q = self.q_net.eval(kappa)?;
        if let Some(v) = &self.v_net {
            let v = v.eval(kappa)?;
            let a = q.cols();
            for (i, row) in q.data_mut().chunks_mut(a).enumerate() {
                let vi = v.data()[i];
                row.iter_mut().for_each(|x| *x -= vi);
            }
        }
        Ok(q)
    }

    /// Named parameter groups in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        fn push<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, mlp: &'a Mlp) {
            for (i, t) in mlp.params.iter().enumerate() {
                out.push((format!("{prefix}.{i}"), t));
            }
        }
        push(&mut out, "q_net", &self.q_net);
        push(&mut out, "q_prev", &self.q_prev);
        if let Some(m) = &self.v_net {
            push(&mut out, "v_net", m);
        }
        if let Some(m) = &self.v_target {
            push(&mut out, "v_target", m);
        }
        if let Some(m) = &self.shaping {
            push(&mut out, "shaping", m);
        }
        if let Some(f) = &self.filter {
            push(&mut out, "filter.t", &f.transition);
            push(&mut out, "filter.z", &f.likelihood);
            push(&mut out, "filter.g", &f.generator);
            out.push(("filter.init_hidden".to_string(), &f.init_hidden));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        fn push<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, mlp: &'a mut Mlp) {
            for (i, t) in mlp.params.iter_mut().enumerate() {
                out.push((format!("{prefix}.{i}"), t));
            }
        }
        push(&mut out, "q_net", &mut self.q_net);
        push(&mut out, "q_prev", &mut self.q_prev);
        if let Some(m) = &mut self.v_net {
            push(&mut out, "v_net", m);
        }
        if let Some(m) = &mut self.v_target {
            push(&mut out, "v_target", m);
        }
        if let Some(m) = &mut self.shaping {
            push(&mut out, "shaping", m);
        }
        if let Some(f) = &mut self.filter {
            push(&mut out, "filter.t", &mut f.transition);
            push(&mut out, "filter.z", &mut f.likelihood);
            push(&mut out, "filter.g", &mut f.generator);
            out.push(("filter.init_hidden".to_string(), &mut f.init_hidden));
        }
        out
    }
}
