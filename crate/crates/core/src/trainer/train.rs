//! The training loop: self-play batches, snapshot schedule, optimizer steps.

use diffcore::{Optimizer, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::{loss_q, loss_v, TrainBatch};
use super::rollout::{rollout_episode, Controller, EpisodeTrace};
use super::{Method, NetworkBundle, TrainConfig};
use crate::envs::{Env, EnvSpec};
use crate::error::{invalid, Error, Result};
use crate::regret::ActionSelector;

/// Stream used for network initialization.
const INIT_STREAM: u64 = u64::MAX;

/// RNG for one episode of one iteration. Streams never overlap for
/// `episode < 2^20` and `iteration < 2^44`.
pub fn episode_rng(seed: u64, iteration: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 20) | episode);
    rng
}

/// One row of training metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct IterMetrics {
    pub iteration: u64,
    /// Mean undiscounted team-0 return over the batch.
    pub mean_return: f64,
    /// Mean team-0 score over the batch (two-team environments only).
    pub win_rate: Option<f64>,
    pub loss_q: f64,
    pub loss_v: Option<f64>,
    pub epsilon: f64,
    /// L2 norm of all gradients applied this iteration.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub bundle: NetworkBundle,
    pub opt_q: Optimizer,
    pub opt_v: Option<Optimizer>,
    /// Completed iterations.
    pub iteration: u64,
    pub seed: u64,
}

fn grad_sq(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum()
}

fn add_group<'a>(params: &mut Vec<&'a mut Tensor>, names: &mut Vec<String>, prefix: &str, ts: &'a mut [Tensor]) {
    for (i, t) in ts.iter_mut().enumerate() {
        names.push(format!("{prefix}.{i}"));
        params.push(t);
    }
}

impl Trainer {
    pub fn new(method: Method, env: &EnvSpec, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = episode_rng(seed, 0, 0);
        rng.set_stream(INIT_STREAM);
        let bundle = NetworkBundle::new(method, env, &config, &mut rng)?;
        let opt_q = Optimizer::new(config.optimizer, config.lr_q)?;
        let opt_v = if method.is_regret() {
            Some(Optimizer::new(config.optimizer, config.lr_v)?)
        } else {
            None
        };
        Ok(Self {
            config,
            bundle,
            opt_q,
            opt_v,
            iteration: 0,
            seed,
        })
    }

    pub fn method(&self) -> Method {
        self.bundle.method
    }

    /// Plays `batch_episodes` self-play episodes with the current networks.
    /// The result does not depend on `config.threads`.
    pub fn collect(&self, env: &dyn Env) -> Result<Vec<EpisodeTrace>> {
        let n = self.config.batch_episodes;
        let selector = ActionSelector {
            mode: self.config.selection,
            ..ActionSelector::train(self.config.epsilon(self.iteration))
        };
        let controllers = vec![Controller::Learner(&self.bundle); env.spec().n_teams];
        let run = |env: &mut dyn Env, e: usize| {
            let mut rng = episode_rng(self.seed, self.iteration, e as u64);
            rollout_episode(env, &controllers, selector, e as u64, &mut rng)
        };
        let threads = self.config.threads.min(n);
        if threads <= 1 {
            let mut env = env.fresh();
            return (0..n).map(|e| run(env.as_mut(), e)).collect();
        }
        let chunks: Vec<Result<Vec<(usize, EpisodeTrace)>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let mut local = env.fresh();
                    let run = &run;
                    s.spawn(move || {
                        (t..n)
                            .step_by(threads)
                            .map(|e| run(local.as_mut(), e).map(|tr| (e, tr)))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Env("rollout thread panicked".into()))))
                .collect()
        });
        let mut out: Vec<(usize, EpisodeTrace)> = Vec::with_capacity(n);
        for c in chunks {
            out.extend(c?);
        }
        out.sort_by_key(|(e, _)| *e);
        Ok(out.into_iter().map(|(_, tr)| tr).collect())
    }

    /// Refreshes the lagged and target copies that are due at the start of
    /// the current iteration.
    fn refresh_snapshots(&mut self) {
        let it = self.iteration;
        let b = &mut self.bundle;
        if b.method.is_regret() {
            if it.is_multiple_of(self.config.snapshot_period) {
                b.q_prev.copy_from(&b.q_net);
            }
            if it.is_multiple_of(self.config.target_period) {
                if let (Some(t), Some(v)) = (b.v_target.as_mut(), b.v_net.as_ref()) {
                    t.copy_from(v);
                }
            }
        } else if it.is_multiple_of(self.config.target_period) {
            b.q_prev.copy_from(&b.q_net);
        }
    }

    /// One update from an already collected batch: ω from the q loss, then
    /// (θ, ξ, λ) jointly from the V loss.
    pub fn train_iteration(&mut self, traces: &[EpisodeTrace]) -> Result<IterMetrics> {
        if traces.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let epsilon = self.config.epsilon(self.iteration);
        self.refresh_snapshots();
        let batch = TrainBatch::build(traces, &self.bundle, &self.config)?;
        let lq = loss_q(&batch, &self.bundle)?;
        let lv = if self.bundle.method.is_regret() {
            Some(loss_v(&batch, &self.bundle, self.config.freeze_filter)?)
        } else {
            None
        };

        let b = &mut self.bundle;
        let names: Vec<String> = (0..b.q_net.params.len()).map(|i| format!("q_net.{i}")).collect();
        let mut params: Vec<&mut Tensor> = b.q_net.params.iter_mut().collect();
        self.opt_q.step(&mut params, &lq.grads, &names)?;
        let mut sq = grad_sq(&lq.grads);
        if let Some(lv) = &lv {
            let opt = self.opt_v.as_mut().ok_or_else(|| Error::MissingValue("V optimizer".into()))?;
            let mut params: Vec<&mut Tensor> = Vec::new();
            let mut names = Vec::new();
            if let Some(v) = b.v_net.as_mut() {
                add_group(&mut params, &mut names, "v_net", &mut v.params);
            }
            if let Some(f) = b.shaping.as_mut() {
                add_group(&mut params, &mut names, "shaping", &mut f.params);
            }
            if !self.config.freeze_filter {
                if let Some(f) = b.filter.as_mut() {
                    add_group(&mut params, &mut names, "filter.t", &mut f.transition.params);
                    add_group(&mut params, &mut names, "filter.z", &mut f.likelihood.params);
                    add_group(&mut params, &mut names, "filter.g", &mut f.generator.params);
                }
            }
            opt.step(&mut params, &lv.grads, &names)?;
            sq += grad_sq(&lv.grads);
        }

        let n = traces.len() as f64;
        let mean_return = traces.iter().map(|t| t.returns()[0]).sum::<f64>() / n;
        let win_rate = (traces[0].n_teams > 1).then(|| traces.iter().map(|t| t.scores[0]).sum::<f64>() / n);
        self.iteration += 1;
        let m = IterMetrics {
            iteration: self.iteration,
            mean_return,
            win_rate,
            loss_q: lq.value,
            loss_v: lv.map(|l| l.value),
            epsilon,
            grad_norm: sq.sqrt(),
        };
        if !m.grad_norm.is_finite() {
            return Err(Error::NonFinite {
                what: "grad_norm",
                detail: format!("iteration {}", m.iteration),
            });
        }
        Ok(m)
    }

    /// Collects a batch and trains on it.
    pub fn step(&mut self, env: &dyn Env) -> Result<IterMetrics> {
        let traces = self.collect(env)?;
        self.train_iteration(&traces)
    }
}

/// Trains one of the baselines (`iql`, `vdn` or `arm`) for `iterations`.
pub fn train_baseline(kind: Method, env: &dyn Env, config: TrainConfig, iterations: u64, seed: u64) -> Result<NetworkBundle> {
    if !matches!(kind, Method::Iql | Method::Vdn | Method::Arm) {
        return invalid(format!("`{}` is not a baseline", kind.name()));
    }
    let mut t = Trainer::new(kind, env.spec(), config, seed)?;
    for _ in 0..iterations {
        t.step(env)?;
    }
    Ok(t.bundle)
}
