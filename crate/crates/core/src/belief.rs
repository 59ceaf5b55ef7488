//! Differentiable particle-filter belief tracker.
//!
//! Each agent holds `X` particles `⟨h, w⟩`. One update propagates every
//! hidden through the transition net `T`, scores the particles with the
//! likelihood net `Z`, reweights with the soft-resample rule and compresses
//! the particle set into `κ` with the generator net `G`.
//!
//! Everything is implemented once on a [`Graph`] in batched form: `M` belief
//! instances (agents, or agents × time steps when training) are stacked, so
//! hiddens are `[M·X, H]` and weights `[M, X]`. The per-agent functions are
//! thin wrappers that run the batched code on constants with `M = 1`.

use diffcore::{mlp_forward, mlp_forward_split, Activation, Graph, Mlp, MlpSpec, OutputActivation, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Bounds on the likelihood logit, i.e. `Z ∈ [1e-6, 1e6]`.
pub const LOGIT_MIN: f64 = -13.815510557964274;
pub const LOGIT_MAX: f64 = 13.815510557964274;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeliefConfig {
    pub n_particles: usize,
    pub hidden_dim: usize,
    pub kappa_dim: usize,
    /// Width of the single hidden layer of `T`, `Z` and `G`.
    pub net_width: usize,
    pub beta: f64,
    /// Score the propagated hidden `h_τ` instead of `h_{τ-1}`.
    pub likelihood_on_propagated: bool,
    /// Half-width of fixed per-particle offsets added to the initial
    /// hidden. Zero keeps every particle at the shared initial belief.
    pub init_spread: f64,
}

impl Default for BeliefConfig {
    fn default() -> Self {
        Self {
            n_particles: 16,
            hidden_dim: 32,
            kappa_dim: 32,
            net_width: 64,
            beta: 0.5,
            likelihood_on_propagated: false,
            init_spread: 0.0,
        }
    }
}

impl BeliefConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 1 {
            return invalid("n_particles must be >= 1");
        }
        if self.hidden_dim == 0 || self.kappa_dim == 0 || self.net_width == 0 {
            return invalid("belief dimensions must be positive");
        }
        check_beta(self.beta)?;
        if !(self.init_spread >= 0.0 && self.init_spread.is_finite()) {
            return invalid(format!("init_spread must be finite and >= 0, got {}", self.init_spread));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("beta must lie in [0, 1], got {beta}"));
    }
    Ok(())
}

/// The parameters λ: transition `T`, likelihood `Z` and generator `G`,
/// plus the initial particle hiddens.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterNets {
    pub config: BeliefConfig,
    pub obs_dim: usize,
    pub n_actions: usize,
    /// `(h, a_prev one-hot, o) → h'`.
    pub transition: Mlp,
    /// `(h, o) → log-likelihood` before clamping.
    pub likelihood: Mlp,
    /// `(o, weighted mean of h, weight entropy) → κ`.
    pub generator: Mlp,
    /// `[X, H]` initial hiddens: the shared `b₁` encoding plus the optional spread.
    pub init_hidden: Tensor,
}

impl FilterNets {
    pub fn specs(config: &BeliefConfig, obs_dim: usize, n_actions: usize) -> Result<[MlpSpec; 3]> {
        let (h, w, k) = (config.hidden_dim, config.net_width, config.kappa_dim);
        Ok([
            MlpSpec::new(vec![h + n_actions + obs_dim, w, h], Activation::Tanh, OutputActivation::Tanh)?,
            MlpSpec::new(vec![h + obs_dim, w, 1], Activation::Tanh, OutputActivation::None)?,
            MlpSpec::new(vec![obs_dim + h + 1, w, k], Activation::Tanh, OutputActivation::Tanh)?,
        ])
    }

    pub fn init<R: Rng + ?Sized>(config: BeliefConfig, obs_dim: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || n_actions == 0 {
            return invalid("obs_dim and n_actions must be positive");
        }
        let [ts, zs, gs] = Self::specs(&config, obs_dim, n_actions)?;
        let transition = Mlp::init(ts, rng)?;
        let likelihood = Mlp::init(zs, rng)?;
        let generator = Mlp::init(gs, rng)?;
        let (x, h) = (config.n_particles, config.hidden_dim);
        let init_hidden = if config.init_spread > 0.0 {
            Tensor::uniform(x, h, config.init_spread, rng)
        } else {
            Tensor::zeros(x, h)
        };
        Ok(Self {
            config,
            obs_dim,
            n_actions,
            transition,
            likelihood,
            generator,
            init_hidden,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.config.n_particles
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn kappa_dim(&self) -> usize {
        self.config.kappa_dim
    }

    /// Trainable tensors in a fixed order: T, Z, G.
    pub fn params(&self) -> Vec<&Tensor> {
        self.transition
            .params
            .iter()
            .chain(&self.likelihood.params)
            .chain(&self.generator.params)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.transition
            .params
            .iter_mut()
            .chain(&mut self.likelihood.params)
            .chain(&mut self.generator.params)
            .collect()
    }

    /// Adds all three nets to `g` as leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> FilterVars {
        FilterVars {
            t: self.transition.bind(g, trainable),
            z: self.likelihood.bind(g, trainable),
            g: self.generator.bind(g, trainable),
        }
    }

    /// Initial batched belief for `m` instances.
    pub fn initial_batch(&self, m: usize) -> BatchBelief {
        let (x, h) = (self.n_particles(), self.hidden_dim());
        let mut hid = Vec::with_capacity(m * x * h);
        for _ in 0..m {
            hid.extend_from_slice(self.init_hidden.data());
        }
        BatchBelief {
            hiddens: Tensor::matrix(m * x, h, hid).expect("consistent dims"),
            weights: Tensor::filled(m, x, 1.0 / x as f64),
        }
    }
}

/// Graph handles for the three filter nets.
#[derive(Clone, Debug)]
pub struct FilterVars {
    pub t: Vec<Var>,
    pub z: Vec<Var>,
    pub g: Vec<Var>,
}

impl FilterVars {
    pub fn all(&self) -> Vec<Var> {
        self.t.iter().chain(&self.z).chain(&self.g).copied().collect()
    }
}

/// `M` stacked beliefs: hiddens `[M·X, H]`, weights `[M, X]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchBelief {
    pub hiddens: Tensor,
    pub weights: Tensor,
}

impl BatchBelief {
    pub fn instances(&self) -> usize {
        self.weights.rows()
    }

    /// Copies instance `i` out as its own batch of one.
    pub fn instance(&self, i: usize) -> BatchBelief {
        let x = self.weights.cols();
        let h = self.hiddens.cols();
        let hid = self.hiddens.data()[i * x * h..(i + 1) * x * h].to_vec();
        BatchBelief {
            hiddens: Tensor::matrix(x, h, hid).expect("consistent dims"),
            weights: Tensor::row(self.weights.row_slice(i).to_vec()),
        }
    }

    /// Stacks batches in order.
    pub fn stack(parts: &[&BatchBelief]) -> Result<BatchBelief> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let (x, h) = (first.weights.cols(), first.hiddens.cols());
        let mut hid = Vec::new();
        let mut w = Vec::new();
        for p in parts {
            if p.weights.cols() != x || p.hiddens.cols() != h {
                return Err(Error::Dimension("belief batches with different particle shapes".into()));
            }
            hid.extend_from_slice(p.hiddens.data());
            w.extend_from_slice(p.weights.data());
        }
        let m = w.len() / x;
        Ok(BatchBelief {
            hiddens: Tensor::matrix(m * x, h, hid)?,
            weights: Tensor::matrix(m, x, w)?,
        })
    }
}

fn particle_owner(m: usize, x: usize) -> Vec<usize> {
    (0..m * x).map(|r| r / x).collect()
}

fn check_rows(g: &Graph, v: Var, rows: usize, cols: usize, what: &str) -> Result<()> {
    let (r, c) = g.value(v).dims2();
    if (r, c) != (rows, cols) {
        return Err(Error::Dimension(format!("{what}: expected [{rows}, {cols}], found [{r}, {c}]")));
    }
    Ok(())
}

/// `T(h, a_prev, o)` for every particle: `[M·X, H]`.
pub fn g_propagate(
    g: &mut Graph,
    nets: &FilterNets,
    vars: &FilterVars,
    hiddens: Var,
    prev_action: Var,
    obs: Var,
) -> Result<Var> {
    let m = g.value(obs).rows();
    let x = nets.n_particles();
    check_rows(g, hiddens, m * x, nets.hidden_dim(), "particle hiddens")?;
    check_rows(g, prev_action, m, nets.n_actions, "previous action")?;
    check_rows(g, obs, m, nets.obs_dim, "observation")?;
    let ctx = g.concat_cols(&[prev_action, obs])?;
    Ok(mlp_forward_split(g, &nets.transition.spec, &vars.t, hiddens, ctx, &particle_owner(m, x))?)
}

/// `Z(o, h)` per particle, strictly positive: `[M, X]`.
pub fn g_likelihoods(g: &mut Graph, nets: &FilterNets, vars: &FilterVars, obs: Var, hiddens: Var) -> Result<Var> {
    let m = g.value(obs).rows();
    let x = nets.n_particles();
    check_rows(g, hiddens, m * x, nets.hidden_dim(), "particle hiddens")?;
    check_rows(g, obs, m, nets.obs_dim, "observation")?;
    let logit = mlp_forward_split(g, &nets.likelihood.spec, &vars.z, hiddens, obs, &particle_owner(m, x))?;
    let logit = g.clamp(logit, LOGIT_MIN, LOGIT_MAX);
    let l = g.exp(logit);
    Ok(g.reshape(l, m, x)?)
}

/// Soft-resample on rows of `[M, X]` weights and likelihoods.
pub fn g_soft_resample(g: &mut Graph, weights: Var, likelihoods: Var, beta: f64) -> Result<Var> {
    check_beta(beta)?;
    let x = g.value(weights).cols();
    let lw = g.mul(likelihoods, weights)?;
    let blw = g.scale(lw, beta);
    let num = g.add_scalar(blw, (1.0 - beta) / x as f64);
    let den = g.row_sum(blw)?;
    let den = g.add_scalar(den, 1.0 - beta);
    Ok(g.div_col(num, den)?)
}

/// Weighted mean of hiddens concatenated with the weight entropy: `[M, H + 1]`.
pub fn g_summary(g: &mut Graph, hiddens: Var, weights: Var) -> Result<Var> {
    let (m, x) = g.value(weights).dims2();
    let wcol = g.reshape(weights, m * x, 1)?;
    let weighted = g.mul_col(hiddens, wcol)?;
    let mean = g.segment_sum(weighted, x)?;
    let wlw = g.xlogx(weights);
    let neg_ent = g.row_sum(wlw)?;
    let ent = g.neg(neg_ent);
    Ok(g.concat_cols(&[mean, ent])?)
}

/// `κ = G(o, summary)`: `[M, K]`.
pub fn g_compress(g: &mut Graph, nets: &FilterNets, vars: &FilterVars, obs: Var, hiddens: Var, weights: Var) -> Result<Var> {
    let m = g.value(obs).rows();
    check_rows(g, obs, m, nets.obs_dim, "observation")?;
    check_rows(g, weights, m, nets.n_particles(), "particle weights")?;
    check_rows(g, hiddens, m * nets.n_particles(), nets.hidden_dim(), "particle hiddens")?;
    let summary = g_summary(g, hiddens, weights)?;
    let input = g.concat_cols(&[obs, summary])?;
    Ok(mlp_forward(g, &nets.generator.spec, &vars.g, input)?)
}

/// Output of [`g_belief_update`].
#[derive(Clone, Copy, Debug)]
pub struct UpdateVars {
    pub kappa: Var,
    pub hiddens: Var,
    pub weights: Var,
}

/// One filter step: propagate, score, soft-resample, compress.
#[allow(clippy::too_many_arguments)]
pub fn g_belief_update(
    g: &mut Graph,
    nets: &FilterNets,
    vars: &FilterVars,
    hiddens: Var,
    weights: Var,
    prev_action: Var,
    obs: Var,
    beta: f64,
) -> Result<UpdateVars> {
    check_beta(beta)?;
    let new_h = g_propagate(g, nets, vars, hiddens, prev_action, obs)?;
    let scored = if nets.config.likelihood_on_propagated { new_h } else { hiddens };
    let l = g_likelihoods(g, nets, vars, obs, scored)?;
    let new_w = g_soft_resample(g, weights, l, beta)?;
    let kappa = g_compress(g, nets, vars, obs, new_h, new_w)?;
    Ok(UpdateVars {
        kappa,
        hiddens: new_h,
        weights: new_w,
    })
}

/// Inference-only batched update on plain tensors.
pub fn batch_update(
    nets: &FilterNets,
    belief: &BatchBelief,
    prev_action: &Tensor,
    obs: &Tensor,
) -> Result<(Tensor, BatchBelief)> {
    let mut g = Graph::new();
    let vars = nets.bind(&mut g, false);
    let h = g.constant(belief.hiddens.clone());
    let w = g.constant(belief.weights.clone());
    let a = g.constant(prev_action.clone());
    let o = g.constant(obs.clone());
    let out = g_belief_update(&mut g, nets, &vars, h, w, a, o, nets.config.beta)?;
    let kappa = g.value(out.kappa).clone();
    if !kappa.is_finite() {
        return Err(Error::NonFinite {
            what: "kappa",
            detail: "belief update produced a non-finite compressed state".into(),
        });
    }
    Ok((
        kappa,
        BatchBelief {
            hiddens: g.value(out.hiddens).clone(),
            weights: g.value(out.weights).clone(),
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub hidden: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub agent_id: usize,
    pub particles: Vec<Particle>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedInfoState {
    pub kappa: Vec<f64>,
}

impl Belief {
    fn to_batch(&self) -> Result<BatchBelief> {
        let x = self.particles.len();
        let h = self.particles.first().map_or(0, |p| p.hidden.len());
        if x == 0 || h == 0 {
            return invalid("belief has no particles");
        }
        let hid: Vec<f64> = self.particles.iter().flat_map(|p| p.hidden.iter().copied()).collect();
        if hid.len() != x * h {
            return Err(Error::Dimension("particles with different hidden sizes".into()));
        }
        Ok(BatchBelief {
            hiddens: Tensor::matrix(x, h, hid)?,
            weights: Tensor::row(self.particles.iter().map(|p| p.weight).collect()),
        })
    }

    fn from_batch(agent_id: usize, b: &BatchBelief) -> Self {
        let particles = (0..b.weights.cols())
            .map(|i| Particle {
                hidden: b.hiddens.row_slice(i).to_vec(),
                weight: b.weights.data()[i],
            })
            .collect();
        Self { agent_id, particles }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }
}

/// `X` particles sharing hidden `b1` with uniform weights.
pub fn init_belief(b1: &[f64], x: usize, agent_id: usize) -> Result<Belief> {
    if x < 1 {
        return invalid(format!("need at least one particle, got {x}"));
    }
    if b1.is_empty() {
        return invalid("initial hidden must be non-empty");
    }
    Ok(Belief {
        agent_id,
        particles: vec![
            Particle {
                hidden: b1.to_vec(),
                weight: 1.0 / x as f64,
            };
            x
        ],
    })
}

fn check_particle_count(nets: &FilterNets, belief: &Belief) -> Result<()> {
    if belief.particles.len() != nets.n_particles() {
        return Err(Error::Dimension(format!(
            "belief has {} particles, filter expects {}",
            belief.particles.len(),
            nets.n_particles()
        )));
    }
    Ok(())
}

/// New hidden per particle.
pub fn propagate(nets: &FilterNets, belief: &Belief, prev_action: &[f64], obs: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_particle_count(nets, belief)?;
    let b = belief.to_batch()?;
    let mut g = Graph::new();
    let vars = nets.bind(&mut g, false);
    let h = g.constant(b.hiddens);
    let a = g.constant(Tensor::row(prev_action.to_vec()));
    let o = g.constant(Tensor::row(obs.to_vec()));
    let out = g_propagate(&mut g, nets, &vars, h, a, o)?;
    let t = g.value(out);
    Ok((0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect())
}

/// Strictly positive likelihood per hidden.
pub fn likelihoods(nets: &FilterNets, obs: &[f64], prev_hiddens: &[Vec<f64>]) -> Result<Vec<f64>> {
    if prev_hiddens.len() != nets.n_particles() {
        return Err(Error::Dimension(format!(
            "{} hiddens, filter expects {}",
            prev_hiddens.len(),
            nets.n_particles()
        )));
    }
    let mut g = Graph::new();
    let vars = nets.bind(&mut g, false);
    let h = g.constant(Tensor::from_rows(prev_hiddens)?);
    let o = g.constant(Tensor::row(obs.to_vec()));
    let l = g_likelihoods(&mut g, nets, &vars, o, h)?;
    let out = g.value(l).data().to_vec();
    if out.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::NonFinite {
            what: "likelihood",
            detail: format!("{out:?}"),
        });
    }
    Ok(out)
}

/// `w'ₓ = (β·Lₓwₓ + (1−β)/X) / (Σⱼ β·Lⱼwⱼ + (1−β))`.
pub fn soft_resample(weights: &[f64], likelihoods: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if weights.is_empty() || weights.len() != likelihoods.len() {
        return Err(Error::Dimension(format!(
            "{} weights vs {} likelihoods",
            weights.len(),
            likelihoods.len()
        )));
    }
    if weights.iter().chain(likelihoods).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "soft_resample input",
            detail: format!("weights {weights:?}, likelihoods {likelihoods:?}"),
        });
    }
    let x = weights.len() as f64;
    let den: f64 = weights.iter().zip(likelihoods).map(|(w, l)| beta * l * w).sum::<f64>() + (1.0 - beta);
    Ok(weights
        .iter()
        .zip(likelihoods)
        .map(|(w, l)| (beta * l * w + (1.0 - beta) / x) / den)
        .collect())
}

/// `κ` from the observation and the particle summary.
pub fn compress(nets: &FilterNets, obs: &[f64], belief: &Belief) -> Result<CompressedInfoState> {
    check_particle_count(nets, belief)?;
    let b = belief.to_batch()?;
    let mut g = Graph::new();
    let vars = nets.bind(&mut g, false);
    let o = g.constant(Tensor::row(obs.to_vec()));
    let h = g.constant(b.hiddens);
    let w = g.constant(b.weights);
    let k = g_compress(&mut g, nets, &vars, o, h, w)?;
    Ok(CompressedInfoState {
        kappa: g.value(k).data().to_vec(),
    })
}

/// One full update for a single agent.
pub fn belief_update(
    nets: &FilterNets,
    belief: &Belief,
    prev_action: &[f64],
    obs: &[f64],
    beta: f64,
) -> Result<(CompressedInfoState, Belief)> {
    check_particle_count(nets, belief)?;
    let b = belief.to_batch()?;
    let mut g = Graph::new();
    let vars = nets.bind(&mut g, false);
    let h = g.constant(b.hiddens);
    let w = g.constant(b.weights);
    let a = g.constant(Tensor::row(prev_action.to_vec()));
    let o = g.constant(Tensor::row(obs.to_vec()));
    let out = g_belief_update(&mut g, nets, &vars, h, w, a, o, beta)?;
    let next = BatchBelief {
        hiddens: g.value(out.hiddens).clone(),
        weights: g.value(out.weights).clone(),
    };
    Ok((
        CompressedInfoState {
            kappa: g.value(out.kappa).data().to_vec(),
        },
        Belief::from_batch(belief.agent_id, &next),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> BeliefConfig {
        BeliefConfig {
            n_particles: 4,
            hidden_dim: 3,
            kappa_dim: 2,
            net_width: 5,
            ..Default::default()
        }
    }

    fn nets(seed: u64) -> FilterNets {
        FilterNets::init(small(), 3, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn init_uniform() {
        let b = init_belief(&[0.0; 3], 4, 0).unwrap();
        assert_eq!(b.weights(), vec![0.25; 4]);
        let one = init_belief(&[0.0; 3], 1, 0).unwrap();
        assert_eq!(one.weights(), vec![1.0]);
        assert!(init_belief(&[0.0], 0, 0).is_err());
        let (a, c) = (init_belief(&[0.5; 3], 4, 0).unwrap(), init_belief(&[0.5; 3], 4, 1).unwrap());
        assert_eq!(a.particles, c.particles);
    }

    #[test]
    fn soft_resample_examples() {
        let w = soft_resample(&[0.5, 0.5], &[0.6, 0.2], 0.5).unwrap();
        assert!((w[0] - 0.4 / 0.7).abs() < 1e-12 && (w[1] - 0.3 / 0.7).abs() < 1e-12);
        let w = soft_resample(&[0.2, 0.8], &[3.0, 0.5], 0.0).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = soft_resample(&[0.2, 0.8], &[3.0, 0.5], 1.0).unwrap();
        assert!((w[0] - 0.6 / 1.0).abs() < 1e-12);
        assert!(soft_resample(&[1.0], &[1.0], 1.5).is_err());
        assert!(soft_resample(&[1.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn zero_transition_gives_bias_image() {
        let mut n = nets(1);
        n.transition.params.iter_mut().for_each(|p| p.fill(0.0));
        let last = n.transition.params.len() - 1;
        n.transition.params[last].fill(0.3);
        let b = init_belief(&[0.1, -0.2, 0.4], 4, 0).unwrap();
        let h = propagate(&n, &b, &[1.0, 0.0], &[0.5, 0.5, 0.5]).unwrap();
        for row in h {
            for v in row {
                assert!((v - 0.3f64.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn likelihoods_positive_and_equal_for_equal_hiddens() {
        let n = nets(2);
        let l = likelihoods(&n, &[1.0, -1.0, 0.0], &vec![vec![0.2, 0.1, -0.3]; 4]).unwrap();
        assert!(l.iter().all(|&v| v > 0.0));
        assert!(l.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn single_particle_summary_has_zero_entropy() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::row(vec![0.3, -0.7]));
        let w = g.constant(Tensor::row(vec![1.0]));
        let s = g_summary(&mut g, h, w).unwrap();
        assert_eq!(g.value(s).data(), &[0.3, -0.7, 0.0]);
    }

    #[test]
    fn update_weights_normalized_and_beta_zero_uniform() {
        let n = nets(3);
        let mut b = init_belief(&[0.0; 3], 4, 0).unwrap();
        b.particles[1].hidden = vec![0.5, -0.5, 0.2];
        let (_, out) = belief_update(&n, &b, &[0.0, 1.0], &[0.3, 0.1, -0.9], 0.5).unwrap();
        assert!((out.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (_, out) = belief_update(&n, &b, &[0.0, 1.0], &[0.3, 0.1, -0.9], 0.0).unwrap();
        assert!(out.weights().iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn shared_parameters_identical_updates() {
        let n = nets(4);
        let a = init_belief(&[0.0; 3], 4, 0).unwrap();
        let b = init_belief(&[0.0; 3], 4, 1).unwrap();
        let (ka, ba) = belief_update(&n, &a, &[1.0, 0.0], &[0.2, 0.2, 0.2], 0.5).unwrap();
        let (kb, bb) = belief_update(&n, &b, &[1.0, 0.0], &[0.2, 0.2, 0.2], 0.5).unwrap();
        assert_eq!(ka, kb);
        assert_eq!(ba.particles, bb.particles);
    }

    #[test]
    fn dimension_mismatch_fails() {
        let n = nets(5);
        let b = init_belief(&[0.0; 3], 4, 0).unwrap();
        assert!(propagate(&n, &b, &[1.0, 0.0], &[0.0; 2]).is_err());
        let short = init_belief(&[0.0; 3], 3, 0).unwrap();
        assert!(compress(&n, &[0.0; 3], &short).is_err());
    }

    #[test]
    fn batched_update_matches_single_agent() {
        let n = nets(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let beliefs: Vec<BatchBelief> = (0..3)
            .map(|_| {
                let mut b = n.initial_batch(1);
                b.hiddens = Tensor::uniform(4, 3, 0.8, &mut rng);
                b
            })
            .collect();
        let refs: Vec<&BatchBelief> = beliefs.iter().collect();
        let stacked = BatchBelief::stack(&refs).unwrap();
        let acts = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        let obs = Tensor::uniform(3, 3, 1.0, &mut rng);
        let (k, nb) = batch_update(&n, &stacked, &acts, &obs).unwrap();
        for i in 0..3 {
            let single = Belief::from_batch(i, &beliefs[i]);
            let (ki, bi) = belief_update(&n, &single, acts.row_slice(i), obs.row_slice(i), n.config.beta).unwrap();
            assert_eq!(ki.kappa, k.row_slice(i));
            assert_eq!(bi, Belief::from_batch(i, &nb.instance(i)));
        }
    }
}
