use diffcore::{grad_check, DiffError, GradCheckOptions, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamregret::belief::{batch_update, g_belief_update, BeliefConfig, FilterNets, FilterVars};

fn nets(seed: u64, beta: f64, on_propagated: bool) -> FilterNets {
    let cfg = BeliefConfig {
        n_particles: 3,
        hidden_dim: 4,
        kappa_dim: 3,
        net_width: 5,
        beta,
        likelihood_on_propagated: on_propagated,
        init_spread: 0.4,
    };
    FilterNets::init(cfg, 3, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

struct Inputs {
    actions: Vec<Tensor>,
    obs: Vec<Tensor>,
    probe: Tensor,
}

fn inputs(seed: u64, steps: usize, m: usize, k: usize) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = (0..steps)
        .map(|_| {
            let mut t = Tensor::zeros(m, 2);
            for r in 0..m {
                let a = rng.random_range(0..2);
                t.data_mut()[r * 2 + a] = 1.0;
            }
            t
        })
        .collect();
    let obs = (0..steps).map(|_| Tensor::uniform(m, 3, 1.0, &mut rng)).collect();
    Inputs {
        actions,
        obs,
        probe: Tensor::uniform(m, k, 1.0, &mut rng),
    }
}

fn split(n: &FilterNets, vars: &[Var]) -> FilterVars {
    let (a, b) = (n.transition.params.len(), n.likelihood.params.len());
    FilterVars {
        t: vars[..a].to_vec(),
        z: vars[a..a + b].to_vec(),
        g: vars[a + b..].to_vec(),
    }
}

/// `Σ probe ⊙ κ_T + Σ w_T²` after `steps` chained updates.
fn chained_loss(n: &FilterNets, inp: &Inputs, g: &mut Graph, vars: &[Var]) -> Result<Var, DiffError> {
    let fv = split(n, vars);
    let m = inp.obs[0].rows();
    let init = n.initial_batch(m);
    let mut h = g.constant(init.hiddens);
    let mut w = g.constant(init.weights);
    let mut kappa = None;
    for (a, o) in inp.actions.iter().zip(&inp.obs) {
        let a = g.constant(a.clone());
        let o = g.constant(o.clone());
        let out = g_belief_update(g, n, &fv, h, w, a, o, n.config.beta)
            .map_err(|e| DiffError::InvalidArgument(e.to_string()))?;
        h = out.hiddens;
        w = out.weights;
        kappa = Some(out.kappa);
    }
    let p = g.constant(inp.probe.clone());
    let pk = g.mul(p, kappa.expect("at least one step"))?;
    let s1 = g.sum(pk);
    let w2 = g.square(w);
    let s2 = g.sum(w2);
    g.add(s1, s2)
}

fn params(n: &FilterNets) -> Vec<Tensor> {
    [&n.transition, &n.likelihood, &n.generator]
        .iter()
        .flat_map(|m| m.params.iter().cloned())
        .collect()
}

#[test]
fn single_update_gradients() {
    for seed in 0..4 {
        for (beta, prop) in [(0.5, false), (0.9, true), (1.0, false)] {
            let n = nets(seed, beta, prop);
            let inp = inputs(seed + 10, 1, 2, n.kappa_dim());
            let f = |g: &mut Graph, v: &[Var]| chained_loss(&n, &inp, g, v);
            let r = grad_check(&f, &params(&n), GradCheckOptions::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(r.passes(1e-4), "seed {seed} beta {beta}: {:?}", r.worst);
        }
    }
}

#[test]
fn five_chained_updates_gradients() {
    for seed in 0..4 {
        let n = nets(seed, 0.5, false);
        let inp = inputs(seed + 20, 5, 2, n.kappa_dim());
        let f = |g: &mut Graph, v: &[Var]| chained_loss(&n, &inp, g, v);
        let r = grad_check(&f, &params(&n), GradCheckOptions::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert!(r.passes(1e-3), "seed {seed}: {:?}", r.worst);
    }
}

#[test]
fn graph_chain_matches_inference_updates() {
    let n = nets(3, 0.5, false);
    let inp = inputs(4, 5, 3, n.kappa_dim());
    let mut b = n.initial_batch(3);
    let mut g = Graph::new();
    let fv = n.bind(&mut g, false);
    let mut h = g.constant(b.hiddens.clone());
    let mut w = g.constant(b.weights.clone());
    for (a, o) in inp.actions.iter().zip(&inp.obs) {
        let (k, next) = batch_update(&n, &b, a, o).unwrap();
        let av = g.constant(a.clone());
        let ov = g.constant(o.clone());
        let out = g_belief_update(&mut g, &n, &fv, h, w, av, ov, 0.5).unwrap();
        assert_eq!(g.value(out.kappa), &k);
        assert_eq!(g.value(out.weights), &next.weights);
        h = out.hiddens;
        w = out.weights;
        b = next;
    }
}
