use std::collections::BTreeMap;

use diffcore::{Graph, Mlp, MlpSpec, Activation, OutputActivation, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamregret::belief::{g_soft_resample, soft_resample};
use teamregret::envs::{EnvSpec, MatrixGame, Env};
use teamregret::regret::{
    consistency_check, joint_argmax, positive_clip, select_action, team_regret_shaped, InfoStateKey, RegretTable,
    SelectionMode, ShapingValue, TieBreak,
};
use teamregret::trainer::{evaluate, Controller, Method, NetworkBundle, TrainConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursion_reproduces_running_sum(seed in any::<u64>(), n_states in 1usize..6, n_actions in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<InfoStateKey> = (0..n_states)
            .map(|s| InfoStateKey::new(s % 2, &[(None, s as u32)], 1))
            .collect();
        let mut table = RegretTable::new();
        let mut oracle: BTreeMap<(InfoStateKey, usize), f64> = BTreeMap::new();
        for _ in 0..100 {
            let mut q = BTreeMap::new();
            let mut v = BTreeMap::new();
            for k in &keys {
                if rng.random_bool(0.3) {
                    continue;
                }
                v.insert(k.clone(), rng.random_range(-10.0..10.0));
                for a in 0..n_actions {
                    if rng.random_bool(0.7) {
                        q.insert((k.clone(), a), rng.random_range(-10.0..10.0));
                    }
                }
            }
            for ((k, a), qv) in &q {
                *oracle.entry((k.clone(), *a)).or_insert(0.0) += qv - v[k];
            }
            table.update(&q, &v).unwrap();
        }
        prop_assert_eq!(table.episodes(), 100);
        prop_assert_eq!(table.len(), oracle.len());
        for ((k, a), want) in &oracle {
            prop_assert_eq!(table.get(k, *a).to_bits(), want.to_bits());
        }
    }

    #[test]
    fn soft_resample_closed_forms(seed in any::<u64>(), x in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<f64> = (0..x).map(|_| rng.random_range(1e-3..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let l: Vec<f64> = (0..x).map(|_| rng.random_range(1e-6..1e6f64).sqrt()).collect();

        let bayes_den: f64 = w.iter().zip(&l).map(|(a, b)| a * b).sum();
        let exact = soft_resample(&w, &l, 1.0).unwrap();
        for i in 0..x {
            prop_assert!((exact[i] - w[i] * l[i] / bayes_den).abs() < 1e-12);
        }
        for v in soft_resample(&w, &l, 0.0).unwrap() {
            prop_assert!((v - 1.0 / x as f64).abs() < 1e-12);
        }
        let half = soft_resample(&w, &l, 0.5).unwrap();
        prop_assert!(half.iter().all(|&v| v > 0.0));
        prop_assert!((half.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // The graph version agrees with the plain one.
        let mut g = Graph::new();
        let wv = g.constant(Tensor::row(w.clone()));
        let lv = g.constant(Tensor::row(l.clone()));
        let out = g_soft_resample(&mut g, wv, lv, 0.5).unwrap();
        for (a, b) in g.value(out).data().iter().zip(&half) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn consistency_holds(seed in any::<u64>(), n in 2usize..5, a_idx in 0usize..3) {
        let a = [2, 3, 6][a_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = consistency_check(n, a, 20, &mut rng).unwrap();
        prop_assert_eq!(r.violations(), 0);
    }

    #[test]
    fn selection_ignores_any_shaping(seed in any::<u64>()) {
        // Per-agent regrets from random q/V nets; the team's shaped regret is
        // maximized by the tuple of individual argmaxes for any f(s).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..5usize);
        let a = rng.random_range(2..5usize);
        let spec = EnvSpec { n_teams: 1, agents_per_team: n, n_actions: a, obs_dim: 3, state_dim: 4, max_steps: 1 };
        let cfg = TrainConfig { hidden: vec![6], shaping_hidden: vec![5], ..TrainConfig::default() };
        let mut b = NetworkBundle::new(Method::Vrm, &spec, &cfg, &mut rng).unwrap();
        let kappa = Tensor::uniform(n, 3, 1.0, &mut rng);
        let state = Tensor::uniform(1, 4, 1.0, &mut rng);
        let scores = b.action_scores(&kappa).unwrap();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| scores.row_slice(i).to_vec()).collect();
        let individual: Vec<usize> = rows.iter().map(|r| {
            let mut best = 0;
            for j in 0..a { if r[j] > r[best] { best = j; } }
            best
        }).collect();
        let shaping_spec = MlpSpec::new(vec![4, 5, 1], Activation::Relu, OutputActivation::None).unwrap();
        for _ in 0..3 {
            let f = Mlp::init(shaping_spec.clone(), &mut rng).unwrap();
            let c = f.eval(&state).unwrap().item() + rng.random_range(-50.0..50.0);
            b.shaping = Some(f);
            prop_assert_eq!(b.action_scores(&kappa).unwrap(), scores.clone());
            let team = joint_argmax(n, a, |j| {
                let per: Vec<f64> = j.iter().enumerate().map(|(i, &x)| rows[i][x]).collect();
                team_regret_shaped(&per, ShapingValue(c))
            });
            prop_assert_eq!(&team, &individual);
        }
    }
}

#[test]
fn greedy_selection_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(positive_clip(-1.0), 0.0);
    assert_eq!(select_action(&[0.1, 0.5, -2.0], SelectionMode::Greedy, 0.0, TieBreak::Lowest, &mut rng).unwrap(), 1);
    assert_eq!(select_action(&[0.5, 0.5], SelectionMode::Greedy, 0.0, TieBreak::Lowest, &mut rng).unwrap(), 0);
    let mut counts = [0usize; 3];
    for _ in 0..3000 {
        counts[select_action(&[-1.0, -2.0, 0.0], SelectionMode::Greedy, 0.0, TieBreak::Lowest, &mut rng).unwrap()] += 1;
    }
    assert!(counts.iter().all(|&c| (800..1200).contains(&c)), "{counts:?}");
}

#[test]
fn zero_networks_act_uniformly_and_eval_is_deterministic() {
    let env = MatrixGame::canonical();
    let cfg = TrainConfig { hidden: vec![4], ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut b = NetworkBundle::new(Method::Vrm, env.spec(), &cfg, &mut rng).unwrap();
    for m in [&mut b.q_net, b.v_net.as_mut().unwrap()] {
        m.params.iter_mut().for_each(|p| p.fill(0.0));
    }
    let mut e = env.fresh();
    let r = evaluate(e.as_mut(), &[Controller::Learner(&b)], 400, 3).unwrap();
    assert_eq!(r.returns.len(), 400);
    // Uniform play: 3/4 of episodes miss the (0, 0) block and pay 7.
    let sevens = r.returns.iter().filter(|&&x| x == 7.0).count();
    assert!((250..350).contains(&sevens), "{sevens}");
    let again = evaluate(e.as_mut(), &[Controller::Learner(&b)], 400, 3).unwrap();
    assert_eq!(r, again);
}
