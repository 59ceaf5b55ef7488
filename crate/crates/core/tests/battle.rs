use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamregret::envs::battle::N_ACTIONS;
use teamregret::envs::{BattleConfig, BattleGame, Env, RewardKind};

fn small() -> BattleConfig {
    BattleConfig {
        width: 10,
        height: 8,
        units_per_team: 5,
        hp: 2,
        max_ticks: 30,
        view: 5,
    }
}

fn random_actions(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..N_ACTIONS)).collect()
}

#[test]
fn default_layout_places_sixteen_units() {
    let cfg = BattleConfig::default();
    for seed in 0..20 {
        let s = BattleGame::layout(&cfg, seed);
        assert_eq!(s.units.len(), 16);
        let occ = s.occupancy();
        assert_eq!(occ.iter().filter(|c| c.is_some()).count(), 16);
        assert!(s.units.iter().all(|u| (u.team == 0) == (u.x < cfg.width / 2)));
        assert_eq!(s, BattleGame::layout(&cfg, seed));
    }
}

#[test]
fn team_reward_examples() {
    let mut g = BattleGame::new(BattleConfig::default()).unwrap();
    g.reset(3).unwrap();
    // Move everyone of team 0 one step north where possible and compare to
    // the number of successful moves.
    let actions: Vec<usize> = (0..16).map(|i| if i < 8 { 1 } else { 0 }).collect();
    let t = g.step(&actions).unwrap();
    let moves = g.events.iter().filter(|e| e.kind == RewardKind::Move && e.agent < 8).count();
    assert!((t.team_rewards[0] - moves as f64 * -0.005).abs() < 1e-12);
    assert_eq!(t.team_rewards[1], 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_play_invariants(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = BattleGame::new(small()).unwrap();
        let mut t = g.reset(seed).unwrap();
        let n = g.state.units.len();
        let mut alive_prev = n;
        while !t.done {
            let actions = random_actions(&mut rng, n);
            let before: Vec<(usize, usize)> = g.state.units.iter().map(|u| (u.x, u.y)).collect();
            t = g.step(&actions).unwrap();
            let occ = g.state.occupancy();
            let alive = g.state.units.iter().filter(|u| u.alive()).count();
            prop_assert_eq!(occ.iter().filter(|c| c.is_some()).count(), alive, "two units share a cell");
            prop_assert!(alive <= alive_prev);
            alive_prev = alive;
            for (i, u) in g.state.units.iter().enumerate() {
                let (x, y) = before[i];
                prop_assert!(x.abs_diff(u.x) + y.abs_diff(u.y) <= 1);
            }
            for team in 0..2 {
                let mut by_kind = [0usize; 5];
                for e in g.events.iter().filter(|e| e.agent / 5 == team) {
                    by_kind[e.kind as usize] += 1;
                }
                let expected = by_kind[0] as f64 * -0.005
                    + by_kind[1] as f64 * 5.0
                    + by_kind[2] as f64 * 0.2
                    + by_kind[3] as f64 * -0.1
                    + by_kind[4] as f64 * -0.1;
                prop_assert!((t.team_rewards[team] - expected).abs() < 1e-9);
            }
        }
        prop_assert!(g.state.tick <= small().max_ticks);
    }

    #[test]
    fn mirrored_states_give_mirrored_outcomes(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BattleGame::new(small()).unwrap();
        a.reset(seed).unwrap();
        // Break the mirrored start so the check is not trivially symmetric.
        for _ in 0..3 {
            let acts = random_actions(&mut rng, 10);
            a.step(&acts).unwrap();
            if a.done() {
                return Ok(());
            }
        }
        let mut b = BattleGame::new(small()).unwrap();
        b.set_state(a.state.mirrored());
        for _ in 0..10 {
            if a.done() {
                break;
            }
            let acts = random_actions(&mut rng, 10);
            let swapped: Vec<usize> = (0..10).map(|i| acts[(i + 5) % 10]).collect();
            let ta = a.step(&acts).unwrap();
            let tb = b.step(&swapped).unwrap();
            prop_assert_eq!(&b.state, &a.state.mirrored());
            // Events arrive in a different order, so sums may differ in the last bit.
            prop_assert!((ta.team_rewards[0] - tb.team_rewards[1]).abs() < 1e-12);
            prop_assert!((ta.team_rewards[1] - tb.team_rewards[0]).abs() < 1e-12);
            prop_assert_eq!(&ta.obs[0], &tb.obs[5]);
            prop_assert_eq!(ta.done, tb.done);
        }
    }

    #[test]
    fn seed_and_actions_determine_trajectory(seed in 0u64..1_000_000) {
        let play = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut g = BattleGame::new(small()).unwrap();
            let mut out = vec![g.reset(seed).unwrap()];
            while !out.last().unwrap().done {
                out.push(g.step(&random_actions(&mut rng, 10)).unwrap());
            }
            (out, g.scores())
        };
        prop_assert_eq!(play(), play());
    }
}
