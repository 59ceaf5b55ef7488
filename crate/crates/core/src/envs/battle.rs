//! Two-team grid battle.
//!
//! Each unit either idles, moves one cell in a cardinal direction, or
//! attacks the adjacent cell in a cardinal direction. Moves resolve first
//! and simultaneously: a move succeeds only into a cell that was empty at
//! the start of the tick and that no other unit targets. Attacks then
//! resolve simultaneously on the post-move positions, 1 damage per hit.
//!
//! Both teams see the world in a canonical frame where their own side is
//! on the left: team 1's x axis is mirrored, for observations as well as
//! for its east/west actions. The same policy can therefore play either side.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Env, EnvSpec, Transition};
use crate::error::{Error, Result};

pub const N_ACTIONS: usize = 9;
const POOL: usize = 5;
/// `(dx, dy)` for N, E, S, W in the canonical frame.
const DIRS: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BattleConfig {
    pub width: usize,
    pub height: usize,
    pub units_per_team: usize,
    pub hp: u32,
    pub max_ticks: usize,
    /// Side of the square observation window; odd.
    pub view: usize,
}

impl Default for BattleConfig {
    fn default() -> Self {
        Self {
            width: 20,
            height: 20,
            units_per_team: 8,
            hp: 2,
            max_ticks: 60,
            view: 7,
        }
    }
}

impl BattleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 1 || self.units_per_team == 0 || self.hp == 0 || self.max_ticks == 0 {
            return Err(Error::Env(format!("invalid battle config {self:?}")));
        }
        if self.view.is_multiple_of(2) {
            return Err(Error::Env(format!("view must be odd, got {}", self.view)));
        }
        if self.units_per_team > (self.width / 2) * self.height {
            return Err(Error::Env(format!(
                "{} units do not fit in a {}x{} half grid",
                self.units_per_team,
                self.width / 2,
                self.height
            )));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        4 * self.view * self.view + 3
    }

    pub fn state_dim(&self) -> usize {
        4 * POOL * POOL + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Move,
    KillEnemy,
    AttackEnemy,
    AttackBlank,
    AttackedOrKilled,
}

impl RewardKind {
    pub fn utility(self) -> f64 {
        match self {
            RewardKind::Move => -0.005,
            RewardKind::KillEnemy => 5.0,
            RewardKind::AttackEnemy => 0.2,
            RewardKind::AttackBlank => -0.1,
            RewardKind::AttackedOrKilled => -0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardEvent {
    pub kind: RewardKind,
    pub agent: usize,
}

/// Sum of event utilities. The caller passes one team's events.
pub fn team_reward(events: &[RewardEvent]) -> f64 {
    events.iter().map(|e| e.kind.utility()).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub team: usize,
    pub x: usize,
    pub y: usize,
    pub hp: u32,
}

impl Unit {
    pub fn alive(&self) -> bool {
        self.hp > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BattleState {
    pub width: usize,
    pub height: usize,
    /// Team-major; dead units stay with `hp == 0`.
    pub units: Vec<Unit>,
    pub tick: usize,
}

impl BattleState {
    pub fn occupancy(&self) -> Vec<Option<usize>> {
        let mut grid = vec![None; self.width * self.height];
        for (i, u) in self.units.iter().enumerate() {
            if u.alive() {
                grid[u.y * self.width + u.x] = Some(i);
            }
        }
        grid
    }

    pub fn alive_count(&self, team: usize) -> usize {
        self.units.iter().filter(|u| u.team == team && u.alive()).count()
    }

    /// Actual `(dx, dy)` of canonical direction `d` for `team`.
    fn dir(team: usize, d: usize) -> (i64, i64) {
        let (dx, dy) = DIRS[d];
        if team == 1 {
            (-dx, dy)
        } else {
            (dx, dy)
        }
    }

    fn offset(&self, x: usize, y: usize, (dx, dy): (i64, i64)) -> Option<(usize, usize)> {
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height).then_some((nx as usize, ny as usize))
    }

    /// Exchanges the teams and mirrors x; canonical views are preserved.
    pub fn mirrored(&self) -> Self {
        let n = self.units.len() / 2;
        let mut units = Vec::with_capacity(self.units.len());
        for i in 0..self.units.len() {
            let u = &self.units[(i + n) % self.units.len()];
            units.push(Unit {
                team: 1 - u.team,
                x: self.width - 1 - u.x,
                y: u.y,
                hp: u.hp,
            });
        }
        Self {
            width: self.width,
            height: self.height,
            units,
            tick: self.tick,
        }
    }
}

pub struct BattleGame {
    pub config: BattleConfig,
    spec: EnvSpec,
    pub state: BattleState,
    /// Events of the last step.
    pub events: Vec<RewardEvent>,
}

impl BattleGame {
    pub fn new(config: BattleConfig) -> Result<Self> {
        config.validate()?;
        let spec = EnvSpec {
            n_teams: 2,
            agents_per_team: config.units_per_team,
            n_actions: N_ACTIONS,
            obs_dim: config.obs_dim(),
            state_dim: config.state_dim(),
            max_steps: config.max_ticks,
        };
        let state = BattleState {
            width: config.width,
            height: config.height,
            units: Vec::new(),
            tick: 0,
        };
        Ok(Self {
            config,
            spec,
            state,
            events: Vec::new(),
        })
    }

    /// Team 0 on random cells of the left half, team 1 on the mirror images.
    pub fn layout(config: &BattleConfig, seed: u64) -> BattleState {
        let half = config.width / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = sample(&mut rng, half * config.height, config.units_per_team).into_vec();
        let mut units: Vec<Unit> = cells
            .iter()
            .map(|&c| Unit {
                team: 0,
                x: c % half,
                y: c / half,
                hp: config.hp,
            })
            .collect();
        let mirror: Vec<Unit> = units
            .iter()
            .map(|u| Unit {
                team: 1,
                x: config.width - 1 - u.x,
                ..u.clone()
            })
            .collect();
        units.extend(mirror);
        BattleState {
            width: config.width,
            height: config.height,
            units,
            tick: 0,
        }
    }

    pub fn set_state(&mut self, state: BattleState) {
        self.state = state;
        self.events.clear();
    }

    fn observe(&self, agent: usize) -> Vec<f64> {
        let s = &self.state;
        let u = &s.units[agent];
        let mut o = vec![0.0; self.config.obs_dim()];
        if !u.alive() {
            return o;
        }
        let v = self.config.view;
        let r = (v / 2) as i64;
        let sign = if u.team == 1 { -1 } else { 1 };
        let grid = s.occupancy();
        let hp = self.config.hp as f64;
        for wy in 0..v {
            for wx in 0..v {
                let base = 4 * (wy * v + wx);
                let (dx, dy) = (wx as i64 - r, wy as i64 - r);
                match s.offset(u.x, u.y, (sign * dx, dy)) {
                    None => o[base] = 1.0,
                    Some((cx, cy)) => {
                        if let Some(j) = grid[cy * s.width + cx] {
                            let other = &s.units[j];
                            o[base + if other.team == u.team { 1 } else { 2 }] = 1.0;
                            o[base + 3] = other.hp as f64 / hp;
                        }
                    }
                }
            }
        }
        let n = 4 * v * v;
        let cx = if u.team == 1 { s.width - 1 - u.x } else { u.x };
        o[n] = u.hp as f64 / hp;
        o[n + 1] = cx as f64 / (s.width - 1) as f64;
        o[n + 2] = if s.height > 1 { u.y as f64 / (s.height - 1) as f64 } else { 0.0 };
        o
    }

    fn global_state(&self, team: usize) -> Vec<f64> {
        let s = &self.state;
        let mut g = vec![0.0; self.config.state_dim()];
        let units = self.config.units_per_team as f64;
        let hp = self.config.hp as f64;
        for u in s.units.iter().filter(|u| u.alive()) {
            let cx = if team == 1 { s.width - 1 - u.x } else { u.x };
            let bx = cx * POOL / s.width;
            let by = u.y * POOL / s.height;
            let base = 4 * (by * POOL + bx);
            let own = usize::from(u.team != team);
            g[base + own] += 1.0 / units;
            g[base + 2 + own] += u.hp as f64 / (units * hp);
        }
        g[4 * POOL * POOL] = s.tick as f64 / self.config.max_ticks as f64;
        g
    }

    pub fn done(&self) -> bool {
        self.state.alive_count(0) == 0 || self.state.alive_count(1) == 0 || self.state.tick >= self.config.max_ticks
    }

    fn transition(&self, team_rewards: Vec<f64>) -> Transition {
        let done = self.done();
        let n = self.state.units.len();
        Transition {
            obs: (0..n).map(|i| self.observe(i)).collect(),
            alive: self.state.units.iter().map(|u| u.alive() && !done).collect(),
            team_rewards,
            states: vec![self.global_state(0), self.global_state(1)],
            done,
        }
    }

    /// Resolves one tick for canonical actions of all units. Returns events.
    pub fn step_battle(&mut self, actions: &[usize]) -> Result<Vec<RewardEvent>> {
        let n = self.state.units.len();
        if actions.len() != n {
            return Err(Error::Env(format!("battle needs {n} actions, got {}", actions.len())));
        }
        if let Some((i, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= N_ACTIONS) {
            return Err(Error::Env(format!("unit {i}: action {a} out of range 0..{N_ACTIONS}")));
        }
        if self.done() {
            return Err(Error::Env("step called on a finished battle".into()));
        }
        let s = &mut self.state;
        let w = s.width;
        let mut events = Vec::new();

        // Moves.
        let start = s.occupancy();
        let mut targets: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut claims = vec![0u32; w * s.height];
        for (i, u) in s.units.iter().enumerate() {
            if !u.alive() || !(1..=4).contains(&actions[i]) {
                continue;
            }
            if let Some((tx, ty)) = s.offset(u.x, u.y, BattleState::dir(u.team, actions[i] - 1)) {
                if start[ty * w + tx].is_none() {
                    targets[i] = Some((tx, ty));
                    claims[ty * w + tx] += 1;
                }
            }
        }
        for (i, t) in targets.iter().enumerate() {
            if let Some((tx, ty)) = *t {
                if claims[ty * w + tx] == 1 {
                    s.units[i].x = tx;
                    s.units[i].y = ty;
                    events.push(RewardEvent {
                        kind: RewardKind::Move,
                        agent: i,
                    });
                }
            }
        }

        // Attacks.
        let grid = s.occupancy();
        let mut hits: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, u) in s.units.iter().enumerate() {
            if !u.alive() || actions[i] < 5 {
                continue;
            }
            let victim = s
                .offset(u.x, u.y, BattleState::dir(u.team, actions[i] - 5))
                .and_then(|(tx, ty)| grid[ty * w + tx])
                .filter(|&j| s.units[j].team != u.team);
            match victim {
                Some(j) => hits[j].push(i),
                None => events.push(RewardEvent {
                    kind: RewardKind::AttackBlank,
                    agent: i,
                }),
            }
        }
        for (j, attackers) in hits.iter().enumerate() {
            if attackers.is_empty() {
                continue;
            }
            for &i in attackers {
                events.push(RewardEvent {
                    kind: RewardKind::AttackEnemy,
                    agent: i,
                });
                events.push(RewardEvent {
                    kind: RewardKind::AttackedOrKilled,
                    agent: j,
                });
            }
            let dmg = attackers.len() as u32;
            let victim = &mut s.units[j];
            victim.hp = victim.hp.saturating_sub(dmg);
            if victim.hp == 0 {
                for &i in attackers {
                    events.push(RewardEvent {
                        kind: RewardKind::KillEnemy,
                        agent: i,
                    });
                }
            }
        }
        s.tick += 1;
        self.events = events.clone();
        Ok(events)
    }

    fn team_rewards(&self, events: &[RewardEvent]) -> Vec<f64> {
        (0..2)
            .map(|t| {
                let mine: Vec<RewardEvent> = events
                    .iter()
                    .copied()
                    .filter(|e| self.state.units[e.agent].team == t)
                    .collect();
                team_reward(&mine)
            })
            .collect()
    }

    /// Attack an adjacent enemy if any (N, E, S, W order), otherwise step
    /// toward the nearest enemy along the longer axis.
    pub fn scripted(&self, team: usize) -> Vec<usize> {
        let s = &self.state;
        let grid = s.occupancy();
        let mut out = Vec::new();
        for u in s.units.iter().filter(|u| u.team == team) {
            if !u.alive() {
                out.push(0);
                continue;
            }
            let adjacent = (0..4).find(|&d| {
                s.offset(u.x, u.y, BattleState::dir(team, d))
                    .and_then(|(tx, ty)| grid[ty * s.width + tx])
                    .is_some_and(|j| s.units[j].team != team)
            });
            if let Some(d) = adjacent {
                out.push(5 + d);
                continue;
            }
            let target = s
                .units
                .iter()
                .filter(|e| e.team != team && e.alive())
                .min_by_key(|e| e.x.abs_diff(u.x) + e.y.abs_diff(u.y));
            let Some(e) = target else {
                out.push(0);
                continue;
            };
            let dx = e.x as i64 - u.x as i64;
            let dy = e.y as i64 - u.y as i64;
            // Canonical directions: team 1 sees x mirrored.
            let cdx = if team == 1 { -dx } else { dx };
            let horiz = if cdx > 0 { 2 } else { 4 };
            let vert = if dy > 0 { 3 } else { 1 };
            let order = if dx.abs() >= dy.abs() { [horiz, vert] } else { [vert, horiz] };
            let free = |a: usize, delta: i64| {
                delta != 0
                    && s.offset(u.x, u.y, BattleState::dir(team, a - 1))
                        .is_some_and(|(tx, ty)| grid[ty * s.width + tx].is_none())
            };
            let deltas = if dx.abs() >= dy.abs() { [dx, dy] } else { [dy, dx] };
            let a = order.iter().zip(deltas).find(|(&a, d)| free(a, *d)).map_or(0, |(&a, _)| a);
            out.push(a);
        }
        out
    }
}

impl Env for BattleGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn fresh(&self) -> Box<dyn Env> {
        Box::new(BattleGame::new(self.config.clone()).expect("config validated at construction"))
    }

    fn reset(&mut self, seed: u64) -> Result<Transition> {
        self.state = Self::layout(&self.config, seed);
        self.events.clear();
        Ok(self.transition(vec![0.0, 0.0]))
    }

    fn step(&mut self, actions: &[usize]) -> Result<Transition> {
        let events = self.step_battle(actions)?;
        let rewards = self.team_rewards(&events);
        Ok(self.transition(rewards))
    }

    fn scores(&self) -> Vec<f64> {
        let a = self.state.alive_count(0);
        let b = self.state.alive_count(1);
        match (a, b) {
            (0, 0) => vec![0.5, 0.5],
            (0, _) => vec![0.0, 1.0],
            (_, 0) => vec![1.0, 0.0],
            _ => vec![0.5, 0.5],
        }
    }

    fn scripted_actions(&self, team: usize) -> Option<Vec<usize>> {
        Some(self.scripted(team))
    }
}
