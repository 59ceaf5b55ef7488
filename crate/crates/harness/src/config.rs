//! Run configuration: a TOML file with top-level run keys and `[env]`,
//! `[battle]`, `[train]` and `[train.belief]` sections. Every field has a
//! default, so an empty file is a valid matrix-game VRM run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use teamregret::envs::matrix::{canonical_payoffs, load_payoffs};
use teamregret::envs::{BattleConfig, BattleGame, Env, MatrixGame, Payoffs};
use teamregret::trainer::{Method, TrainConfig};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Matrix,
    Battle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Payoff file for the matrix game; the canonical game when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoffs: Option<PathBuf>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Matrix,
            payoffs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    pub iterations: u64,
    /// Evaluate and checkpoint every this many iterations (0 = only at the end).
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub env: EnvConfig,
    pub battle: BattleConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Vrm,
            seed: 0,
            iterations: 5000,
            eval_every: 50,
            eval_episodes: 50,
            env: EnvConfig::default(),
            battle: BattleConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file. Defaults that depend on other keys are filled
    /// in when the file leaves them out: the ε decay spans the first half of
    /// `iterations`, and battle runs use 4 episodes per batch.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(format!("{e}")))?;
        let train = raw.get("train").and_then(|t| t.as_table());
        let has = |key: &str| train.is_some_and(|t| t.contains_key(key));
        if !has("epsilon_decay_iterations") {
            cfg.train.epsilon_decay_iterations = cfg.iterations / 2;
        }
        if !has("batch_episodes") && cfg.env.kind == EnvKind::Battle {
            cfg.train.batch_episodes = 4;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative payoff paths are taken from the config file's directory.
        if let (Some(p), Some(dir)) = (&cfg.env.payoffs, path.parent()) {
            if p.is_relative() {
                cfg.env.payoffs = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    /// The fully resolved config, as written next to every run's outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.iterations == 0 {
            return Err(HarnessError::Config("iterations must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::Config("eval_episodes must be positive".into()));
        }
        match self.env.kind {
            EnvKind::Battle => {
                self.battle.validate()?;
                if self.env.payoffs.is_some() {
                    return Err(HarnessError::Config("payoffs only apply to the matrix game".into()));
                }
            }
            EnvKind::Matrix => {}
        }
        Ok(())
    }

    pub fn payoffs(&self) -> Result<Payoffs> {
        Ok(match &self.env.payoffs {
            Some(p) => load_payoffs(p)?,
            None => canonical_payoffs(),
        })
    }

    pub fn build_env(&self) -> Result<Box<dyn Env>> {
        Ok(match self.env.kind {
            EnvKind::Matrix => Box::new(MatrixGame::new(self.payoffs()?)?),
            EnvKind::Battle => Box::new(BattleGame::new(self.battle.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_matrix_run() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.method, Method::Vrm);
        assert_eq!(c.env.kind, EnvKind::Matrix);
        assert_eq!(c.train.epsilon_decay_iterations, 2500);
        assert_eq!(c.train.batch_episodes, 32);
    }

    #[test]
    fn derived_defaults_and_overrides() {
        let c = RunConfig::from_toml("method = \"bvrm_shaping\"\niterations = 100\n[env]\nkind = \"battle\"\n").unwrap();
        assert_eq!(c.train.epsilon_decay_iterations, 50);
        assert_eq!(c.train.batch_episodes, 4);
        let c = RunConfig::from_toml("[env]\nkind = \"battle\"\n[train]\nbatch_episodes = 9\nepsilon_decay_iterations = 7\n").unwrap();
        assert_eq!((c.train.batch_episodes, c.train.epsilon_decay_iterations), (9, 7));
    }

    #[test]
    fn round_trip_through_text() {
        let mut c = RunConfig::from_toml("[train.belief]\nn_particles = 4\n").unwrap();
        c.seed = 17;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("method = \"coma\"").is_err());
        assert!(RunConfig::from_toml("[train]\ngamma = 2.0").is_err());
        assert!(RunConfig::from_toml("[train]\nunknown = 1").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[env]\nkind = \"battle\"\n[battle]\nview = 4").is_err());
    }
}
