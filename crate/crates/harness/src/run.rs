//! Training and evaluation runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use teamregret::envs::Env;
use teamregret::trainer::{evaluate, Controller, NetworkBundle, Trainer};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{EnvKind, RunConfig};
use crate::error::{HarnessError, Result};
use crate::metrics::{append_timing, MetricsRow, MetricsWriter};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "run.toml";
pub const TIMING_FILE: &str = "timing.csv";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Stop after this many iterations instead of `iterations`; the schedule
    /// still follows the configured budget, so a capped run can be resumed.
    pub stop_at: Option<u64>,
    /// Force one rollout thread and leave `wall_seconds` empty, so repeated
    /// runs write identical metrics files.
    pub single_thread: bool,
    pub resume: Option<PathBuf>,
    /// Print a progress line every this many iterations (0 = silent).
    pub log_every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    /// Team 0's mean score (1 win, 0.5 draw, 0 loss); absent for one-team games.
    pub win_rate: Option<f64>,
    pub returns: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub iterations: u64,
    pub final_eval: Option<EvalReport>,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Opponent {
    /// Both teams play the evaluated checkpoint.
    SelfPlay,
    Scripted,
    Checkpoint(PathBuf),
}

impl Opponent {
    pub fn parse(s: &str) -> Self {
        match s {
            "self" => Opponent::SelfPlay,
            "scripted" => Opponent::Scripted,
            path => Opponent::Checkpoint(PathBuf::from(path)),
        }
    }
}

/// Greedy evaluation of `bundle` as team 0 against `opponent` (team 1).
pub fn evaluate_bundle(
    env: &mut dyn Env,
    bundle: &NetworkBundle,
    opponent: Option<&NetworkBundle>,
    scripted: bool,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let teams = env.spec().n_teams;
    let mut controllers = vec![Controller::Learner(bundle)];
    if teams == 2 {
        controllers.push(match (opponent, scripted) {
            (_, true) => Controller::Scripted,
            (Some(o), false) => Controller::Learner(o),
            (None, false) => Controller::Learner(bundle),
        });
    } else if opponent.is_some() || scripted {
        return Err(HarnessError::Config("a one-team environment has no opponent".into()));
    }
    let s = evaluate(env, &controllers, episodes, seed)?;
    Ok(EvalReport {
        episodes: s.episodes,
        mean_return: s.mean_return,
        win_rate: (teams == 2).then_some(s.win_rate),
        returns: s.returns,
    })
}

/// Evaluation used during training: self-play returns for one-team games,
/// the scripted opponent for battles.
fn training_eval(cfg: &RunConfig, env: &dyn Env, bundle: &NetworkBundle) -> Result<EvalReport> {
    let mut e = env.fresh();
    let scripted = cfg.env.kind == EnvKind::Battle;
    evaluate_bundle(e.as_mut(), bundle, None, scripted, cfg.eval_episodes, cfg.seed)
}

pub fn run_train(cfg: &RunConfig, out: &Path, opts: &TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::Io(format!("{}: {e}", out.display())))?;
    let env = cfg.build_env()?;
    let metrics_path = out.join(METRICS_FILE);

    let (mut trainer, mut writer) = match &opts.resume {
        Some(path) => {
            let (stored, trainer) = load_checkpoint(path)?;
            let same = RunConfig {
                iterations: cfg.iterations,
                train: teamregret::trainer::TrainConfig {
                    threads: cfg.train.threads,
                    ..stored.train.clone()
                },
                ..stored.clone()
            };
            if same != *cfg {
                return Err(HarnessError::Mismatch(format!(
                    "checkpoint {} was written by a different config:\n{}\nvs\n{}",
                    path.display(),
                    stored.to_toml(),
                    cfg.to_toml()
                )));
            }
            let writer = MetricsWriter::resume(&metrics_path, trainer.iteration)?;
            (trainer, writer)
        }
        None => {
            let trainer = Trainer::new(cfg.method, env.spec(), cfg.train.clone(), cfg.seed)?;
            (trainer, MetricsWriter::create(&metrics_path)?)
        }
    };
    if opts.single_thread {
        trainer.config.threads = 1;
    }
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    let timing = out.join(TIMING_FILE);
    if opts.resume.is_none() && timing.exists() {
        std::fs::remove_file(&timing)?;
    }

    let stop = opts.stop_at.unwrap_or(cfg.iterations).min(cfg.iterations);
    let start = Instant::now();
    let mut final_eval = None;
    while trainer.iteration < stop {
        let m = trainer.step(env.as_ref())?;
        let mut row = MetricsRow::from_metrics(&m);
        let secs = start.elapsed().as_secs_f64();
        if opts.single_thread {
            append_timing(&timing, m.iteration, secs)?;
        } else {
            row.wall_seconds = Some(secs);
        }
        let on_cadence = cfg.eval_every > 0 && m.iteration % cfg.eval_every == 0;
        if on_cadence || m.iteration == cfg.iterations {
            let ev = training_eval(cfg, env.as_ref(), &trainer.bundle)?;
            row.eval_return = Some(ev.mean_return);
            row.eval_win_rate = ev.win_rate;
            save_checkpoint(&trainer, cfg, &out.join(LATEST_CHECKPOINT))?;
            final_eval = Some(ev);
        }
        writer.write(&row)?;
        if opts.log_every > 0 && m.iteration % opts.log_every == 0 {
            eprintln!(
                "[{}] iter {} return {:.3} loss_q {:.4} eps {:.3} eval {}",
                cfg.method.name(),
                m.iteration,
                m.mean_return,
                m.loss_q,
                m.epsilon,
                row.eval_return.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
            );
        }
    }
    let ckpt = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&trainer, cfg, &ckpt)?;
    let report = TrainReport {
        seed: cfg.seed,
        iterations: trainer.iteration,
        final_eval,
        metrics: metrics_path,
        checkpoint: ckpt,
    };
    let json = serde_json::json!({ "config": cfg, "report": report });
    std::fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&json).expect("report serializes"))?;
    Ok(report)
}

pub fn run_eval(checkpoint: &Path, episodes: usize, opponent: &Opponent, seed: u64) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(HarnessError::Config("episodes must be positive".into()));
    }
    let (cfg, trainer) = load_checkpoint(checkpoint)?;
    let mut env = cfg.build_env()?;
    match opponent {
        Opponent::SelfPlay => evaluate_bundle(env.as_mut(), &trainer.bundle, None, false, episodes, seed),
        Opponent::Scripted => {
            if env.spec().n_teams != 2 {
                return Err(HarnessError::Config("the scripted opponent needs a two-team environment".into()));
            }
            evaluate_bundle(env.as_mut(), &trainer.bundle, None, true, episodes, seed)
        }
        Opponent::Checkpoint(other) => {
            let (other_cfg, other_trainer) = load_checkpoint(other)?;
            if other_trainer.bundle.env != trainer.bundle.env || other_cfg.env != cfg.env || other_cfg.battle != cfg.battle {
                return Err(HarnessError::Mismatch(format!(
                    "{} plays {:?}, {} plays {:?}",
                    checkpoint.display(),
                    trainer.bundle.env,
                    other.display(),
                    other_trainer.bundle.env
                )));
            }
            evaluate_bundle(env.as_mut(), &trainer.bundle, Some(&other_trainer.bundle), false, episodes, seed)
        }
    }
}
