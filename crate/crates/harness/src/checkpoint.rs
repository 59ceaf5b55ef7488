//! Training state on disk: every parameter group, the lagged and target
//! copies, both optimizers, the iteration counter and the run config.
//!
//! Episode RNG streams are derived from `(seed, iteration, episode)`, so the
//! seed and iteration counter are the complete RNG state.

use std::path::Path;

use diffcore::{Checkpoint, Precision};
use serde_json::json;
use teamregret::trainer::Trainer;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

const FORMAT: &str = "teamregret-train";

fn v_group_shapes(t: &Trainer) -> Vec<Vec<usize>> {
    let b = &t.bundle;
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut add = |m: &diffcore::Mlp| out.extend(m.params.iter().map(|p| p.shape().to_vec()));
    if let Some(m) = &b.v_net {
        add(m);
    }
    if let Some(m) = &b.shaping {
        add(m);
    }
    if !t.config.freeze_filter {
        if let Some(f) = &b.filter {
            add(&f.transition);
            add(&f.likelihood);
            add(&f.generator);
        }
    }
    out
}

pub fn to_checkpoint(trainer: &Trainer, run: &RunConfig) -> Checkpoint {
    let mut c = Checkpoint::new(Precision::F64);
    for (name, t) in trainer.bundle.named_tensors() {
        c.push(name, t.clone());
    }
    let q_shapes: Vec<Vec<usize>> = trainer.bundle.q_net.params.iter().map(|p| p.shape().to_vec()).collect();
    let opt_q = c.push_optimizer("opt_q", &trainer.opt_q, &q_shapes);
    let opt_v = trainer
        .opt_v
        .as_ref()
        .map(|o| c.push_optimizer("opt_v", o, &v_group_shapes(trainer)));
    c.meta = json!({
        "format": FORMAT,
        "method": trainer.bundle.method,
        "env": trainer.bundle.env,
        "iteration": trainer.iteration,
        "seed": trainer.seed,
        "config": run,
        "opt_q": opt_q,
        "opt_v": opt_v,
    });
    c
}

pub fn save_checkpoint(trainer: &Trainer, run: &RunConfig, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    to_checkpoint(trainer, run).save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn from_checkpoint(c: &Checkpoint) -> Result<(RunConfig, Trainer)> {
    let meta = &c.meta;
    if meta["format"] != FORMAT {
        return Err(HarnessError::Mismatch(format!(
            "not a training checkpoint (format {})",
            meta["format"]
        )));
    }
    let run: RunConfig = serde_json::from_value(meta["config"].clone())
        .map_err(|e| HarnessError::Config(format!("checkpoint config: {e}")))?;
    let iteration = meta["iteration"]
        .as_u64()
        .ok_or_else(|| HarnessError::Mismatch("checkpoint has no iteration counter".into()))?;
    let seed = meta["seed"]
        .as_u64()
        .ok_or_else(|| HarnessError::Mismatch("checkpoint has no seed".into()))?;
    let env = run.build_env()?;
    let mut trainer = Trainer::new(run.method, env.spec(), run.train.clone(), seed)?;
    let stored_env: teamregret::envs::EnvSpec = serde_json::from_value(meta["env"].clone())
        .map_err(|e| HarnessError::Mismatch(format!("checkpoint env: {e}")))?;
    if stored_env != *env.spec() {
        return Err(HarnessError::Mismatch(format!(
            "checkpoint was trained on {stored_env:?}, its config builds {:?}",
            env.spec()
        )));
    }
    for (name, t) in trainer.bundle.named_tensors_mut() {
        *t = c.expect(&name, t.shape())?.clone();
    }
    trainer.opt_q = c.read_optimizer("opt_q", &meta["opt_q"])?;
    if trainer.opt_v.is_some() {
        trainer.opt_v = Some(c.read_optimizer("opt_v", &meta["opt_v"])?);
    }
    trainer.iteration = iteration;
    Ok((run, trainer))
}

pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, Trainer)> {
    let c = Checkpoint::load(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    from_checkpoint(&c)
}
