//! Versioned JSON checkpoints of a training run: networks, optimizer
//! moments, schedule position, RNG streams and environment cursor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Method;
use crate::error::{Error, Result};
use crate::nn::HIDDEN;
use crate::ppo::{Env, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub method: Method,
    pub n_pairs: usize,
    pub trainer: Trainer,
    pub env: serde_json::Value,
}

impl Checkpoint {
    pub fn capture(method: Method, n_pairs: usize, trainer: &Trainer, env: &dyn Env) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            method,
            n_pairs,
            trainer: trainer.clone(),
            env: env.save_state(),
        }
    }

    /// Writes atomically: a sibling temporary file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.partial");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
        let version = raw.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let ck: Checkpoint = serde_json::from_value(raw)?;
        ck.check_architecture(ck.method, ck.n_pairs)?;
        Ok(ck)
    }

    /// Rejects a checkpoint whose networks or optimizer state do not match
    /// the architecture `method` uses at `n_pairs`.
    pub fn check_architecture(&self, method: Method, n_pairs: usize) -> Result<()> {
        if method != self.method {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {} policy, not {method}",
                self.method
            )));
        }
        let s = method.state_dim();
        let policy = [s, HIDDEN, HIDDEN, method.action_dim(n_pairs)];
        let value = [s, HIDDEN, HIDDEN, 1];
        let t = &self.trainer;
        let mismatch = t.policy.mlp.sizes() != policy
            || t.value.mlp.sizes() != value
            || t.policy.mlp.params().len() != t.policy.mlp.num_params()
            || t.value.mlp.params().len() != t.value.mlp.num_params()
            || t.opt.actor.m.len() != t.policy.mlp.num_params()
            || t.opt.actor.v.len() != t.policy.mlp.num_params()
            || t.opt.critic.m.len() != t.value.mlp.num_params()
            || t.opt.critic.v.len() != t.value.mlp.num_params();
        if mismatch {
            return Err(Error::Checkpoint(format!(
                "network shapes {:?}/{:?} do not match {policy:?}/{value:?}",
                t.policy.mlp.sizes(),
                t.value.mlp.sizes()
            )));
        }
        t.cfg.validate()
    }

    pub fn restore_env(&self, env: &mut dyn Env) -> Result<()> {
        env.load_state(&self.env)
    }
}
