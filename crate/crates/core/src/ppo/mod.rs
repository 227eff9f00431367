//! Proximal policy optimisation with GAE advantages and a factored
//! categorical policy.

mod buffer;
mod collect;
mod loss;
mod metrics;
mod trainer;

pub use buffer::{compute_gae, RolloutBuffer, Transition};
pub use collect::Collector;
pub use loss::{clip_target, ppo_loss, surrogate, LossCoefs, LossOutput, Minibatch};
pub use metrics::{GailColumns, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use trainer::{PpoTrainer, UpdateMetrics};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{fmt_list, KvDoc, KvError};
use crate::nn::{AdamConfig, NnError};
use crate::EnvError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite loss in update {update}; parameters restored")]
    NonFiniteLoss { update: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Transitions per update, summed over all environments.
    pub horizon: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub n_envs: usize,
    pub hidden: usize,
}

pub const PPO_KEYS: &[&str] = &[
    "clip_eps",
    "gamma",
    "gae_lambda",
    "horizon",
    "epochs",
    "minibatch_size",
    "vf_coef",
    "ent_coef",
    "total_steps",
    "seed",
    "lr",
    "max_grad_norm",
    "n_envs",
    "hidden",
];

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            horizon: 2048,
            epochs: 4,
            minibatch_size: 256,
            vf_coef: 0.5,
            ent_coef: 0.005,
            total_steps: 1_000_000,
            seed: 0,
            lr: 3e-4,
            max_grad_norm: 0.5,
            n_envs: 8,
            hidden: 128,
        }
    }
}

impl PpoConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<(), KvError> {
        let check = |ok: bool, key: &str, reason: &str| if ok { Ok(()) } else { Err(KvError::invalid(key, reason)) };
        check(self.clip_eps > 0.0 && self.clip_eps < 1.0, "clip_eps", "must lie in (0, 1)")?;
        check((0.0..=1.0).contains(&self.gamma), "gamma", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda", "must lie in [0, 1]")?;
        check(self.n_envs >= 1, "n_envs", "must be at least 1")?;
        check(self.horizon >= self.n_envs && self.horizon.is_multiple_of(self.n_envs), "horizon", "must be a positive multiple of n_envs")?;
        check(self.epochs >= 1, "epochs", "must be at least 1")?;
        check(self.minibatch_size >= 1 && self.minibatch_size <= self.horizon, "minibatch_size", "must lie in [1, horizon]")?;
        check(self.vf_coef >= 0.0 && self.vf_coef.is_finite(), "vf_coef", "must be finite and non-negative")?;
        check(self.ent_coef >= 0.0 && self.ent_coef.is_finite(), "ent_coef", "must be finite and non-negative")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be positive")?;
        check(self.max_grad_norm > 0.0, "max_grad_norm", "must be positive")?;
        check(self.hidden >= 1, "hidden", "must be at least 1")?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.set("clip_eps", fmt_list(&[self.clip_eps]));
        doc.set("gamma", fmt_list(&[self.gamma]));
        doc.set("gae_lambda", fmt_list(&[self.gae_lambda]));
        doc.set("horizon", self.horizon.to_string());
        doc.set("epochs", self.epochs.to_string());
        doc.set("minibatch_size", self.minibatch_size.to_string());
        doc.set("vf_coef", fmt_list(&[self.vf_coef]));
        doc.set("ent_coef", fmt_list(&[self.ent_coef]));
        doc.set("total_steps", self.total_steps.to_string());
        doc.set("seed", self.seed.to_string());
        doc.set("lr", fmt_list(&[self.lr]));
        doc.set("max_grad_norm", fmt_list(&[self.max_grad_norm]));
        doc.set("n_envs", self.n_envs.to_string());
        doc.set("hidden", self.hidden.to_string());
        doc
    }

    pub fn apply_kv(base: &PpoConfig, doc: &KvDoc) -> Result<PpoConfig, KvError> {
        let mut c = base.clone();
        macro_rules! field {
            ($($name:ident),*) => {
                $(if let Some(v) = doc.parse_value(stringify!($name))? {
                    c.$name = v;
                })*
            };
        }
        field!(
            clip_eps,
            gamma,
            gae_lambda,
            horizon,
            epochs,
            minibatch_size,
            vf_coef,
            ent_coef,
            total_steps,
            seed,
            lr,
            max_grad_norm,
            n_envs,
            hidden
        );
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PpoConfig::default().validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let c = PpoConfig { clip_eps: 0.1, total_steps: 5000, seed: 9, ..PpoConfig::default() };
        let back = PpoConfig::apply_kv(&PpoConfig::default(), &c.to_kv()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_out_of_range_values() {
        for (key, value) in [("clip_eps", "1.0"), ("gamma", "1.5"), ("horizon", "1001"), ("minibatch_size", "0")] {
            let mut doc = KvDoc::default();
            doc.set(key, value);
            let err = PpoConfig::apply_kv(&PpoConfig::default(), &doc).unwrap_err();
            assert_eq!(err.field(), Some(key), "{key}");
        }
    }
}
