use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::GailColumns;
use super::{ppo_loss, Collector, LossCoefs, MetricsRow, Minibatch, PpoConfig, RolloutBuffer, TrainError};
use crate::env::{SceneConfig, OBS_DIM};
use crate::nn::{AdamState, Mlp};
use crate::policy::{features, policy_net, value_net};

/// Averages over all minibatch steps of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateMetrics {
    pub objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub rejected: usize,
    pub minibatches: usize,
}

/// Actor-critic pair with its optimisers and rollout pool.
///
/// All randomness (initialisation, start positions, action sampling and
/// minibatch shuffling) derives from `config.seed`, so a run is a pure
/// function of scene and configuration.
#[derive(Debug, Clone)]
pub struct PpoTrainer {
    config: PpoConfig,
    policy: Mlp,
    value: Mlp,
    policy_opt: AdamState,
    value_opt: AdamState,
    collector: Collector,
    shuffle_rng: ChaCha8Rng,
    global_step: u64,
    updates: u64,
}

impl PpoTrainer {
    pub fn new(scene: &SceneConfig, config: PpoConfig) -> Result<Self, TrainError> {
        let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = policy_net(config.hidden, seeds.random());
        let value = value_net(config.hidden, seeds.random());
        let collector = Collector::new(scene, config.n_envs, seeds.random(), seeds.random())?;
        let shuffle_rng = ChaCha8Rng::seed_from_u64(seeds.random());
        Ok(Self {
            policy_opt: AdamState::new(&policy, config.adam()),
            value_opt: AdamState::new(&value, config.adam()),
            config,
            policy,
            value,
            collector,
            shuffle_rng,
            global_step: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn value(&self) -> &Mlp {
        &self.value
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn is_finished(&self) -> bool {
        self.global_step >= self.config.total_steps
    }

    /// Collection phase: one rollout of `horizon` transitions.
    pub fn collect(&mut self) -> Result<RolloutBuffer, TrainError> {
        let buffer = self.collector.collect(&self.policy, &self.value, self.config.horizon)?;
        self.global_step += buffer.len() as u64;
        Ok(buffer)
    }

    /// Update phase: GAE on the buffer's training rewards, then `epochs`
    /// passes of shuffled minibatch Adam steps on the combined loss.
    ///
    /// A non-finite loss or gradient restores the pre-update networks and
    /// optimiser states and aborts the update.
    pub fn update(&mut self, buffer: &mut RolloutBuffer) -> Result<UpdateMetrics, TrainError> {
        let cfg = &self.config;
        buffer.compute_advantages(cfg.gamma, cfg.gae_lambda);
        let adv = normalized(&buffer.advantages);
        let coefs = LossCoefs { clip_eps: cfg.clip_eps, vf_coef: cfg.vf_coef, ent_coef: cfg.ent_coef };
        let snapshot = (self.policy.clone(), self.value.clone(), self.policy_opt.clone(), self.value_opt.clone());
        self.updates += 1;

        let mut m = UpdateMetrics::default();
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(cfg.minibatch_size) {
                let batch = minibatch(buffer, &adv, chunk);
                let step = ppo_loss(&self.policy, &self.value, &batch, &coefs).and_then(|mut out| {
                    if !out.loss.is_finite() {
                        return Ok(None);
                    }
                    out.policy_grads.clip_norm(cfg.max_grad_norm);
                    out.value_grads.clip_norm(cfg.max_grad_norm);
                    self.policy_opt.step(&mut self.policy, &out.policy_grads)?;
                    self.value_opt.step(&mut self.value, &out.value_grads)?;
                    Ok(Some(out))
                });
                match step {
                    Ok(Some(out)) => {
                        m.objective += out.objective;
                        m.value_loss += out.value_loss;
                        m.entropy += out.entropy;
                        m.clip_fraction += out.clip_fraction;
                        m.approx_kl += out.approx_kl;
                        m.rejected += out.rejected;
                        m.minibatches += 1;
                    }
                    Ok(None) | Err(_) => {
                        (self.policy, self.value, self.policy_opt, self.value_opt) = snapshot;
                        log::error!("update {}: non-finite loss, parameters restored", self.updates);
                        return Err(TrainError::NonFiniteLoss { update: self.updates });
                    }
                }
            }
        }
        let k = m.minibatches as f64;
        m.objective /= k;
        m.value_loss /= k;
        m.entropy /= k;
        m.clip_fraction /= k;
        m.approx_kl /= k;
        Ok(m)
    }

    /// Metrics row for a finished update.
    pub fn row(&self, buffer: &RolloutBuffer, m: &UpdateMetrics, gail: Option<GailColumns>) -> MetricsRow {
        MetricsRow {
            global_step: self.global_step,
            mean_episode_reward: buffer.mean_episode_return(),
            env_reward_mean: buffer.env_reward_mean(),
            value_loss: m.value_loss,
            entropy: m.entropy,
            clip_fraction: m.clip_fraction,
            gail,
        }
    }

    /// One collect-then-update iteration.
    pub fn iterate(&mut self) -> Result<MetricsRow, TrainError> {
        let mut buffer = self.collect()?;
        let m = self.update(&mut buffer)?;
        Ok(self.row(&buffer, &m, None))
    }

    /// Writes `policy.json` and `value.json` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> std::io::Result<()> {
        self.policy.save(&dir.join("policy.json"))?;
        self.value.save(&dir.join("value.json"))
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

fn minibatch(buffer: &RolloutBuffer, adv: &[f64], idx: &[usize]) -> Minibatch {
    let mut features_m = Array2::zeros((idx.len(), OBS_DIM));
    for (mut row, &i) in features_m.rows_mut().into_iter().zip(idx) {
        row.assign(&ndarray::ArrayView1::from(&features(&buffer.transitions[i].observation)));
    }
    Minibatch {
        features: features_m,
        actions: idx.iter().map(|&i| buffer.transitions[i].action).collect(),
        old_log_probs: idx.iter().map(|&i| buffer.transitions[i].log_prob).collect(),
        advantages: idx.iter().map(|&i| adv[i]).collect(),
        returns: idx.iter().map(|&i| buffer.returns[i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_has_zero_mean_unit_std() {
        let v = normalized(&[1.0, 2.0, 3.0, 10.0]);
        let mean = v.iter().sum::<f64>() / 4.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
