use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RolloutBuffer, TrainError, Transition};
use crate::env::{Observation, SceneConfig, StartRegion, TissueEnv};
use crate::nn::Mlp;
use crate::policy::{feature_matrix, log_prob, sample_action};

/// Pool of environments stepped in lock step. Episodes carry over between
/// rollouts; every reset draws a fresh start from the start region.
#[derive(Debug, Clone)]
pub struct Collector {
    envs: Vec<TissueEnv>,
    observations: Vec<Observation>,
    episode_sums: Vec<f64>,
    region: StartRegion,
    start_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
    episodes_started: u64,
    /// Normalised returns of the most recent finished episodes, newest last.
    recent: VecDeque<f64>,
}

impl Collector {
    pub fn new(scene: &SceneConfig, n_envs: usize, start_seed: u64, action_seed: u64) -> Result<Self, TrainError> {
        let mut c = Self {
            envs: (0..n_envs).map(|_| TissueEnv::new(scene.clone())).collect(),
            observations: Vec::with_capacity(n_envs),
            episode_sums: vec![0.0; n_envs],
            region: StartRegion::for_scene(scene),
            start_rng: ChaCha8Rng::seed_from_u64(start_seed),
            action_rng: ChaCha8Rng::seed_from_u64(action_seed),
            episodes_started: 0,
            recent: VecDeque::with_capacity(n_envs),
        };
        for e in 0..n_envs {
            let obs = c.reset_env(e)?;
            c.observations.push(obs);
        }
        Ok(c)
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn episodes_started(&self) -> u64 {
        self.episodes_started
    }

    fn reset_env(&mut self, e: usize) -> Result<Observation, TrainError> {
        let start = self.region.sample(&mut self.start_rng);
        let seed = self.episodes_started;
        self.episodes_started += 1;
        self.episode_sums[e] = 0.0;
        Ok(self.envs[e].reset(start, seed)?)
    }

    /// Gathers exactly `horizon` transitions (`horizon / n_envs` per environment)
    /// with actions sampled from the policy's per-branch categoricals.
    pub fn collect(&mut self, policy: &Mlp, value: &Mlp, horizon: usize) -> Result<RolloutBuffer, TrainError> {
        let n = self.envs.len();
        assert!(horizon.is_multiple_of(n), "horizon must be a multiple of the pool size");
        let mut transitions = Vec::with_capacity(horizon);
        let mut episode_returns = Vec::new();
        for _ in 0..horizon / n {
            let x = feature_matrix(self.observations.iter());
            let probs = policy.forward_batch(x.view())?;
            let values = value.forward_batch(x.view())?;
            for e in 0..n {
                let row = probs.row(e);
                let row = row.as_slice().expect("contiguous row");
                let action = sample_action(row, &mut self.action_rng);
                let step = self.envs[e].step(action)?;
                transitions.push(Transition {
                    observation: self.observations[e],
                    action,
                    reward: step.reward,
                    env_reward: step.reward,
                    value: values[[e, 0]],
                    log_prob: log_prob(row, action),
                    done: step.done,
                });
                self.episode_sums[e] += step.reward;
                self.observations[e] = if step.done {
                    let max_steps = self.envs[e].scene().max_episode_steps as f64;
                    episode_returns.push(self.episode_sums[e] / max_steps);
                    self.reset_env(e)?
                } else {
                    step.observation
                };
            }
        }
        // Episodes finishing in this rollout, topped up with earlier ones so
        // that the curve is defined even when a rollout finishes none.
        let mut recent_returns: Vec<f64> = self.recent.iter().copied().collect();
        recent_returns.extend(&episode_returns);
        let keep = n.max(episode_returns.len());
        recent_returns.drain(..recent_returns.len().saturating_sub(keep));
        self.recent = recent_returns[recent_returns.len().saturating_sub(n)..].iter().copied().collect();
        let x = feature_matrix(self.observations.iter());
        let last_values = value.forward_batch(x.view())?.column(0).to_vec();
        Ok(RolloutBuffer {
            n_envs: n,
            transitions,
            last_values,
            episode_returns,
            recent_returns,
            advantages: Vec::new(),
            returns: Vec::new(),
        })
    }
}
