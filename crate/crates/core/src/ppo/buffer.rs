use crate::env::{Action, Observation};

/// One environment transition as seen by the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub action: Action,
    /// Training reward; starts equal to `env_reward` and may be rewritten
    /// (e.g. by adversarial reward mixing) before the update.
    pub reward: f64,
    /// Extrinsic environment reward, never rewritten.
    pub env_reward: f64,
    pub value: f64,
    pub log_prob: f64,
    /// Episode ended with this transition.
    pub done: bool,
}

/// Fixed-length rollout gathered from `n_envs` environments in lock step.
///
/// Transitions are stored time-major: index `t * n_envs + e` is step `t` of
/// environment `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub transitions: Vec<Transition>,
    /// `V(s_T)` of each environment's observation after the last step.
    pub last_values: Vec<f64>,
    /// Normalised extrinsic returns of the episodes that finished in this rollout.
    pub episode_returns: Vec<f64>,
    /// `episode_returns`, preceded by earlier finished episodes when fewer
    /// than `n_envs` finished in this rollout.
    pub recent_returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn steps_per_env(&self) -> usize {
        self.transitions.len() / self.n_envs
    }

    pub fn has_advantages(&self) -> bool {
        self.advantages.len() == self.transitions.len() && !self.transitions.is_empty()
    }

    /// Fills `advantages` and `returns` from the current training rewards.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let n = self.transitions.len();
        let steps = self.steps_per_env();
        self.advantages = vec![0.0; n];
        self.returns = vec![0.0; n];
        for e in 0..self.n_envs {
            let column =
                |f: fn(&Transition) -> f64| -> Vec<f64> { (0..steps).map(|t| f(&self.transitions[t * self.n_envs + e])).collect() };
            let rewards = column(|tr| tr.reward);
            let values = column(|tr| tr.value);
            let dones: Vec<bool> = (0..steps).map(|t| self.transitions[t * self.n_envs + e].done).collect();
            let (adv, ret) = compute_gae(&rewards, &values, &dones, self.last_values[e], gamma, lambda);
            for t in 0..steps {
                self.advantages[t * self.n_envs + e] = adv[t];
                self.returns[t * self.n_envs + e] = ret[t];
            }
        }
    }

    pub fn env_reward_mean(&self) -> f64 {
        self.transitions.iter().map(|t| t.env_reward).sum::<f64>() / self.transitions.len().max(1) as f64
    }

    /// Mean of `recent_returns`; `None` before the first episode finishes.
    pub fn mean_episode_return(&self) -> Option<f64> {
        if self.recent_returns.is_empty() {
            None
        } else {
            Some(self.recent_returns.iter().sum::<f64>() / self.recent_returns.len() as f64)
        }
    }
}

/// Generalised advantage estimation over one environment's step sequence.
///
/// `dones[t]` marks that the episode ended with step `t`, so the bootstrap
/// value after it is zero; otherwise step `t` bootstraps from `values[t + 1]`
/// or, for the last step, from `last_value`. Returns `(advantages, returns)`
/// with `returns = advantages + values`.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(rewards.len() == values.len() && values.len() == dones.len(), "GAE inputs differ in length");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 == n { last_value } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}
