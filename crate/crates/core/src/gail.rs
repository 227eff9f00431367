//! Adversarial imitation: a discriminator over `(observation, action)` pairs
//! whose log-output becomes a reward proxy mixed with the extrinsic reward.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::DemoSet;
use crate::env::{Action, Observation, SceneConfig};
use crate::kv::{fmt_list, KvDoc, KvError};
use crate::nn::{AdamConfig, AdamState, Gradients, Head, Mlp, NnError};
use crate::policy::{pair_matrix, DISC_INPUT};
use crate::ppo::{GailColumns, MetricsRow, PpoConfig, PpoTrainer, RolloutBuffer, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GailConfig {
    /// Weight of the extrinsic reward.
    pub alpha: f64,
    /// Weight of the discriminator reward.
    pub beta: f64,
    pub disc_lr: f64,
    /// Passes over the generator rollout per policy update.
    pub disc_epochs: usize,
    /// Probability clamp inside the logarithms.
    pub delta: f64,
    /// Generator (and, equally, expert) samples per discriminator minibatch.
    pub demo_batch_size: usize,
    pub disc_hidden: usize,
}

pub const GAIL_KEYS: &[&str] = &["alpha", "beta", "disc_lr", "disc_epochs", "delta", "demo_batch_size", "disc_hidden"];

impl Default for GailConfig {
    fn default() -> Self {
        Self { alpha: 0.2, beta: 0.8, disc_lr: 3e-4, disc_epochs: 1, delta: 1e-3, demo_batch_size: 256, disc_hidden: 128 }
    }
}

impl GailConfig {
    /// Extrinsic reward only: the configuration under which the trainer
    /// reduces to plain PPO.
    pub fn ppo_reduction() -> Self {
        Self { alpha: 1.0, beta: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), KvError> {
        let check = |ok: bool, key: &str, reason: &str| if ok { Ok(()) } else { Err(KvError::invalid(key, reason)) };
        check(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha", "must be finite and non-negative")?;
        check(self.beta >= 0.0 && self.beta.is_finite(), "beta", "must be finite and non-negative")?;
        check(self.disc_lr > 0.0 && self.disc_lr.is_finite(), "disc_lr", "must be positive")?;
        check(self.disc_epochs >= 1, "disc_epochs", "must be at least 1")?;
        check(self.delta > 0.0 && self.delta < 0.5, "delta", "must lie in (0, 0.5)")?;
        check(self.demo_batch_size >= 1, "demo_batch_size", "must be at least 1")?;
        check(self.disc_hidden >= 1, "disc_hidden", "must be at least 1")?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.set("alpha", fmt_list(&[self.alpha]));
        doc.set("beta", fmt_list(&[self.beta]));
        doc.set("disc_lr", fmt_list(&[self.disc_lr]));
        doc.set("disc_epochs", self.disc_epochs.to_string());
        doc.set("delta", fmt_list(&[self.delta]));
        doc.set("demo_batch_size", self.demo_batch_size.to_string());
        doc.set("disc_hidden", self.disc_hidden.to_string());
        doc
    }

    pub fn apply_kv(base: &GailConfig, doc: &KvDoc) -> Result<GailConfig, KvError> {
        let mut c = base.clone();
        macro_rules! field {
            ($($name:ident),*) => {
                $(if let Some(v) = doc.parse_value(stringify!($name))? {
                    c.$name = v;
                })*
            };
        }
        field!(alpha, beta, disc_lr, disc_epochs, delta, demo_batch_size, disc_hidden);
        c.validate()?;
        Ok(c)
    }
}

/// `mean ln D(gen) + mean ln(1 - D(expert))` with `D` clamped to `[δ, 1 - δ]`.
/// Minimising it pushes generator outputs toward 0 and expert outputs toward 1.
pub fn discriminator_loss(d_gen: &[f64], d_expert: &[f64], delta: f64) -> f64 {
    assert!(!d_gen.is_empty() && !d_expert.is_empty(), "discriminator_loss needs both batches");
    let clamp = |d: f64| d.clamp(delta, 1.0 - delta);
    let g = d_gen.iter().map(|&d| clamp(d).ln()).sum::<f64>() / d_gen.len() as f64;
    let e = d_expert.iter().map(|&d| (1.0 - clamp(d)).ln()).sum::<f64>() / d_expert.len() as f64;
    g + e
}

/// Reward proxy `max(ln clamp(D, δ, 1), -1)` in `[-1, 0]`.
pub fn gail_reward(d: f64, delta: f64) -> f64 {
    d.clamp(delta, 1.0).ln().max(-1.0)
}

/// `α · r_env + β · r_gail`.
pub fn mixed_reward(r_env: f64, r_gail: f64, cfg: &GailConfig) -> f64 {
    cfg.alpha * r_env + cfg.beta * r_gail
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiscStats {
    /// Fraction of expert pairs with `D > 0.5`.
    pub acc_expert: f64,
    /// Fraction of generator pairs with `D < 0.5`.
    pub acc_gen: f64,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: Mlp,
    opt: AdamState,
    rng: ChaCha8Rng,
    pub stats: DiscStats,
}

impl Discriminator {
    pub fn new(hidden: usize, lr: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[DISC_INPUT, hidden, hidden, 1], Head::Sigmoid, 1.0, 1.0, rng.random());
        let opt = AdamState::new(&net, AdamConfig { lr, ..AdamConfig::default() });
        Self { net, opt, rng, stats: DiscStats::default() }
    }

    /// `D(s, a)` for every row of a pair matrix.
    pub fn predict(&self, pairs: &Array2<f64>) -> Result<Vec<f64>, NnError> {
        Ok(self.net.forward_batch(pairs.view())?.column(0).to_vec())
    }

    /// Exact gradient of [`discriminator_loss`] (zero where the clamp is active).
    pub fn loss_gradient(&self, gen: &Array2<f64>, expert: &Array2<f64>, delta: f64) -> Result<(f64, Gradients), NnError> {
        let tg = self.net.forward_tape(gen.view())?;
        let te = self.net.forward_tape(expert.view())?;
        let dg = tg.output.column(0).to_vec();
        let de = te.output.column(0).to_vec();
        let inside = |d: f64| d > delta && d < 1.0 - delta;
        let (ng, ne) = (dg.len() as f64, de.len() as f64);
        let gg = Array2::from_shape_fn((dg.len(), 1), |(i, _)| if inside(dg[i]) { 1.0 / (dg[i] * ng) } else { 0.0 });
        let ge = Array2::from_shape_fn((de.len(), 1), |(i, _)| if inside(de[i]) { -1.0 / ((1.0 - de[i]) * ne) } else { 0.0 });
        let mut grads = self.net.backward(&tg, &gg)?;
        grads.add_assign(&self.net.backward(&te, &ge)?);
        Ok((discriminator_loss(&dg, &de, delta), grads))
    }

    /// One Adam step toward separating the batches; returns
    /// [`discriminator_loss`] before the step.
    ///
    /// The step follows the cross-entropy `-mean ln(1 - D(gen)) - mean ln D(expert)`
    /// rather than the gradient of [`discriminator_loss`] itself. Both share
    /// the minimiser and, per sample, the sign of the logit gradient, but the
    /// latter weights generator samples by `1 - D` and expert samples by `D`,
    /// so pushing every output toward 1 is a descent direction and training
    /// collapses to a constant classifier. Cross-entropy weights each sample
    /// by how wrong it is instead.
    pub fn train_step(&mut self, gen: &Array2<f64>, expert: &Array2<f64>, delta: f64) -> Result<f64, NnError> {
        let tg = self.net.forward_tape(gen.view())?;
        let te = self.net.forward_tape(expert.view())?;
        let dg = tg.output.column(0).to_vec();
        let de = te.output.column(0).to_vec();
        let (ng, ne) = (dg.len() as f64, de.len() as f64);
        let gg = Array2::from_shape_fn((dg.len(), 1), |(i, _)| dg[i] / ng);
        let ge = Array2::from_shape_fn((de.len(), 1), |(i, _)| -(1.0 - de[i]) / ne);
        let mut grads = self.net.backward_logits(&tg, &gg)?;
        grads.add_assign(&self.net.backward_logits(&te, &ge)?);
        self.opt.step(&mut self.net, &grads)?;
        Ok(discriminator_loss(&dg, &de, delta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GailMetrics {
    pub gail_reward_mean: f64,
    pub disc_acc_expert: f64,
    pub disc_acc_gen: f64,
    pub disc_loss: f64,
}

impl From<GailMetrics> for GailColumns {
    fn from(m: GailMetrics) -> Self {
        GailColumns { gail_reward_mean: m.gail_reward_mean, disc_acc_expert: m.disc_acc_expert, disc_acc_gen: m.disc_acc_gen }
    }
}

/// Trains the discriminator on balanced generator/expert minibatches, then
/// rewrites the buffer's training rewards with [`mixed_reward`].
pub fn gail_update(
    buffer: &mut RolloutBuffer,
    expert: &[(Observation, Action)],
    disc: &mut Discriminator,
    cfg: &GailConfig,
) -> Result<GailMetrics, NnError> {
    assert!(!expert.is_empty(), "gail_update needs demonstrations");
    let gen_all = pair_matrix(buffer.transitions.iter().map(|t| (&t.observation, t.action)));
    let n = buffer.len();
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    for _ in 0..cfg.disc_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut disc.rng);
        for chunk in order.chunks(cfg.demo_batch_size) {
            let gen = gen_all.select(ndarray::Axis(0), chunk);
            let picks: Vec<usize> = (0..chunk.len()).map(|_| disc.rng.random_range(0..expert.len())).collect();
            let exp = pair_matrix(picks.iter().map(|&i| (&expert[i].0, expert[i].1)));
            loss_sum += disc.train_step(&gen, &exp, cfg.delta)?;
            steps += 1;
        }
    }

    let d_gen = disc.predict(&gen_all)?;
    let d_exp = disc.predict(&pair_matrix(expert.iter().map(|(o, a)| (o, *a))))?;
    let mut reward_sum = 0.0;
    for (t, &d) in buffer.transitions.iter_mut().zip(&d_gen) {
        let r = gail_reward(d, cfg.delta);
        reward_sum += r;
        t.reward = mixed_reward(t.env_reward, r, cfg);
    }
    disc.stats = DiscStats {
        acc_expert: d_exp.iter().filter(|&&d| d > 0.5).count() as f64 / d_exp.len() as f64,
        acc_gen: d_gen.iter().filter(|&&d| d < 0.5).count() as f64 / d_gen.len() as f64,
    };
    Ok(GailMetrics {
        gail_reward_mean: reward_sum / n as f64,
        disc_acc_expert: disc.stats.acc_expert,
        disc_acc_gen: disc.stats.acc_gen,
        disc_loss: loss_sum / steps.max(1) as f64,
    })
}

/// PPO generator trained on the mixed reward.
///
/// With `beta == 0` the discriminator has no influence, so it is neither
/// trained nor queried and the trainer reproduces plain PPO exactly (apart
/// from the extrinsic reward being scaled by `alpha`).
#[derive(Debug, Clone)]
pub struct GailTrainer {
    pub ppo: PpoTrainer,
    pub disc: Discriminator,
    pub config: GailConfig,
    expert: Vec<(Observation, Action)>,
}

impl GailTrainer {
    pub fn new(scene: &SceneConfig, ppo: PpoConfig, config: GailConfig, demos: &DemoSet) -> Result<Self, TrainError> {
        // Separate stream so the generator sees the same randomness as plain PPO.
        let disc = Discriminator::new(config.disc_hidden, config.disc_lr, ppo.seed ^ 0x6a09_e667_f3bc_c908);
        Ok(Self { ppo: PpoTrainer::new(scene, ppo)?, disc, config, expert: demos.pairs() })
    }

    pub fn iterate(&mut self) -> Result<MetricsRow, TrainError> {
        let mut buffer = self.ppo.collect()?;
        let gail = if self.config.beta == 0.0 {
            if self.config.alpha != 1.0 {
                for t in &mut buffer.transitions {
                    t.reward = self.config.alpha * t.env_reward;
                }
            }
            None
        } else {
            Some(gail_update(&mut buffer, &self.expert, &mut self.disc, &self.config)?)
        };
        let m = self.ppo.update(&mut buffer)?;
        Ok(self.ppo.row(&buffer, &m, gail.map(GailColumns::from)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_at_chance_and_at_clamp() {
        assert!((discriminator_loss(&[0.5; 4], &[0.5; 3], 1e-3) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let sep = discriminator_loss(&[1e-3], &[1.0 - 1e-3], 1e-3);
        assert!((sep - 2.0 * 1e-3f64.ln()).abs() < 1e-9);
        assert!((sep + 13.8155).abs() < 1e-4);
        // Beyond the clamp nothing improves.
        assert_eq!(discriminator_loss(&[0.0], &[1.0], 1e-3), sep);
    }

    #[test]
    fn reward_proxy_values() {
        assert!((gail_reward((-0.5f64).exp(), 1e-3) + 0.5).abs() < 1e-12);
        assert_eq!(gail_reward(0.1, 1e-3), -1.0);
        assert_eq!(gail_reward(1.0, 1e-3), 0.0);
        assert!(gail_reward(1.0 - 1e-9, 1e-9).abs() < 1e-8);
    }

    #[test]
    fn mixing_cases() {
        let defaults = GailConfig::default();
        assert!((mixed_reward(-0.5, 0.0, &defaults) + 0.1).abs() < 1e-15);
        assert_eq!(mixed_reward(0.0, 0.0, &defaults), 0.0);
        assert_eq!(mixed_reward(-0.37, -0.9, &GailConfig::ppo_reduction()), -0.37);
    }

    fn fixture(n: usize, seed: u64, shift: f64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, DISC_INPUT), |(_, j)| rng.random_range(-1.0..1.0) + if j == 0 { shift } else { 0.0 })
    }

    #[test]
    fn training_lowers_the_loss_on_fixed_batches() {
        let (gen, expert) = (fixture(64, 1, -0.5), fixture(64, 2, 0.5));
        let mut disc = Discriminator::new(32, 1e-3, 3);
        let first = disc.train_step(&gen, &expert, 1e-3).unwrap();
        for _ in 0..50 {
            disc.train_step(&gen, &expert, 1e-3).unwrap();
        }
        let (last, _) = disc.loss_gradient(&gen, &expert, 1e-3).unwrap();
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn separable_batches_are_separated() {
        let (gen, expert) = (fixture(128, 4, -2.0), fixture(128, 5, 2.0));
        let mut disc = Discriminator::new(32, 1e-3, 6);
        for _ in 0..200 {
            disc.train_step(&gen, &expert, 1e-3).unwrap();
        }
        let dg = disc.predict(&gen).unwrap();
        let de = disc.predict(&expert).unwrap();
        let correct = dg.iter().filter(|d| **d < 0.5).count() + de.iter().filter(|d| **d > 0.5).count();
        let acc = correct as f64 / (dg.len() + de.len()) as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn identical_batches_stay_at_chance() {
        let batch = fixture(128, 7, 0.0);
        let mut disc = Discriminator::new(32, 1e-3, 8);
        for _ in 0..200 {
            disc.train_step(&batch, &batch, 1e-3).unwrap();
        }
        for d in disc.predict(&batch).unwrap() {
            assert!((d - 0.5).abs() < 0.05, "D = {d}");
        }
    }

    #[test]
    fn kv_round_trip() {
        let c = GailConfig { alpha: 0.5, disc_epochs: 3, ..GailConfig::default() };
        assert_eq!(GailConfig::apply_kv(&GailConfig::default(), &c.to_kv()).unwrap(), c);
        let mut doc = KvDoc::default();
        doc.set("delta", "0.5");
        assert_eq!(GailConfig::apply_kv(&GailConfig::default(), &doc).unwrap_err().field(), Some("delta"));
    }
}
