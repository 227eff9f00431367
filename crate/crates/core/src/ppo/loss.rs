use ndarray::Array2;

use crate::env::{Action, BRANCH_CHOICES};
use crate::nn::{log_softmax, Gradients, Mlp, NnError};

/// `g(ε, Â)`: the advantage scaled by `1 + ε` when non-negative and by
/// `1 - ε` when negative.
pub fn clip_target(eps: f64, adv: f64) -> f64 {
    if adv >= 0.0 {
        (1.0 + eps) * adv
    } else {
        (1.0 - eps) * adv
    }
}

/// Per-sample clipped surrogate `min(ratio · Â, g(ε, Â))`.
pub fn surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(clip_target(eps, adv))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip_eps: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
}

/// Inputs of one loss evaluation; rows of `features` align with every vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub features: Array2<f64>,
    pub actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// `-mean surrogate + vf_coef · value_loss - ent_coef · entropy`.
    pub loss: f64,
    pub objective: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples with `|ratio - 1| > ε`.
    pub clip_fraction: f64,
    /// Estimate of `KL(π_old ‖ π_new)` via `(r - 1) - ln r`.
    pub approx_kl: f64,
    /// Samples excluded because their probability ratio was not finite.
    pub rejected: usize,
    pub policy_grads: Gradients,
    pub value_grads: Gradients,
}

/// Combined PPO loss and its exact gradients for the policy and value nets.
pub fn ppo_loss(policy: &Mlp, value: &Mlp, batch: &Minibatch, coefs: &LossCoefs) -> Result<LossOutput, NnError> {
    let n = batch.actions.len();
    assert!(n > 0, "empty minibatch");
    let tape_p = policy.forward_tape(batch.features.view())?;
    let tape_v = value.forward_tape(batch.features.view())?;
    let branches = tape_p.logits.ncols() / BRANCH_CHOICES;

    // First pass: ratios, so rejected samples can be excluded from the mean.
    let mut log_p = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(n);
    for i in 0..n {
        let logits = tape_p.logits.row(i);
        let logits = logits.as_slice().expect("contiguous row");
        let lp: Vec<Vec<f64>> = (0..branches).map(|b| log_softmax(&logits[b * BRANCH_CHOICES..(b + 1) * BRANCH_CHOICES])).collect();
        let idx = batch.actions[i].indices();
        let new_lp: f64 = (0..branches).map(|b| lp[b][idx[b]]).sum();
        ratios.push((new_lp - batch.old_log_probs[i]).exp());
        log_p.push(lp);
    }
    let rejected = ratios.iter().filter(|r| !r.is_finite()).count();
    if rejected > 0 {
        log::warn!("ppo_loss: {rejected} of {n} samples rejected for non-finite probability ratio");
    }
    let accepted = (n - rejected).max(1) as f64;
    let inv_n = 1.0 / n as f64;

    let mut logit_grad = Array2::zeros(tape_p.logits.raw_dim());
    let (mut objective, mut entropy, mut clipped, mut kl) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let lp = &log_p[i];
        let h: Vec<f64> = lp.iter().map(|l| -l.iter().map(|x| x.exp() * x).sum::<f64>()).collect();
        entropy += h.iter().sum::<f64>();
        let r = ratios[i];
        let idx = batch.actions[i].indices();
        // d(-surrogate)/d ratio is -Â on the unclipped branch of the min, 0 otherwise.
        let mut coef = 0.0;
        if r.is_finite() {
            let a = batch.advantages[i];
            let unclipped = r * a;
            let target = clip_target(coefs.clip_eps, a);
            objective += unclipped.min(target);
            if unclipped <= target {
                coef = -a * r / accepted;
            }
            clipped += ((r - 1.0).abs() > coefs.clip_eps) as u8 as f64;
            kl += (r - 1.0) - r.ln();
        }
        for b in 0..branches {
            for k in 0..BRANCH_CHOICES {
                let p = lp[b][k].exp();
                let hot = if k == idx[b] { 1.0 } else { 0.0 };
                logit_grad[[i, b * BRANCH_CHOICES + k]] = coef * (hot - p) + coefs.ent_coef * inv_n * p * (lp[b][k] + h[b]);
            }
        }
    }
    objective /= accepted;
    entropy *= inv_n;
    clipped /= accepted;
    kl /= accepted;

    let mut value_loss = 0.0;
    let mut value_grad = Array2::zeros(tape_v.output.raw_dim());
    for i in 0..n {
        let d = tape_v.output[[i, 0]] - batch.returns[i];
        value_loss += d * d;
        value_grad[[i, 0]] = coefs.vf_coef * 2.0 * d * inv_n;
    }
    value_loss *= inv_n;

    Ok(LossOutput {
        loss: -objective + coefs.vf_coef * value_loss - coefs.ent_coef * entropy,
        objective,
        value_loss,
        entropy,
        clip_fraction: clipped,
        approx_kl: kl,
        rejected,
        policy_grads: policy.backward_logits(&tape_p, &logit_grad)?,
        value_grads: value.backward(&tape_v, &value_grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_target_cases() {
        assert_eq!(clip_target(0.2, 1.0), 1.2);
        assert_eq!(clip_target(0.2, -1.0), -0.8);
        assert_eq!(clip_target(0.2, 0.0), 0.0);
    }

    #[test]
    fn surrogate_hand_evaluations() {
        assert_eq!(surrogate(2.0, 1.0, 0.2), 1.2);
        assert_eq!(surrogate(0.5, -1.0, 0.2), -0.8);
        for a in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            assert_eq!(surrogate(1.0, a, 0.2), a);
        }
    }
}
