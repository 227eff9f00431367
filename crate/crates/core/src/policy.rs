//! Factored categorical policy over the per-axis action branches, plus the
//! feature map shared by the policy, value and discriminator networks.

use ndarray::Array2;
use rand::Rng;

use crate::env::{Action, Observation, ACTION_BRANCHES, BRANCH_CHOICES, OBS_DIM};
use crate::nn::{log_softmax, Head, Mlp, NnError};

/// Millimetre quantities enter the networks divided by this length.
pub const LENGTH_SCALE: f64 = 50.0;
pub const POLICY_OUTPUTS: usize = ACTION_BRANCHES * BRANCH_CHOICES;
/// Discriminator input: features followed by the one-hot action.
pub const DISC_INPUT: usize = OBS_DIM + POLICY_OUTPUTS;

/// Network input for an observation: every length rescaled, gripper flag kept.
pub fn features(obs: &Observation) -> [f64; OBS_DIM] {
    let mut f = [0.0; OBS_DIM];
    for (i, (dst, src)) in f.iter_mut().zip(obs.as_slice()).enumerate() {
        *dst = if i + 1 == OBS_DIM { *src } else { src / LENGTH_SCALE };
    }
    f
}

/// `(n, OBS_DIM)` feature matrix.
pub fn feature_matrix<'a>(obs: impl ExactSizeIterator<Item = &'a Observation>) -> Array2<f64> {
    let n = obs.len();
    let mut m = Array2::zeros((n, OBS_DIM));
    for (mut row, o) in m.rows_mut().into_iter().zip(obs) {
        row.assign(&ndarray::ArrayView1::from(&features(o)));
    }
    m
}

/// `(n, DISC_INPUT)` matrix of features concatenated with one-hot actions.
pub fn pair_matrix<'a>(pairs: impl ExactSizeIterator<Item = (&'a Observation, Action)>) -> Array2<f64> {
    let n = pairs.len();
    let mut m = Array2::zeros((n, DISC_INPUT));
    for (mut row, (o, a)) in m.rows_mut().into_iter().zip(pairs) {
        let s = row.as_slice_mut().expect("contiguous row");
        s[..OBS_DIM].copy_from_slice(&features(o));
        s[OBS_DIM..].copy_from_slice(&a.one_hot());
    }
    m
}

pub fn policy_net(hidden: usize, seed: u64) -> Mlp {
    Mlp::new(&[OBS_DIM, hidden, hidden, POLICY_OUTPUTS], Head::Softmax { branches: ACTION_BRANCHES }, 1.0, 0.01, seed)
}

pub fn value_net(hidden: usize, seed: u64) -> Mlp {
    Mlp::new(&[OBS_DIM, hidden, hidden, 1], Head::Linear, 1.0, 1.0, seed)
}

/// Log-probability of `action` given one row of policy logits.
pub fn log_prob_from_logits(logits: &[f64], action: Action) -> f64 {
    action.indices().iter().enumerate().map(|(b, &k)| log_softmax(&logits[b * BRANCH_CHOICES..(b + 1) * BRANCH_CHOICES])[k]).sum()
}

/// Log-probability of `action` given one row of per-branch probabilities.
pub fn log_prob(probs: &[f64], action: Action) -> f64 {
    action.indices().iter().enumerate().map(|(b, &k)| probs[b * BRANCH_CHOICES + k].ln()).sum()
}

/// Draws one choice per branch by inverse-CDF sampling.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> Action {
    let mut idx = [0usize; ACTION_BRANCHES];
    for (b, slot) in idx.iter_mut().enumerate() {
        let p = &probs[b * BRANCH_CHOICES..(b + 1) * BRANCH_CHOICES];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        *slot = BRANCH_CHOICES - 1;
        for (k, pk) in p.iter().enumerate() {
            acc += pk;
            if u < acc {
                *slot = k;
                break;
            }
        }
    }
    Action::from_indices(idx)
}

/// Per-branch argmax; ties resolve to the lowest index.
pub fn greedy_action(probs: &[f64]) -> Action {
    let mut idx = [0usize; ACTION_BRANCHES];
    for (b, slot) in idx.iter_mut().enumerate() {
        let p = &probs[b * BRANCH_CHOICES..(b + 1) * BRANCH_CHOICES];
        for k in 1..BRANCH_CHOICES {
            if p[k] > p[*slot] {
                *slot = k;
            }
        }
    }
    Action::from_indices(idx)
}

/// Greedy action of a policy network for one observation.
pub fn act_greedy(policy: &Mlp, obs: &Observation) -> Result<Action, NnError> {
    Ok(greedy_action(&policy.forward(&features(obs))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn features_scale_lengths_only() {
        let o = Observation::new(Vec3::new(50.0, 25.0, 0.0), Vec3::ZERO, Vec3::new(0.0, 50.0, 0.0), true);
        let f = features(&o);
        assert_eq!(&f[..3], &[1.0, 0.5, 0.0]);
        assert_eq!(f[11], 1.0);
    }

    #[test]
    fn greedy_picks_branch_maxima() {
        let probs = [0.1, 0.2, 0.7, 0.5, 0.3, 0.2, 0.3, 0.4, 0.3];
        assert_eq!(greedy_action(&probs), Action::new([1, -1, 0]).unwrap());
        assert_eq!(greedy_action(&[1.0 / 3.0; 9]), Action::new([-1, -1, -1]).unwrap());
    }

    #[test]
    fn log_prob_forms_agree() {
        let logits = [0.3, -1.0, 2.0, 0.0, 0.0, 0.0, 5.0, 1.0, -2.0];
        let net = Mlp::zeros(&[1, 9], Head::Softmax { branches: 3 });
        let mut p = net.params();
        p[9..].copy_from_slice(&logits);
        let mut net = net;
        net.set_params(&p).unwrap();
        let probs = net.forward(&[0.0]).unwrap();
        let a = Action::new([1, 0, -1]).unwrap();
        assert!((log_prob(&probs, a) - log_prob_from_logits(&logits, a)).abs() < 1e-12);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let probs = [1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mid = 0;
        for _ in 0..4000 {
            let a = sample_action(&probs, &mut rng);
            let b = a.beta();
            assert_eq!(b[0], -1);
            assert_eq!(b[2], 1);
            assert_ne!(b[1], -1);
            mid += (b[1] == 0) as usize;
        }
        // Binomial(4000, 0.5): 3 sigma is about 95.
        assert!((mid as i64 - 2000).abs() < 95, "{mid}");
    }
}
