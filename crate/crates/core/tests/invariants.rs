use proptest::prelude::*;
use retract_core::demos::{generate_scripted, DemoSet};
use retract_core::env::{reward, RewardConfig};
use retract_core::gail::{gail_reward, mixed_reward, GailConfig};
use retract_core::ppo::{clip_target, surrogate};
use retract_core::{SceneConfig, TissueEnv, Vec3};

proptest! {
    #[test]
    fn surrogate_never_exceeds_either_branch(ratio in 0.0f64..5.0, adv in -10.0f64..10.0, eps in 0.01f64..0.5) {
        let s = surrogate(ratio, adv, eps);
        prop_assert!(s <= ratio * adv);
        prop_assert!(s <= clip_target(eps, adv));
        if (1.0 - eps..=1.0 + eps).contains(&ratio) {
            prop_assert_eq!(s, ratio * adv);
        }
    }

    #[test]
    fn gail_reward_is_bounded_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, delta in 1e-6f64..0.1) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (rl, rh) = (gail_reward(lo, delta), gail_reward(hi, delta));
        prop_assert!((-1.0..=0.0).contains(&rl) && (-1.0..=0.0).contains(&rh));
        prop_assert!(rl <= rh);
    }

    #[test]
    fn mixed_reward_is_the_weighted_sum(r_env in -1.0f64..0.0, r_gail in -1.0f64..0.0, alpha in 0.0f64..1.0) {
        let cfg = GailConfig { alpha, beta: 1.0 - alpha, ..GailConfig::default() };
        let m = mixed_reward(r_env, r_gail, &cfg);
        prop_assert!((m - (alpha * r_env + (1.0 - alpha) * r_gail)).abs() < 1e-15);
        prop_assert!((-1.0..=0.0).contains(&m));
    }

    #[test]
    fn reward_band_follows_the_gripper(x in -50.0f64..50.0, y in 0.0f64..60.0, z in -50.0f64..50.0, closed: bool) {
        let scene = SceneConfig::desk_scale();
        let rc = RewardConfig::for_scene(&scene);
        let mut env = TissueEnv::new(scene.clone());
        env.reset(Vec3::new(0.0, 20.0, 0.0), 0).unwrap();
        let mut s = env.state().clone();
        s.ee_position = Vec3::new(x, y, z);
        s.gripper_closed = closed;
        let r = reward(&scene, &rc, &s);
        if closed {
            prop_assert!((-0.5..=0.0).contains(&r), "closed reward {}", r);
        } else {
            prop_assert!((-1.0..=-0.5).contains(&r), "open reward {}", r);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn demo_files_round_trip(count in 1usize..3, seed in 0u64..1000, jitter in 0.0f64..0.3) {
        let scene = SceneConfig::desk_scale();
        let set = generate_scripted(&scene, count, seed, jitter).unwrap();
        let mut bytes = Vec::new();
        set.write_to(&mut bytes).unwrap();
        let back = DemoSet::read_from(bytes.as_slice(), Some(&scene), false).unwrap();
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(bytes, again);
        prop_assert_eq!(back.episode_count(), count);
    }
}
