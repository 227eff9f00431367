//! Acceptance gate: one PASS/FAIL line per primary criterion, non-zero exit
//! if any fails. Runs without the libtest harness so every line is printed.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retract_core::demos::{generate_scripted, replay, DemoSet, DEFAULT_EPISODES, DEFAULT_JITTER};
use retract_core::env::{reward, RewardConfig};
use retract_core::eval::{compare_curves, load_curve, run_grid, GreedyPolicy, GridResult, GridSpec, DEFAULT_THRESHOLD, TE_SAMPLES};
use retract_core::gail::{discriminator_loss, Discriminator, GailConfig, GailTrainer};
use retract_core::nn::{Gradients, Mlp};
use retract_core::policy::{feature_matrix, log_prob_from_logits, pair_matrix, policy_net, value_net, DISC_INPUT};
use retract_core::ppo::{compute_gae, ppo_loss, surrogate, LossCoefs, MetricsWriter, Minibatch, PpoConfig, PpoTrainer};
use retract_core::{Action, Observation, SceneConfig, TissueEnv, Vec3};

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;
const FD_SEEDS: u64 = 20;
/// Coordinates checked per network and seed.
const FD_COORDS: usize = 60;
const RACE_SEEDS: [u64; 3] = [0, 1, 2];
const DEMO_SEED: u64 = 0;

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(&mut self, name: &str, ok: bool, detail: impl std::fmt::Display) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

fn random_observation(rng: &mut ChaCha8Rng, scene: &SceneConfig) -> Observation {
    let b = &scene.workspace_box;
    let ee = Vec3::new(rng.random_range(b.min.x..b.max.x), rng.random_range(b.min.y..b.max.y), rng.random_range(b.min.z..b.max.z));
    Observation::new(ee, scene.tumour_center, scene.target_position, rng.random())
}

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    Action::from_indices([rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0..3)])
}

/// Worst relative error between analytic and central-difference gradients
/// over `FD_COORDS` random coordinates.
fn fd_error(net: &Mlp, grads: &Gradients, loss: impl Fn(&Mlp) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    let analytic = grads.flat();
    let base = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..FD_COORDS {
        let k = rng.random_range(0..base.len());
        let mut p = base.clone();
        p[k] = base[k] + FD_STEP;
        probe.set_params(&p).unwrap();
        let up = loss(&probe);
        p[k] = base[k] - FD_STEP;
        probe.set_params(&p).unwrap();
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn gradient_check(gate: &mut Gate) {
    let scene = SceneConfig::desk_scale();
    let coefs = LossCoefs { clip_eps: 0.2, vf_coef: 0.5, ent_coef: 0.005 };
    let (mut policy_worst, mut value_worst, mut disc_worst): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let start = Instant::now();
    for seed in 0..FD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = policy_net(128, rng.random());
        let value = value_net(128, rng.random());
        let obs: Vec<Observation> = (0..32).map(|_| random_observation(&mut rng, &scene)).collect();
        let actions: Vec<Action> = (0..32).map(|_| random_action(&mut rng)).collect();
        let features = feature_matrix(obs.iter());
        let logits = policy.forward_tape(features.view()).unwrap().logits;
        // Old log-probabilities shifted so ratios spread over both sides of the clip range.
        let old_log_probs = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| log_prob_from_logits(logits.row(i).as_slice().unwrap(), a) + rng.random_range(-0.5..0.5))
            .collect();
        let batch = Minibatch {
            features,
            actions,
            old_log_probs,
            advantages: (0..32).map(|_| rng.random_range(-2.0..2.0)).collect(),
            returns: (0..32).map(|_| rng.random_range(-1.0..0.0)).collect(),
        };
        let out = ppo_loss(&policy, &value, &batch, &coefs).unwrap();
        policy_worst =
            policy_worst.max(fd_error(&policy, &out.policy_grads, |p| ppo_loss(p, &value, &batch, &coefs).unwrap().loss, &mut rng));
        value_worst = value_worst.max(fd_error(&value, &out.value_grads, |v| ppo_loss(&policy, v, &batch, &coefs).unwrap().loss, &mut rng));

        let disc = Discriminator::new(128, 3e-4, rng.random());
        let pairs = |rng: &mut ChaCha8Rng| -> Array2<f64> {
            let o: Vec<Observation> = (0..24).map(|_| random_observation(rng, &scene)).collect();
            let a: Vec<Action> = (0..24).map(|_| random_action(rng)).collect();
            pair_matrix(o.iter().zip(a))
        };
        let (gen, exp) = (pairs(&mut rng), pairs(&mut rng));
        assert_eq!(gen.ncols(), DISC_INPUT);
        let (_, grads) = disc.loss_gradient(&gen, &exp, 1e-3).unwrap();
        let loss = |net: &Mlp| {
            let dg = net.forward_batch(gen.view()).unwrap().column(0).to_vec();
            let de = net.forward_batch(exp.view()).unwrap().column(0).to_vec();
            discriminator_loss(&dg, &de, 1e-3)
        };
        disc_worst = disc_worst.max(fd_error(&disc.net, &grads, loss, &mut rng));
    }
    let detail = |w: f64| format!("max relative error {w:.2e} over {FD_SEEDS} seeds (h={FD_STEP:e}, tol {FD_TOLERANCE:e})");
    gate.check("gradient check / policy", policy_worst <= FD_TOLERANCE, detail(policy_worst));
    gate.check("gradient check / value", value_worst <= FD_TOLERANCE, detail(value_worst));
    gate.check("gradient check / discriminator", disc_worst <= FD_TOLERANCE, detail(disc_worst));
    println!("     gradient checks took {:.1}s", start.elapsed().as_secs_f64());
}

/// Double-loop GAE: `A_t = Σ_l (γλ)^l δ_{t+l}`, stopping after an episode end.
fn gae_oracle(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in t..n {
                let next = if dones[k] {
                    0.0
                } else if k + 1 == n {
                    last_value
                } else {
                    values[k + 1]
                };
                total += weight * (rewards[k] + gamma * next - values[k]);
                if dones[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn formula_oracles(gate: &mut Gate) {
    let cases = [(2.0, 1.0, 1.2), (0.5, -1.0, -0.8), (1.0, 0.7, 0.7), (1.0, -1.3, -1.3)];
    let ok = cases.iter().all(|&(r, a, want)| surrogate(r, a, 0.2) == want);
    gate.check("formula / clipped surrogate", ok, "ratio 2/Â 1 → 1.2, ratio 0.5/Â −1 → −0.8, ratio 1 → Â (exact)");

    // The minibatch objective is the mean surrogate of the network's own ratios.
    let scene = SceneConfig::desk_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let policy = policy_net(128, 1);
    let value = value_net(128, 2);
    let obs: Vec<Observation> = (0..16).map(|_| random_observation(&mut rng, &scene)).collect();
    let actions: Vec<Action> = (0..16).map(|_| random_action(&mut rng)).collect();
    let features = feature_matrix(obs.iter());
    let logits = policy.forward_tape(features.view()).unwrap().logits;
    let new_lp: Vec<f64> = actions.iter().enumerate().map(|(i, &a)| log_prob_from_logits(logits.row(i).as_slice().unwrap(), a)).collect();
    let old_lp: Vec<f64> = new_lp.iter().map(|lp| lp + rng.random_range(-0.6..0.6)).collect();
    let adv: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let expected = (0..16).map(|i| surrogate((new_lp[i] - old_lp[i]).exp(), adv[i], 0.2)).sum::<f64>() / 16.0;
    let batch = Minibatch { features, actions, old_log_probs: old_lp, advantages: adv, returns: vec![0.0; 16] };
    let out = ppo_loss(&policy, &value, &batch, &LossCoefs { clip_eps: 0.2, vf_coef: 0.5, ent_coef: 0.0 }).unwrap();
    let err = (out.objective - expected).abs();
    gate.check("formula / ppo_loss objective", err < 1e-12, format!("|objective − mean surrogate| = {err:.1e}"));

    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rewards: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..0.0)).collect();
        let values: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..0.0)).collect();
        let dones: Vec<bool> = (0..10).map(|_| rng.random_bool(0.2)).collect();
        let last = rng.random_range(-5.0..0.0);
        let (gamma, lambda) = (rng.random_range(0.9..1.0), rng.random_range(0.8..1.0));
        let (adv, ret) = compute_gae(&rewards, &values, &dones, last, gamma, lambda);
        let want = gae_oracle(&rewards, &values, &dones, last, gamma, lambda);
        for t in 0..10 {
            worst = worst.max((adv[t] - want[t]).abs()).max((ret[t] - (want[t] + values[t])).abs());
        }
    }
    gate.check("formula / GAE vs brute force", worst <= 1e-12, format!("max error {worst:.1e} over 100 random 10-step fixtures"));

    let l = discriminator_loss(&[0.5; 8], &[0.5; 8], 1e-3);
    let err = (l - 2.0 * 0.5f64.ln()).abs();
    gate.check("formula / discriminator loss at D≡0.5", err <= 1e-9, format!("{l} vs 2·ln 0.5 (error {err:.1e})"));
}

fn reward_range(gate: &mut Gate) {
    let scene = SceneConfig::desk_scale();
    let rc = RewardConfig::for_scene(&scene);
    let mut env = TissueEnv::new(scene.clone());
    env.reset(Vec3::new(0.0, 20.0, 0.0), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..10_000 {
        let mut s = env.state().clone();
        let o = random_observation(&mut rng, &scene);
        s.ee_position = o.ee_position();
        s.gripper_closed = o.gripper_closed();
        let r = reward(&scene, &rc, &s);
        let ok = if s.gripper_closed { (-0.5..=0.0).contains(&r) } else { (-1.0..=-0.5).contains(&r) };
        violations += usize::from(!ok);
    }
    gate.check("reward range", violations == 0, format!("{violations} of 10000 random states outside [−1,−0.5] open / [−0.5,0] closed"));
}

fn ppo_reduction(gate: &mut Gate) {
    let scene = SceneConfig::desk_scale();
    let demos = generate_scripted(&scene, 2, DEMO_SEED, DEFAULT_JITTER).unwrap();
    let mut identical = true;
    let mut rows = 0;
    for seed in RACE_SEEDS {
        let config = PpoConfig { seed, ..PpoConfig::default() };
        let mut ppo = PpoTrainer::new(&scene, config.clone()).unwrap();
        let mut gail = GailTrainer::new(&scene, config, GailConfig::ppo_reduction(), &demos).unwrap();
        let mut a = MetricsWriter::from_writer(Vec::new()).unwrap();
        let mut b = MetricsWriter::from_writer(Vec::new()).unwrap();
        for _ in 0..8 {
            a.write(&ppo.iterate().unwrap()).unwrap();
            b.write(&gail.iterate().unwrap()).unwrap();
            rows += 1;
        }
        identical &= a.into_inner() == b.into_inner();
    }
    gate.check(
        "PPO reduction",
        identical,
        format!(
            "α=1, β=0 metrics CSV vs plain PPO over seeds {RACE_SEEDS:?} ({rows} rows): {}",
            if identical { "bit-identical" } else { "DIFFER" }
        ),
    );
}

fn demos_replay(gate: &mut Gate) -> DemoSet {
    let scene = SceneConfig::desk_scale();
    let set = generate_scripted(&scene, DEFAULT_EPISODES, DEMO_SEED, DEFAULT_JITTER).unwrap();
    let report = replay(&set, &scene).unwrap();
    gate.check(
        "demo replay",
        set.episode_count() == DEFAULT_EPISODES && report.is_faithful() && report.max_deviation() == 0.0,
        format!("{DEFAULT_EPISODES} scripted demos: {report}"),
    );
    let mut bytes = Vec::new();
    set.write_to(&mut bytes).unwrap();
    let back = DemoSet::read_from(bytes.as_slice(), Some(&scene), false).unwrap();
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    gate.check(
        "demo round trip",
        back == set && again == bytes,
        format!("{} records, {} bytes, re-serialised identically", set.records.len(), bytes.len()),
    );
    set
}

fn expert_quality(gate: &mut Gate) {
    let scene = SceneConfig::default();
    let set = generate_scripted(&scene, DEFAULT_EPISODES, DEMO_SEED, DEFAULT_JITTER).unwrap();
    let mut env = TissueEnv::new(scene.clone());
    let mut min_te = f64::INFINITY;
    let mut all_reached = true;
    for ep in set.episodes() {
        env.reset(ep[0].observation.ee_position(), ep[0].episode_id).unwrap();
        for r in ep {
            env.step(r.action).unwrap();
        }
        all_reached &= env.state().done_reason == retract_core::DoneReason::TargetReached;
        min_te = min_te.min(env.tumour_exposure(TE_SAMPLES));
    }
    gate.check(
        "scripted expert quality",
        all_reached && min_te >= 0.5,
        format!("{DEFAULT_EPISODES} demos on the default scene, all target_reached: {all_reached}, min terminal TE {min_te:.3}"),
    );
}

struct TrainedRun {
    policy: Mlp,
    seconds: f64,
}

fn train(scene: &SceneConfig, seed: u64, gail: GailConfig, demos: &DemoSet, metrics: &Path) -> TrainedRun {
    let start = Instant::now();
    let mut trainer = GailTrainer::new(scene, PpoConfig { seed, ..PpoConfig::default() }, gail, demos).unwrap();
    let mut w = MetricsWriter::create(metrics).unwrap();
    while !trainer.ppo.is_finished() {
        w.write(&trainer.iterate().unwrap()).unwrap();
    }
    TrainedRun { policy: trainer.ppo.policy().clone(), seconds: start.elapsed().as_secs_f64() }
}

fn race_and_exposure(gate: &mut Gate, demos: &DemoSet) {
    let scene = SceneConfig::desk_scale();
    let dir = tempfile::tempdir().unwrap();
    let methods = [("ppo", GailConfig::ppo_reduction()), ("gail", GailConfig::default())];
    let runs: Vec<(&str, u64, TrainedRun)> = std::thread::scope(|s| {
        let handles: Vec<_> = methods
            .iter()
            .flat_map(|(name, cfg)| RACE_SEEDS.map(|seed| (*name, cfg.clone(), seed)))
            .map(|(name, cfg, seed)| {
                let path = dir.path().join(format!("{name}_{seed}.csv"));
                let scene = &scene;
                (name, seed, s.spawn(move || train(scene, seed, cfg, demos, &path)))
            })
            .collect();
        handles.into_iter().map(|(n, seed, h)| (n, seed, h.join().unwrap())).collect()
    });
    for (name, seed, run) in &runs {
        println!("     trained {name} seed {seed} in {:.0}s", run.seconds);
    }

    let curves =
        |name: &str| RACE_SEEDS.iter().map(|s| load_curve(&dir.path().join(format!("{name}_{s}.csv"))).unwrap()).collect::<Vec<_>>();
    let cmp = compare_curves(&[("ppo", curves("ppo")), ("gail", curves("gail"))], DEFAULT_THRESHOLD);
    let fmt = |c: Option<u64>| c.map_or("never".to_string(), |s| s.to_string());
    let (p, g) = (cmp.method("ppo").unwrap(), cmp.method("gail").unwrap());
    let final_mean = |m: &retract_core::eval::MethodCurve| m.points.last().map_or(f64::NAN, |p| p.mean);
    gate.check(
        "sample efficiency",
        cmp.crosses_first("gail", "ppo"),
        format!(
            "first step with 3-seed mean ≥ {DEFAULT_THRESHOLD}: GAIL {} vs PPO {} (final means GAIL {:.3}, PPO {:.3})",
            fmt(g.crossing),
            fmt(p.crossing),
            final_mean(g),
            final_mean(p)
        ),
    );

    let grid = GridSpec::for_scene(&scene);
    let grids = |name: &str| -> Vec<GridResult> {
        runs.iter().filter(|(n, _, _)| *n == name).map(|(_, _, r)| run_grid(&scene, &grid, &mut GreedyPolicy(&r.policy)).unwrap()).collect()
    };
    let (ppo_grids, gail_grids) = (grids("ppo"), grids("gail"));
    let mean_ate = |gs: &[GridResult]| gs.iter().map(GridResult::ate).sum::<f64>() / gs.len() as f64;
    let (ppo_ate, gail_ate) = (mean_ate(&ppo_grids), mean_ate(&gail_grids));
    // Column 0 holds the starts next to the attached (x = min) edge.
    let attached = |gs: &[GridResult]| gs.iter().flat_map(|g| g.column(0).map(|t| t.te)).collect::<Vec<f64>>();
    let gail_min = attached(&gail_grids).into_iter().fold(f64::INFINITY, f64::min);
    let ppo_edge = attached(&ppo_grids);
    let ppo_edge_mean = ppo_edge.iter().sum::<f64>() / ppo_edge.len() as f64;
    gate.check(
        "exposure superiority",
        gail_ate > ppo_ate && gail_min > ppo_edge_mean,
        format!(
            "ATE GAIL {gail_ate:.3} vs PPO {ppo_ate:.3} (7×7 grid, mean over seeds); attachment-edge starts: GAIL min TE {gail_min:.3} vs PPO mean TE {ppo_edge_mean:.3}"
        ),
    );
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut gate = Gate { failures: 0 };
    gradient_check(&mut gate);
    formula_oracles(&mut gate);
    reward_range(&mut gate);
    ppo_reduction(&mut gate);
    let demos = demos_replay(&mut gate);
    expert_quality(&mut gate);
    race_and_exposure(&mut gate, &demos);
    println!("acceptance: {} failure(s) in {:.0}s", gate.failures, start.elapsed().as_secs_f64());
    if gate.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
