use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DemoError, DemoRecord};
use crate::env::{Action, DoneReason, TissueEnv};
use crate::geometry::Vec3;

/// Probability per lateral phase-1 step that one lateral component is nudged by ±1.
pub const DEFAULT_JITTER: f64 = 0.1;

/// Where the scripted expert grasps: the sheet surface point closest to the
/// tumour, raised by half the grasp radius.
pub fn grasp_waypoint(env: &TissueEnv) -> Vec3 {
    let scene = env.scene();
    let q = scene.tumour_center;
    let closest = env
        .state()
        .tissue
        .rest_positions
        .iter()
        .copied()
        .min_by(|a, b| a.distance(q).total_cmp(&b.distance(q)))
        .expect("sheet has particles");
    let surface = Vec3::new(q.x, closest.y, q.z);
    surface + Vec3::new(0.0, 0.5 * scene.grasp_radius, 0.0)
}

/// Sign of `delta` with a dead band of half an increment, as a β component.
fn axis_sign(delta: f64, step: f64) -> i64 {
    if delta > 0.5 * step {
        1
    } else if delta < -0.5 * step {
        -1
    } else {
        0
    }
}

fn toward(from: Vec3, to: Vec3, step: f64) -> [i64; 3] {
    [axis_sign(to.x - from.x, step), axis_sign(to.y - from.y, step), axis_sign(to.z - from.z, step)]
}

/// Per-axis step toward the grasp waypoint. The vertical axis holds while
/// more lateral than vertical increments remain, so all axes arrive together
/// instead of the gripper touching down (and grasping) short of the waypoint.
/// Once level with the waypoint the gripper keeps descending until it grasps.
fn approach(p: Vec3, waypoint: Vec3, step: f64) -> [i64; 3] {
    let mut beta = toward(p, waypoint, step);
    let lateral_steps = ((waypoint.x - p.x).abs().max((waypoint.z - p.z).abs()) / step).round();
    let vertical_steps = ((p.y - waypoint.y) / step).round();
    if vertical_steps < lateral_steps {
        beta[1] = 0;
    }
    if beta == [0, 0, 0] {
        beta[1] = -1;
    }
    beta
}

/// Three-phase sign-greedy oracle, one action at a time:
///
/// 1. move per axis toward the grasp waypoint (see [`approach`]),
/// 2. descend until the gripper closes,
/// 3. carry the tissue toward the retraction target until the episode ends.
///
/// With `jitter > 0` lateral phase-1 steps occasionally nudge one lateral
/// component by ±1 (drawn from `noise_seed`) to diversify demonstrations.
#[derive(Debug, Clone)]
pub struct ExpertController {
    waypoint: Vec3,
    target: Vec3,
    step: f64,
    jitter: f64,
    rng: ChaCha8Rng,
}

impl ExpertController {
    pub fn new(env: &TissueEnv, noise_seed: u64, jitter: f64) -> Self {
        Self {
            waypoint: grasp_waypoint(env),
            target: env.scene().target_position,
            step: env.scene().step_size,
            jitter,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
        }
    }

    pub fn act(&mut self, env: &TissueEnv) -> Action {
        let p = env.state().ee_position;
        let closed = env.state().gripper_closed;
        let mut beta = if closed { toward(p, self.target, self.step) } else { approach(p, self.waypoint, self.step) };
        if !closed && (beta[0] != 0 || beta[2] != 0) && self.jitter > 0.0 && self.rng.random::<f64>() < self.jitter {
            let axis = if self.rng.random::<bool>() { 0 } else { 2 };
            let nudge = if self.rng.random::<bool>() { 1 } else { -1 };
            beta[axis] = (beta[axis] + nudge).clamp(-1, 1);
        }
        Action::new(beta).expect("components are clamped to {-1, 0, 1}")
    }
}

/// Runs [`ExpertController`] on an environment already reset at the episode
/// start and records every step. Episodes that do not end at the target are
/// reported as errors.
pub fn scripted_expert(env: &mut TissueEnv, episode_id: u64, noise_seed: u64, jitter: f64) -> Result<Vec<DemoRecord>, DemoError> {
    let start = env.state().ee_position;
    let mut expert = ExpertController::new(env, noise_seed, jitter);
    let mut records = Vec::new();
    while !env.state().done {
        let action = expert.act(env);
        let observation = env.observation();
        let t = env.state().t;
        let out = env.step(action)?;
        records.push(DemoRecord { episode_id, t, observation, action, done: out.done });
    }
    match env.state().done_reason {
        DoneReason::TargetReached => Ok(records),
        reason => Err(DemoError::ExpertFailed { start, reason: reason.to_string() }),
    }
}
