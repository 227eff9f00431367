//! Tissue-retraction environment.
//!
//! A point end-effector moves on a lattice of per-axis increments above a
//! deformable fat sheet that hides a tumour. Coming close enough to a free
//! sheet particle closes the gripper on it; the episode succeeds once the
//! grasped tissue has been carried to the retraction target.

pub mod config;
pub mod exposure;
pub mod starts;
pub mod tissue;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{AttachmentEdge, RewardConfig, SceneConfig};
pub use exposure::tumour_exposure;
pub use starts::StartRegion;
pub use tissue::{solve_tissue, TissueState};

use crate::geometry::Vec3;

pub const OBS_DIM: usize = 12;
pub const ACTION_BRANCHES: usize = 3;
pub const BRANCH_CHOICES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("start position {0} lies outside the workspace")]
    StartOutOfRange(Vec3),
    #[error("start position {0} is not above the sheet rest plane")]
    StartBelowSheet(Vec3),
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("invalid action component {0}; expected -1, 0 or +1")]
    InvalidAction(i64),
}

/// Per-axis increment direction, each component in {-1, 0, +1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 3]", into = "[i64; 3]")]
pub struct Action {
    beta: [i8; 3],
}

impl Action {
    pub const IDLE: Action = Action { beta: [0, 0, 0] };

    pub fn new(beta: [i64; 3]) -> Result<Self, EnvError> {
        let mut out = [0i8; 3];
        for (o, b) in out.iter_mut().zip(beta) {
            if !(-1..=1).contains(&b) {
                return Err(EnvError::InvalidAction(b));
            }
            *o = b as i8;
        }
        Ok(Self { beta: out })
    }

    /// Builds an action from per-branch category indices (0 → -1, 1 → 0, 2 → +1).
    pub fn from_indices(idx: [usize; 3]) -> Self {
        let mut beta = [0i8; 3];
        for (b, i) in beta.iter_mut().zip(idx) {
            assert!(i < BRANCH_CHOICES, "branch index {i} out of range");
            *b = i as i8 - 1;
        }
        Self { beta }
    }

    pub fn indices(&self) -> [usize; 3] {
        self.beta.map(|b| (b + 1) as usize)
    }

    pub fn beta(&self) -> [i8; 3] {
        self.beta
    }

    pub fn displacement(&self, step_size: f64) -> Vec3 {
        Vec3::new(self.beta[0] as f64, self.beta[1] as f64, self.beta[2] as f64) * step_size
    }

    /// Concatenated one-hot encoding of the three branches.
    pub fn one_hot(&self) -> [f64; ACTION_BRANCHES * BRANCH_CHOICES] {
        let mut out = [0.0; ACTION_BRANCHES * BRANCH_CHOICES];
        for (b, i) in self.indices().into_iter().enumerate() {
            out[b * BRANCH_CHOICES + i] = 1.0;
        }
        out
    }
}

impl TryFrom<[i64; 3]> for Action {
    type Error = EnvError;
    fn try_from(b: [i64; 3]) -> Result<Self, EnvError> {
        Action::new(b)
    }
}

impl From<Action> for [i64; 3] {
    fn from(a: Action) -> [i64; 3] {
        a.beta.map(i64::from)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:+}, {:+}, {:+})", self.beta[0], self.beta[1], self.beta[2])
    }
}

/// Kinematic state vector: EE position, tumour centre, target, the two
/// distances and the gripper flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn new(ee: Vec3, tumour: Vec3, target: Vec3, gripper_closed: bool) -> Self {
        let mut v = [0.0; OBS_DIM];
        v[0..3].copy_from_slice(&ee.to_array());
        v[3..6].copy_from_slice(&tumour.to_array());
        v[6..9].copy_from_slice(&target.to_array());
        v[9] = ee.distance(tumour);
        v[10] = ee.distance(target);
        v[11] = if gripper_closed { 1.0 } else { 0.0 };
        Self(v)
    }

    pub fn ee_position(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn tumour_center(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn target_position(&self) -> Vec3 {
        Vec3::new(self.0[6], self.0[7], self.0[8])
    }

    pub fn gripper_closed(&self) -> bool {
        self.0[11] == 1.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Largest absolute componentwise difference.
    pub fn max_deviation(&self, other: &Observation) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    None,
    TargetReached,
    Timeout,
}

impl fmt::Display for DoneReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DoneReason::None => "none",
            DoneReason::TargetReached => "target_reached",
            DoneReason::Timeout => "timeout",
        })
    }
}

impl std::str::FromStr for DoneReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(DoneReason::None),
            "target_reached" => Ok(DoneReason::TargetReached),
            "timeout" => Ok(DoneReason::Timeout),
            other => Err(format!("unknown done reason `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub ee_position: Vec3,
    pub gripper_closed: bool,
    pub tissue: TissueState,
    pub t: usize,
    pub done: bool,
    pub done_reason: DoneReason,
}

/// Result of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// Distance-shaped reward that depends on the gripper state: approach the
/// tumour while open, carry the tissue to the target once closed.
pub fn reward(scene: &SceneConfig, rc: &RewardConfig, state: &EnvState) -> f64 {
    if state.gripper_closed {
        -state.ee_position.distance(scene.target_position) * rc.k
    } else {
        -state.ee_position.distance(scene.tumour_center) * rc.k - 0.5
    }
}

#[derive(Debug, Clone)]
pub struct TissueEnv {
    scene: SceneConfig,
    reward_cfg: RewardConfig,
    rest_tissue: TissueState,
    state: EnvState,
    seed: u64,
}

impl TissueEnv {
    pub fn new(scene: SceneConfig) -> Self {
        let rest_tissue = TissueState::from_scene(&scene);
        let reward_cfg = scene.reward_config();
        let state = EnvState {
            ee_position: scene.workspace_box.clamp(Vec3::ZERO),
            gripper_closed: false,
            tissue: rest_tissue.clone(),
            t: 0,
            done: true,
            done_reason: DoneReason::None,
        };
        Self { scene, reward_cfg, rest_tissue, state, seed: 0 }
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward_cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Starts a new episode with the end-effector at `start`, gripper open
    /// and the sheet at rest.
    ///
    /// The transition model is deterministic; `seed` is recorded with the
    /// episode so that stochastic extensions stay replayable.
    pub fn reset(&mut self, start: Vec3, seed: u64) -> Result<Observation, EnvError> {
        if !start.is_finite() || !self.scene.workspace_box.contains(start) {
            return Err(EnvError::StartOutOfRange(start));
        }
        if start.y <= self.scene.sheet_height {
            return Err(EnvError::StartBelowSheet(start));
        }
        self.seed = seed;
        self.state = EnvState {
            ee_position: start,
            gripper_closed: false,
            tissue: self.rest_tissue.clone(),
            t: 0,
            done: false,
            done_reason: DoneReason::None,
        };
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        Observation::new(self.state.ee_position, self.scene.tumour_center, self.scene.target_position, self.state.gripper_closed)
    }

    pub fn reward(&self) -> f64 {
        reward(&self.scene, &self.reward_cfg, &self.state)
    }

    pub fn step(&mut self, action: Action) -> Result<Step, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let s = &mut self.state;
        s.ee_position = self.scene.workspace_box.clamp(s.ee_position + action.displacement(self.scene.step_size));
        if !s.gripper_closed {
            if let Some(i) = s.tissue.nearest_free_particle(s.ee_position, self.scene.grasp_radius) {
                s.gripper_closed = true;
                s.tissue.grasped_particle = Some(i);
            }
        }
        // An ungrasped sheet stays at rest, which the solver leaves untouched.
        if s.gripper_closed {
            s.tissue = solve_tissue(&s.tissue, s.ee_position, self.scene.solver_iterations);
        }
        s.t += 1;
        let r = reward(&self.scene, &self.reward_cfg, s);
        if s.gripper_closed && s.ee_position.distance(self.scene.target_position) <= self.scene.target_radius {
            s.done = true;
            s.done_reason = DoneReason::TargetReached;
        } else if s.t >= self.scene.max_episode_steps {
            s.done = true;
            s.done_reason = DoneReason::Timeout;
        }
        let done = s.done;
        Ok(Step { observation: self.observation(), reward: r, done })
    }

    /// Tumour exposure of the current sheet configuration.
    pub fn tumour_exposure(&self, n_samples: usize) -> f64 {
        tumour_exposure(&self.state.tissue, self.scene.tumour_center, self.scene.tumour_radius, self.scene.camera_position, n_samples)
    }

    /// Tumour exposure of the untouched scene.
    pub fn rest_exposure(&self, n_samples: usize) -> f64 {
        tumour_exposure(&self.rest_tissue, self.scene.tumour_center, self.scene.tumour_radius, self.scene.camera_position, n_samples)
    }

    /// JSON snapshot of the full state for debugging and the teleop client.
    pub fn snapshot_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scene_fingerprint": self.scene.fingerprint(),
            "seed": self.seed,
            "state": self.state,
        })
    }
}
