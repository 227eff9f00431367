//! Scene and reward configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{Aabb, Vec3};
use crate::kv::{fmt_list, KvDoc, KvError};

/// Which sheet border is anchored to the underlying anatomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentEdge {
    XMin,
    XMax,
    ZMin,
    ZMax,
}

impl fmt::Display for AttachmentEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttachmentEdge::XMin => "x_min",
            AttachmentEdge::XMax => "x_max",
            AttachmentEdge::ZMin => "z_min",
            AttachmentEdge::ZMax => "z_max",
        })
    }
}

impl FromStr for AttachmentEdge {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "x_min" => Ok(AttachmentEdge::XMin),
            "x_max" => Ok(AttachmentEdge::XMax),
            "z_min" => Ok(AttachmentEdge::ZMin),
            "z_max" => Ok(AttachmentEdge::ZMax),
            other => Err(format!("unknown attachment edge `{other}`")),
        }
    }
}

/// Geometry, kinematics and solver settings of the retraction scene. Lengths in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Sheet (width along x, depth along z), centred on the origin.
    pub sheet_extent: (f64, f64),
    /// Particle counts along x and z.
    pub sheet_grid: (usize, usize),
    /// Height of the sheet rest plane; the sheet never sinks below it.
    pub sheet_height: f64,
    pub attachment_edge: AttachmentEdge,
    pub tumour_center: Vec3,
    pub tumour_radius: f64,
    pub target_position: Vec3,
    pub camera_position: Vec3,
    pub workspace_box: Aabb,
    pub step_size: f64,
    pub grasp_radius: f64,
    pub target_radius: f64,
    pub max_episode_steps: usize,
    pub solver_iterations: usize,
    pub stretch_limit: f64,
}

pub const SCENE_KEYS: &[&str] = &[
    "sheet_extent",
    "sheet_grid",
    "sheet_height",
    "attachment_edge",
    "tumour_center",
    "tumour_radius",
    "target_position",
    "camera_position",
    "workspace_box",
    "step_size",
    "grasp_radius",
    "target_radius",
    "max_episode_steps",
    "solver_iterations",
    "stretch_limit",
];

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            sheet_extent: (80.0, 80.0),
            sheet_grid: (9, 9),
            sheet_height: 0.0,
            attachment_edge: AttachmentEdge::XMin,
            tumour_center: Vec3::new(10.0, -6.0, 0.0),
            tumour_radius: 5.0,
            target_position: Vec3::new(20.0, 35.0, 0.0),
            camera_position: Vec3::new(80.0, 20.0, 0.0),
            workspace_box: Aabb::new(Vec3::new(-50.0, 0.0, -50.0), Vec3::new(50.0, 60.0, 50.0)),
            step_size: 0.5,
            grasp_radius: 2.0,
            target_radius: 1.0,
            max_episode_steps: 2500,
            solver_iterations: 10,
            stretch_limit: 0.1,
        }
    }
}

impl SceneConfig {
    /// Full-resolution profile: 0.5 mm increments and 2500-step episodes.
    pub fn full_scale() -> Self {
        Self::default()
    }

    /// Fast profile for CI-sized training runs: 2 mm increments, 300-step episodes.
    ///
    /// The arrival tolerance grows with the increment so that the target stays
    /// reachable on the coarser motion lattice.
    pub fn desk_scale() -> Self {
        Self { step_size: 2.0, max_episode_steps: 300, target_radius: 2.0, ..Self::default() }
    }

    pub fn rest_particle_spacing(&self) -> (f64, f64) {
        (self.sheet_extent.0 / (self.sheet_grid.0 - 1) as f64, self.sheet_extent.1 / (self.sheet_grid.1 - 1) as f64)
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig::for_scene(self)
    }

    pub fn validate(&self) -> Result<(), KvError> {
        let bx = &self.workspace_box;
        if !bx.is_valid() {
            return Err(KvError::invalid("workspace_box", "min must not exceed max"));
        }
        let finite = |key: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(KvError::invalid(key, "must be finite"))
            }
        };
        finite("sheet_height", self.sheet_height)?;
        for (key, v) in
            [("tumour_center", self.tumour_center), ("target_position", self.target_position), ("camera_position", self.camera_position)]
        {
            if !v.is_finite() {
                return Err(KvError::invalid(key, "must be finite"));
            }
        }
        if self.sheet_grid.0 < 2 || self.sheet_grid.1 < 2 {
            return Err(KvError::invalid("sheet_grid", "need at least 2x2 particles"));
        }
        if !(self.sheet_extent.0 > 0.0 && self.sheet_extent.1 > 0.0) {
            return Err(KvError::invalid("sheet_extent", "must be positive"));
        }
        // The tumour lies under the sheet, so only its footprint has to be inside the box.
        let q = self.tumour_center;
        if q.x < bx.min.x || q.x > bx.max.x || q.z < bx.min.z || q.z > bx.max.z || q.y > bx.max.y {
            return Err(KvError::invalid("tumour_center", "outside workspace_box footprint"));
        }
        if !bx.contains(self.target_position) {
            return Err(KvError::invalid("target_position", "outside workspace_box"));
        }
        for (key, v) in [
            ("tumour_radius", self.tumour_radius),
            ("step_size", self.step_size),
            ("grasp_radius", self.grasp_radius),
            ("target_radius", self.target_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(KvError::invalid(key, "must be positive"));
            }
        }
        if self.max_episode_steps == 0 {
            return Err(KvError::invalid("max_episode_steps", "must be positive"));
        }
        if self.solver_iterations == 0 {
            return Err(KvError::invalid("solver_iterations", "must be positive"));
        }
        if !(self.stretch_limit >= 0.0 && self.stretch_limit.is_finite()) {
            return Err(KvError::invalid("stretch_limit", "must be non-negative"));
        }
        Ok(())
    }

    /// Canonical key-value rendering; every field is present.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        doc.set("sheet_extent", fmt_list(&[self.sheet_extent.0, self.sheet_extent.1]));
        doc.set("sheet_grid", format!("{}, {}", self.sheet_grid.0, self.sheet_grid.1));
        doc.set("sheet_height", fmt_list(&[self.sheet_height]));
        doc.set("attachment_edge", self.attachment_edge.to_string());
        doc.set("tumour_center", fmt_list(&self.tumour_center.to_array()));
        doc.set("tumour_radius", fmt_list(&[self.tumour_radius]));
        doc.set("target_position", fmt_list(&self.target_position.to_array()));
        doc.set("camera_position", fmt_list(&self.camera_position.to_array()));
        let (lo, hi) = (self.workspace_box.min, self.workspace_box.max);
        doc.set("workspace_box", fmt_list(&[lo.x, lo.y, lo.z, hi.x, hi.y, hi.z]));
        doc.set("step_size", fmt_list(&[self.step_size]));
        doc.set("grasp_radius", fmt_list(&[self.grasp_radius]));
        doc.set("target_radius", fmt_list(&[self.target_radius]));
        doc.set("max_episode_steps", self.max_episode_steps.to_string());
        doc.set("solver_iterations", self.solver_iterations.to_string());
        doc.set("stretch_limit", fmt_list(&[self.stretch_limit]));
        doc
    }

    /// Overrides fields of `base` with the scene keys present in `doc`.
    /// Keys that are not scene keys are ignored.
    pub fn apply_kv(base: &SceneConfig, doc: &KvDoc) -> Result<SceneConfig, KvError> {
        let mut c = base.clone();
        if let Some([w, d]) = doc.parse_fixed::<f64, 2>("sheet_extent")? {
            c.sheet_extent = (w, d);
        }
        if let Some([nx, nz]) = doc.parse_fixed::<usize, 2>("sheet_grid")? {
            c.sheet_grid = (nx, nz);
        }
        if let Some(v) = doc.parse_value("sheet_height")? {
            c.sheet_height = v;
        }
        if let Some(v) = doc.parse_value("attachment_edge")? {
            c.attachment_edge = v;
        }
        if let Some(v) = doc.parse_vec3("tumour_center")? {
            c.tumour_center = v;
        }
        if let Some(v) = doc.parse_value("tumour_radius")? {
            c.tumour_radius = v;
        }
        if let Some(v) = doc.parse_vec3("target_position")? {
            c.target_position = v;
        }
        if let Some(v) = doc.parse_vec3("camera_position")? {
            c.camera_position = v;
        }
        if let Some(b) = doc.parse_fixed::<f64, 6>("workspace_box")? {
            c.workspace_box = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]));
        }
        if let Some(v) = doc.parse_value("step_size")? {
            c.step_size = v;
        }
        if let Some(v) = doc.parse_value("grasp_radius")? {
            c.grasp_radius = v;
        }
        if let Some(v) = doc.parse_value("target_radius")? {
            c.target_radius = v;
        }
        if let Some(v) = doc.parse_value("max_episode_steps")? {
            c.max_episode_steps = v;
        }
        if let Some(v) = doc.parse_value("solver_iterations")? {
            c.solver_iterations = v;
        }
        if let Some(v) = doc.parse_value("stretch_limit")? {
            c.stretch_limit = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_kv_text(base: &SceneConfig, text: &str) -> Result<SceneConfig, KvError> {
        let doc = KvDoc::parse(text)?;
        doc.check_keys(SCENE_KEYS)?;
        Self::apply_kv(base, &doc)
    }

    pub fn load(path: &Path, base: &SceneConfig) -> Result<SceneConfig, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_kv_text(base, &text)?)
    }

    /// Hex SHA-256 of the canonical rendering. Two scenes share a fingerprint
    /// iff every field is bit-identical.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_kv().to_text().as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

/// Normalisation of the distance-shaped reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// 1/mm scale applied to distances; `0.5 / d_max`.
    pub k: f64,
    /// Largest distance the end-effector can be from the tumour or target.
    pub d_max: f64,
}

impl RewardConfig {
    pub fn for_scene(scene: &SceneConfig) -> Self {
        let bx = scene.workspace_box;
        let mut d_max = bx.diagonal();
        // Only exceeds the diagonal when a reference point sits outside the box.
        for corner in corners(&bx) {
            d_max = d_max.max(corner.distance(scene.tumour_center)).max(corner.distance(scene.target_position));
        }
        Self { k: 0.5 / d_max, d_max }
    }
}

fn corners(bx: &Aabb) -> impl Iterator<Item = Vec3> + '_ {
    (0..8).map(move |i| {
        Vec3::new(
            if i & 1 == 0 { bx.min.x } else { bx.max.x },
            if i & 2 == 0 { bx.min.y } else { bx.max.y },
            if i & 4 == 0 { bx.min.z } else { bx.max.z },
        )
    })
}
