//! Run configuration: one flat key-value document holding the scene, the
//! trainer hyperparameters and the run plumbing. Command-line flags are
//! applied as overrides of the same keys.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use retract_core::env::config::SCENE_KEYS;
use retract_core::gail::{GailConfig, GAIL_KEYS};
use retract_core::kv::{KvDoc, KvError};
use retract_core::ppo::{PpoConfig, PPO_KEYS};
use retract_core::SceneConfig;

use crate::CliError;

/// Keys that are neither scene nor trainer fields.
pub const RUN_KEYS: &[&str] = &["scene", "algorithm", "demo_path", "out", "seeds", "desk_scale", "allow_fingerprint_mismatch"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Ppo,
    Gail,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Gail => "gail",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "gail" => Ok(Algorithm::Gail),
            other => Err(format!("unknown algorithm `{other}` (expected ppo or gail)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub algorithm: Algorithm,
    /// Per-seed values of `ppo.seed` are taken from `seeds`.
    pub ppo: PpoConfig,
    pub gail: GailConfig,
    pub demo_path: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub desk_scale: bool,
    pub allow_fingerprint_mismatch: bool,
}

fn allowed_keys() -> Vec<&'static str> {
    RUN_KEYS.iter().chain(SCENE_KEYS).chain(PPO_KEYS.iter().filter(|k| **k != "seed")).chain(GAIL_KEYS).copied().collect()
}

/// Scene selected by a document: the profile named by `desk_scale`, then a
/// scene file named by `scene`, then any scene keys given inline.
pub fn scene_from_doc(doc: &KvDoc) -> Result<SceneConfig, CliError> {
    doc.check_keys(&allowed_keys())?;
    let desk = doc.parse_value::<bool>("desk_scale")?.unwrap_or(false);
    let mut scene = if desk { SceneConfig::desk_scale() } else { SceneConfig::default() };
    if let Some(path) = doc.get("scene") {
        scene = SceneConfig::load(Path::new(path), &scene).map_err(|e| match e {
            retract_core::Error::Io(io) => CliError::Io(format!("scene file {path}: {io}")),
            other => CliError::Config(format!("scene file {path}: {other}")),
        })?;
    }
    Ok(SceneConfig::apply_kv(&scene, doc)?)
}

/// Reads a configuration file into a document, or an empty document.
pub fn read_doc(path: Option<&Path>) -> Result<KvDoc, CliError> {
    match path {
        None => Ok(KvDoc::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Ok(KvDoc::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)
        }
    }
}

impl RunConfig {
    pub fn from_doc(doc: &KvDoc) -> Result<Self, CliError> {
        let scene = scene_from_doc(doc)?;
        let algorithm = match doc.get("algorithm") {
            None => Algorithm::Ppo,
            Some(v) => v.parse().map_err(|e: String| KvError::invalid("algorithm", e))?,
        };
        let cfg = Self {
            scene,
            algorithm,
            ppo: PpoConfig::apply_kv(&PpoConfig::default(), doc)?,
            gail: GailConfig::apply_kv(&GailConfig::default(), doc)?,
            demo_path: doc.get("demo_path").map(PathBuf::from),
            out: doc.get("out").map(PathBuf::from),
            seeds: doc.parse_list("seeds")?.unwrap_or_else(|| vec![0]),
            desk_scale: doc.parse_value("desk_scale")?.unwrap_or(false),
            allow_fingerprint_mismatch: doc.parse_value("allow_fingerprint_mismatch")?.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), KvError> {
        if self.algorithm == Algorithm::Gail && self.demo_path.is_none() {
            return Err(KvError::invalid("demo_path", "required when algorithm = gail"));
        }
        if self.seeds.is_empty() {
            return Err(KvError::invalid("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(KvError::invalid("seeds", "seeds must be distinct"));
        }
        Ok(())
    }

    /// GAIL weights in effect: plain PPO trains on the extrinsic reward only.
    pub fn effective_gail(&self) -> GailConfig {
        match self.algorithm {
            Algorithm::Ppo => GailConfig { alpha: 1.0, beta: 0.0, ..self.gail.clone() },
            Algorithm::Gail => self.gail.clone(),
        }
    }

    /// Every setting with defaults materialised. The scene is written out in
    /// full, so the document no longer depends on a scene file or profile;
    /// `out` is left out so the frozen copy can seed a fresh run.
    pub fn frozen(&self) -> KvDoc {
        let mut doc = self.scene.to_kv();
        for (k, v) in self.ppo.to_kv().entries() {
            if k != "seed" {
                doc.set(k, v.clone());
            }
        }
        for (k, v) in self.gail.to_kv().entries() {
            doc.set(k, v.clone());
        }
        doc.set("algorithm", self.algorithm.to_string());
        doc.set("seeds", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", "));
        doc.set("desk_scale", self.desk_scale.to_string());
        doc.set("allow_fingerprint_mismatch", self.allow_fingerprint_mismatch.to_string());
        if let Some(p) = &self.demo_path {
            doc.set("demo_path", p.display().to_string());
        }
        doc
    }

    pub fn ppo_for_seed(&self, seed: u64) -> PpoConfig {
        PpoConfig { seed, ..self.ppo.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> KvDoc {
        KvDoc::parse(text).unwrap()
    }

    #[test]
    fn gail_without_demos_names_the_field() {
        match RunConfig::from_doc(&doc("algorithm = gail")).unwrap_err() {
            CliError::Config(m) => assert!(m.contains("demo_path"), "{m}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_doc(&doc("learning_rate = 0.1")).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("learning_rate")), "{err}");
    }

    #[test]
    fn invalid_value_names_the_field() {
        let err = RunConfig::from_doc(&doc("clip_eps = -1")).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("clip_eps")), "{err}");
    }

    #[test]
    fn frozen_config_reproduces_itself() {
        let cfg = RunConfig::from_doc(&doc(
            "desk_scale = true\nseeds = 3, 4\ntotal_steps = 4096\nalpha = 0.3\nalgorithm = gail\ndemo_path = d.jsonl",
        ))
        .unwrap();
        assert_eq!(cfg.scene, SceneConfig::desk_scale());
        let again = RunConfig::from_doc(&cfg.frozen()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.frozen(), cfg.frozen());
    }

    #[test]
    fn inline_scene_keys_override_the_profile() {
        let cfg = RunConfig::from_doc(&doc("desk_scale = true\nmax_episode_steps = 100")).unwrap();
        assert_eq!(cfg.scene.max_episode_steps, 100);
        assert_eq!(cfg.scene.step_size, 2.0);
    }
}
