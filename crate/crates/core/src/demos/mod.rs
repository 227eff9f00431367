//! Expert demonstrations: the on-disk format, a scripted oracle, live
//! recording sessions and deterministic replay.

mod expert;
mod replay;
mod session;

pub use expert::{grasp_waypoint, scripted_expert, ExpertController, DEFAULT_JITTER};
pub use replay::{replay, EpisodeReplay, ReplayReport, REPLAY_TOLERANCE};
pub use session::{
    record_session, Control, RecordingSession, SessionError, SessionEvent, SessionInput, SessionPhase, DEFAULT_REPOSITION_DELAY,
};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvError, Observation, SceneConfig, StartRegion, TissueEnv};
use crate::geometry::Vec3;
use crate::kv::KvDoc;

pub const FORMAT_VERSION: u32 = 1;
/// Number of demonstration episodes used for imitation by default.
pub const DEFAULT_EPISODES: usize = 35;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invariant { line: usize, message: String },
    #[error("a demonstration set needs at least one episode")]
    Empty,
    #[error("demo file was recorded for scene {file} but the current scene is {current}; pass the override flag to use it anyway")]
    FingerprintMismatch { file: String, current: String },
    #[error("scripted expert failed from start {start}: episode ended with {reason}")]
    ExpertFailed { start: Vec3, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Scripted,
    Teleop,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Scripted => "scripted",
            Provenance::Teleop => "teleop",
        })
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scripted" => Ok(Provenance::Scripted),
            "teleop" => Ok(Provenance::Teleop),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

/// One expert step: the observation before acting and the action taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub episode_id: u64,
    pub t: usize,
    pub observation: Observation,
    pub action: Action,
    pub done: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    provenance: Provenance,
    fingerprint: String,
    episodes: usize,
    scene: BTreeMap<String, String>,
}

/// Ordered demonstration episodes recorded on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub provenance: Provenance,
    pub scene: SceneConfig,
    pub records: Vec<DemoRecord>,
}

impl DemoSet {
    /// Builds a set from complete episodes, renumbering them from 0.
    pub fn from_episodes(provenance: Provenance, scene: SceneConfig, episodes: Vec<Vec<DemoRecord>>) -> Result<Self, DemoError> {
        let records = episodes
            .into_iter()
            .enumerate()
            .flat_map(|(i, ep)| ep.into_iter().map(move |r| DemoRecord { episode_id: i as u64, ..r }))
            .collect();
        let set = Self { provenance, scene, records };
        set.validate()?;
        Ok(set)
    }

    pub fn fingerprint(&self) -> String {
        self.scene.fingerprint()
    }

    /// Records grouped by episode, in file order.
    pub fn episodes(&self) -> Vec<&[DemoRecord]> {
        self.records.chunk_by(|a, b| a.episode_id == b.episode_id).collect()
    }

    pub fn episode_count(&self) -> usize {
        self.episodes().len()
    }

    /// `(s, a)` pairs for discriminator training.
    pub fn pairs(&self) -> Vec<(Observation, Action)> {
        self.records.iter().map(|r| (r.observation, r.action)).collect()
    }

    /// Checks the structural invariants; `line` numbers assume the file layout
    /// (header on line 1, record `i` on line `i + 2`).
    pub fn validate(&self) -> Result<(), DemoError> {
        if self.records.is_empty() {
            return Err(DemoError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        let mut offset = 0;
        for ep in self.episodes() {
            let id = ep[0].episode_id;
            if !seen.insert(id) {
                return Err(DemoError::Invariant { line: offset + 2, message: format!("episode {id} is not contiguous") });
            }
            for (k, pair) in ep.windows(2).enumerate() {
                if pair[1].t <= pair[0].t {
                    return Err(DemoError::Invariant {
                        line: offset + k + 3,
                        message: format!("t must increase strictly within episode {id} ({} after {})", pair[1].t, pair[0].t),
                    });
                }
            }
            if let Some(k) = ep.iter().position(|r| r.done) {
                if k + 1 != ep.len() {
                    return Err(DemoError::Invariant {
                        line: offset + k + 2,
                        message: format!("episode {id} has done=true before its last record"),
                    });
                }
            } else {
                return Err(DemoError::Invariant { line: offset + ep.len() + 1, message: format!("episode {id} has no done=true record") });
            }
            offset += ep.len();
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), DemoError> {
        self.validate()?;
        let header = Header {
            version: FORMAT_VERSION,
            provenance: self.provenance,
            fingerprint: self.fingerprint(),
            episodes: self.episode_count(),
            scene: self.scene.to_kv().entries().clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serialises"))?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r).expect("record serialises"))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DemoError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    /// Parses a demo file. When `current` is given, its fingerprint must match
    /// the file's unless `allow_mismatch` is set, in which case a warning is
    /// logged.
    pub fn read_from(r: impl Read, current: Option<&SceneConfig>, allow_mismatch: bool) -> Result<Self, DemoError> {
        let mut lines = BufReader::new(r).lines();
        let parse_err = |line: usize, e: &dyn fmt::Display| DemoError::Parse { line, message: e.to_string() };
        let first = lines.next().ok_or(DemoError::Parse { line: 1, message: "missing header".into() })??;
        let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(1, &e))?;
        if header.version != FORMAT_VERSION {
            return Err(parse_err(1, &format!("unsupported format version {}", header.version)));
        }
        let scene = SceneConfig::apply_kv(&SceneConfig::default(), &KvDoc::from(header.scene)).map_err(|e| parse_err(1, &e))?;
        if scene.fingerprint() != header.fingerprint {
            return Err(parse_err(1, &"header fingerprint does not match its scene fields"));
        }
        if let Some(cur) = current {
            let fp = cur.fingerprint();
            if fp != header.fingerprint {
                if !allow_mismatch {
                    return Err(DemoError::FingerprintMismatch { file: header.fingerprint, current: fp });
                }
                log::warn!("demo scene {} differs from current scene {fp}; continuing by override", header.fingerprint);
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<DemoRecord>(&line).map_err(|e| parse_err(i + 2, &e))?);
        }
        let set = Self { provenance: header.provenance, scene, records };
        set.validate()?;
        if set.episode_count() != header.episodes {
            return Err(parse_err(1, &format!("header announces {} episodes, file has {}", header.episodes, set.episode_count())));
        }
        Ok(set)
    }

    pub fn load(path: &Path, current: Option<&SceneConfig>, allow_mismatch: bool) -> Result<Self, DemoError> {
        Self::read_from(fs::File::open(path)?, current, allow_mismatch)
    }
}

/// Runs the scripted expert from `count` start positions drawn uniformly from
/// the scene's start region.
pub fn generate_scripted(scene: &SceneConfig, count: usize, seed: u64, jitter: f64) -> Result<DemoSet, DemoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = StartRegion::for_scene(scene);
    let mut env = TissueEnv::new(scene.clone());
    let mut episodes = Vec::with_capacity(count);
    for i in 0..count {
        let start = region.sample(&mut rng);
        let noise_seed: u64 = rng.random();
        env.reset(start, i as u64)?;
        episodes.push(scripted_expert(&mut env, i as u64, noise_seed, jitter)?);
    }
    DemoSet::from_episodes(Provenance::Scripted, scene.clone(), episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> DemoSet {
        generate_scripted(&SceneConfig::desk_scale(), 3, 1, DEFAULT_JITTER).unwrap()
    }

    fn to_text(set: &DemoSet) -> String {
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let set = small_set();
        let back = DemoSet::read_from(to_text(&set).as_bytes(), Some(&set.scene), false).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.episode_count(), 3);
    }

    #[test]
    fn empty_set_is_rejected_on_save() {
        let set = DemoSet { provenance: Provenance::Scripted, scene: SceneConfig::desk_scale(), records: vec![] };
        assert!(matches!(set.write_to(Vec::new()), Err(DemoError::Empty)));
    }

    #[test]
    fn shuffled_t_reports_line() {
        let text = to_text(&small_set());
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(3, 4);
        let err = DemoSet::read_from(lines.join("\n").as_bytes(), None, false).unwrap_err();
        match err {
            DemoError::Invariant { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("increase"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn corrupt_line_reports_line_number() {
        let text = to_text(&small_set());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[5] = "{not json".into();
        let err = DemoSet::read_from(lines.join("\n").as_bytes(), None, false).unwrap_err();
        assert!(matches!(err, DemoError::Parse { line: 6, .. }), "{err}");
    }

    #[test]
    fn fingerprint_gate() {
        let set = small_set();
        let text = to_text(&set);
        let mut moved = set.scene.clone();
        moved.tumour_center.x += 1.0;
        let err = DemoSet::read_from(text.as_bytes(), Some(&moved), false).unwrap_err();
        assert!(matches!(err, DemoError::FingerprintMismatch { .. }));
        assert!(DemoSet::read_from(text.as_bytes(), Some(&moved), true).is_ok());
    }

    #[test]
    fn missing_done_is_rejected() {
        let mut set = small_set();
        let last = set.records.len() - 1;
        set.records[last].done = false;
        assert!(matches!(set.validate(), Err(DemoError::Invariant { .. })));
    }
}
