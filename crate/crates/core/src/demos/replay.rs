use std::fmt;

use super::{DemoError, DemoSet};
use crate::env::{SceneConfig, TissueEnv};

/// Largest per-step observation deviation a faithful replay may show.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReplay {
    pub episode_id: u64,
    pub steps: usize,
    pub max_deviation: f64,
    /// The live episode ended at a different step than the recording.
    pub termination_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub episodes: Vec<EpisodeReplay>,
}

impl ReplayReport {
    pub fn max_deviation(&self) -> f64 {
        self.episodes.iter().map(|e| e.max_deviation).fold(0.0, f64::max)
    }

    pub fn steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps).sum()
    }

    /// Every step within [`REPLAY_TOLERANCE`] and every episode ended on cue.
    pub fn is_faithful(&self) -> bool {
        self.episodes.iter().all(|e| e.max_deviation <= REPLAY_TOLERANCE && !e.termination_mismatch)
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bad = self.episodes.iter().filter(|e| e.termination_mismatch).count();
        write!(
            f,
            "{} episodes, {} steps, max observation deviation {:e}, {} termination mismatches: {}",
            self.episodes.len(),
            self.steps(),
            self.max_deviation(),
            bad,
            if self.is_faithful() { "ok" } else { "DIVERGED" }
        )
    }
}

/// Re-executes every episode's recorded actions from its recorded start on
/// `scene` and compares each observation with the recording.
pub fn replay(set: &DemoSet, scene: &SceneConfig) -> Result<ReplayReport, DemoError> {
    let mut env = TissueEnv::new(scene.clone());
    let mut episodes = Vec::new();
    for ep in set.episodes() {
        let first = &ep[0];
        let mut obs = env.reset(first.observation.ee_position(), first.episode_id)?;
        let mut max_dev: f64 = 0.0;
        let mut mismatch = false;
        for (k, rec) in ep.iter().enumerate() {
            let dev = obs.max_deviation(&rec.observation);
            // NaN compares false, so fold it in explicitly.
            max_dev = if dev.is_nan() { f64::INFINITY } else { max_dev.max(dev) };
            let step = env.step(rec.action)?;
            obs = step.observation;
            if step.done != rec.done {
                mismatch = true;
            }
            if step.done && k + 1 < ep.len() {
                break;
            }
        }
        episodes.push(EpisodeReplay {
            episode_id: first.episode_id,
            steps: ep.len(),
            max_deviation: max_dev,
            termination_mismatch: mismatch,
        });
    }
    Ok(ReplayReport { episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::{generate_scripted, DEFAULT_JITTER};

    #[test]
    fn scripted_demos_replay_exactly() {
        let scene = SceneConfig::desk_scale();
        let set = generate_scripted(&scene, 4, 7, DEFAULT_JITTER).unwrap();
        let report = replay(&set, &scene).unwrap();
        assert_eq!(report.max_deviation(), 0.0);
        assert!(report.is_faithful(), "{report}");
    }

    #[test]
    fn drifted_scene_is_reported() {
        let scene = SceneConfig::desk_scale();
        let set = generate_scripted(&scene, 2, 7, DEFAULT_JITTER).unwrap();
        let mut drifted = scene.clone();
        drifted.tumour_center.z += 0.5;
        let report = replay(&set, &drifted).unwrap();
        assert!(report.max_deviation() > REPLAY_TOLERANCE);
        assert!(!report.is_faithful());
    }
}
