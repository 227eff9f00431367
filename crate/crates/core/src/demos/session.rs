use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DemoError, DemoRecord, DemoSet, Provenance};
use crate::env::{Action, DoneReason, EnvError, SceneConfig, Step, TissueEnv};
use crate::geometry::Vec3;

/// Ticks without recording between episodes, giving the operator time to
/// reposition.
pub const DEFAULT_REPOSITION_DELAY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Control {
    Start,
    Reset,
    Save,
    SetStart { position: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SessionInput {
    /// One tick with this action.
    Action(Action),
    Control(Control),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum SessionPhase {
    Idle,
    Active,
    Repositioning { remaining: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Started {
        start: Vec3,
    },
    Stepped(Step),
    /// The episode ended; it is kept only when it reached the target.
    EpisodeFinished {
        reason: DoneReason,
        kept: bool,
        completed: usize,
    },
    Discarded,
    Repositioning {
        remaining: usize,
    },
    StartSet {
        position: Vec3,
    },
    Saved(DemoSet),
    Idle,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("an episode is already running")]
    AlreadyActive,
    #[error("waiting for the operator to reposition ({0} ticks left)")]
    Repositioning(usize),
    #[error("no completed episode to save")]
    NothingToSave,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Demo(#[from] DemoError),
}

/// Live demonstration recording driven one tick at a time.
///
/// `Start` begins an episode at the configured start position; each tick
/// applies one action and records it. Episodes that reach the target are
/// kept, anything else (timeouts, operator resets) is discarded. After an
/// episode ends, `delay` ticks pass without recording before the next episode
/// starts automatically.
#[derive(Debug, Clone)]
pub struct RecordingSession {
    env: TissueEnv,
    phase: SessionPhase,
    start: Vec3,
    delay: usize,
    current: Vec<DemoRecord>,
    completed: Vec<Vec<DemoRecord>>,
    episodes_started: u64,
    current_rewards: f64,
}

impl RecordingSession {
    pub fn new(scene: SceneConfig, start: Vec3, delay: usize) -> Self {
        Self {
            env: TissueEnv::new(scene),
            phase: SessionPhase::Idle,
            start,
            delay,
            current: Vec::new(),
            completed: Vec::new(),
            episodes_started: 0,
            current_rewards: 0.0,
        }
    }

    pub fn env(&self) -> &TissueEnv {
        &self.env
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    pub fn start_position(&self) -> Vec3 {
        self.start
    }

    pub fn completed_episodes(&self) -> usize {
        self.completed.len()
    }

    /// Extrinsic return of the running episode so far.
    pub fn episode_reward(&self) -> f64 {
        self.current_rewards
    }

    pub fn control(&mut self, c: Control) -> Result<SessionEvent, SessionError> {
        match c {
            Control::Start => match self.phase {
                SessionPhase::Active => Err(SessionError::AlreadyActive),
                SessionPhase::Repositioning { remaining } => Err(SessionError::Repositioning(remaining)),
                SessionPhase::Idle => self.begin_episode(),
            },
            Control::Reset => {
                if self.phase == SessionPhase::Active {
                    self.current.clear();
                    self.enter_delay();
                }
                Ok(SessionEvent::Discarded)
            }
            Control::Save => {
                if self.completed.is_empty() {
                    return Err(SessionError::NothingToSave);
                }
                let set = DemoSet::from_episodes(Provenance::Teleop, self.env.scene().clone(), self.completed.clone())?;
                Ok(SessionEvent::Saved(set))
            }
            Control::SetStart { position } => {
                if self.phase == SessionPhase::Active {
                    return Err(SessionError::AlreadyActive);
                }
                // Validate against the scene without disturbing anything else.
                TissueEnv::new(self.env.scene().clone()).reset(position, 0)?;
                self.start = position;
                Ok(SessionEvent::StartSet { position })
            }
        }
    }

    /// Advances one tick. While an episode runs, `action` (idle when `None`)
    /// is applied and recorded; otherwise the input is ignored.
    pub fn tick(&mut self, action: Option<Action>) -> Result<SessionEvent, SessionError> {
        match self.phase {
            SessionPhase::Idle => Ok(SessionEvent::Idle),
            SessionPhase::Repositioning { remaining } => {
                if remaining <= 1 {
                    self.phase = SessionPhase::Idle;
                    self.begin_episode()
                } else {
                    self.phase = SessionPhase::Repositioning { remaining: remaining - 1 };
                    Ok(SessionEvent::Repositioning { remaining: remaining - 1 })
                }
            }
            SessionPhase::Active => {
                let action = action.unwrap_or(Action::IDLE);
                let observation = self.env.observation();
                let t = self.env.state().t;
                let step = self.env.step(action)?;
                self.current_rewards += step.reward;
                self.current.push(DemoRecord { episode_id: self.episodes_started - 1, t, observation, action, done: step.done });
                if !step.done {
                    return Ok(SessionEvent::Stepped(step));
                }
                let reason = self.env.state().done_reason;
                let kept = reason == DoneReason::TargetReached;
                let episode = std::mem::take(&mut self.current);
                if kept {
                    self.completed.push(episode);
                }
                self.enter_delay();
                Ok(SessionEvent::EpisodeFinished { reason, kept, completed: self.completed.len() })
            }
        }
    }

    fn begin_episode(&mut self) -> Result<SessionEvent, SessionError> {
        self.env.reset(self.start, self.episodes_started)?;
        self.episodes_started += 1;
        self.current.clear();
        self.current_rewards = 0.0;
        self.phase = SessionPhase::Active;
        Ok(SessionEvent::Started { start: self.start })
    }

    fn enter_delay(&mut self) {
        self.phase = if self.delay == 0 { SessionPhase::Idle } else { SessionPhase::Repositioning { remaining: self.delay } };
    }
}

/// Drives a session from a scripted input stream and returns the kept episodes.
pub fn record_session(
    scene: SceneConfig,
    start: Vec3,
    delay: usize,
    inputs: impl IntoIterator<Item = SessionInput>,
) -> Result<Vec<Vec<DemoRecord>>, SessionError> {
    let mut s = RecordingSession::new(scene, start, delay);
    for input in inputs {
        match input {
            SessionInput::Action(a) => s.tick(Some(a))?,
            SessionInput::Control(c) => s.control(c)?,
        };
    }
    Ok(s.completed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::scripted_expert;

    fn scripted(scene: &SceneConfig, start: Vec3) -> Vec<DemoRecord> {
        let mut env = TissueEnv::new(scene.clone());
        env.reset(start, 0).unwrap();
        scripted_expert(&mut env, 0, 0, 0.0).unwrap()
    }

    #[test]
    fn replaying_scripted_actions_records_the_same_episode() {
        let scene = SceneConfig::desk_scale();
        let start = Vec3::new(-20.0, 20.0, 15.0);
        let expert = scripted(&scene, start);
        let mut inputs = vec![SessionInput::Control(Control::Start)];
        inputs.extend(expert.iter().map(|r| SessionInput::Action(r.action)));
        let episodes = record_session(scene, start, DEFAULT_REPOSITION_DELAY, inputs).unwrap();
        assert_eq!(episodes, vec![expert]);
    }

    #[test]
    fn reset_discards_and_delay_suppresses_recording() {
        let scene = SceneConfig::desk_scale();
        let start = Vec3::new(0.0, 20.0, 0.0);
        let mut s = RecordingSession::new(scene.clone(), start, 3);
        s.control(Control::Start).unwrap();
        s.tick(Some(Action::new([0, -1, 0]).unwrap())).unwrap();
        s.control(Control::Reset).unwrap();
        assert_eq!(s.phase(), SessionPhase::Repositioning { remaining: 3 });
        assert_eq!(s.tick(None).unwrap(), SessionEvent::Repositioning { remaining: 2 });
        assert_eq!(s.tick(None).unwrap(), SessionEvent::Repositioning { remaining: 1 });
        assert!(matches!(s.tick(None).unwrap(), SessionEvent::Started { .. }));
        assert_eq!(s.env().state().t, 0);
        assert_eq!(s.completed_episodes(), 0);
        assert!(matches!(s.control(Control::Save), Err(SessionError::NothingToSave)));
    }

    #[test]
    fn consecutive_episodes_are_separated_by_the_delay() {
        let scene = SceneConfig::desk_scale();
        let start = Vec3::new(25.0, 20.0, -25.0);
        let expert = scripted(&scene, start);
        let mut s = RecordingSession::new(scene, start, DEFAULT_REPOSITION_DELAY);
        s.control(Control::Start).unwrap();
        for round in 0..2 {
            for r in &expert {
                s.tick(Some(r.action)).unwrap();
            }
            assert_eq!(s.completed_episodes(), round + 1);
            for _ in 0..DEFAULT_REPOSITION_DELAY - 1 {
                assert!(matches!(s.tick(Some(Action::IDLE)).unwrap(), SessionEvent::Repositioning { .. }));
            }
            assert!(matches!(s.tick(None).unwrap(), SessionEvent::Started { .. }));
        }
        match s.control(Control::Save).unwrap() {
            SessionEvent::Saved(set) => {
                assert_eq!(set.episode_count(), 2);
                assert_eq!(set.provenance, Provenance::Teleop);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn start_must_be_valid() {
        let mut s = RecordingSession::new(SceneConfig::desk_scale(), Vec3::new(0.0, 20.0, 0.0), 0);
        assert!(s.control(Control::SetStart { position: Vec3::new(0.0, -5.0, 0.0) }).is_err());
        assert_eq!(s.start_position(), Vec3::new(0.0, 20.0, 0.0));
    }
}
