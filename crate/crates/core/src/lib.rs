//! Learning soft-tissue retraction from demonstrations.
//!
//! The crate bundles a deterministic deformable-sheet environment, a small
//! dense-network substrate, PPO and GAIL trainers, a demonstration
//! subsystem and an evaluation harness for tumour-exposure experiments.

pub mod demos;
pub mod env;
pub mod eval;
pub mod gail;
pub mod geometry;
pub mod kv;
pub mod nn;
pub mod policy;
pub mod ppo;

pub use env::{Action, DoneReason, EnvError, Observation, SceneConfig, TissueEnv};
pub use geometry::Vec3;

use thiserror::Error;

/// Top-level error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(#[from] kv::KvError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Train(#[from] ppo::TrainError),
    #[error(transparent)]
    Demo(#[from] demos::DemoError),
}
