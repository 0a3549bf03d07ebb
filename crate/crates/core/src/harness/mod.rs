//! Experiment plumbing: configuration, prior fitting, scene synthesis and
//! on-disk formats.

pub mod config;
pub mod ply;
pub mod pipeline;
pub mod prior;
pub mod scene;

pub use config::ExperimentConfig;
pub use scene::{load_scene, save_scene, synth_scene, SceneBundle};
