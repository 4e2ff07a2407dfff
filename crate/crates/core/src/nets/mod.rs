//! Morphology encoder, object encoder, amplitude predictor, losses,
//! training and inference.

pub mod amplitude;
pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod loss;
pub mod model;
pub mod morphology;
pub mod object;
pub mod predict;
pub mod train;

pub use config::{ModelConfig, ObjectPreset};
pub use model::GraspModel;
