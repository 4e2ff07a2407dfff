//! Dataset schema, synthetic data and augmentation.

pub mod augment;
pub mod schema;
pub mod synth;

pub use augment::{augment, augment_geometric, augment_noise, perturb_r6, AugmentConfig};
pub use schema::{load_dataset, normalize_cloud, normalize_scene, write_dataset, Dataset, GraspSample, Label};
pub use synth::{synth_grasps, synth_hand, HandSpec, ObjectShape, SynthConfig};
