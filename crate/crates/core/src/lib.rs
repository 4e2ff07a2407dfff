//! Cross-embodiment grasp articulation from eigengrasps.
//!
//! Hands come in as URDF text and are compiled into padded joint tokens.
//! Eigengrasp bases are extracted from articulation data. Three small
//! networks predict per-eigengrasp amplitudes under a kinematics-weighted
//! loss, and a quasi-static proxy scores the resulting grasps.

pub mod data;
pub mod eigengrasp;
pub mod error;
pub mod gevaluate;
pub mod kinematics;
pub mod morph;
pub mod nets;
pub mod urdf;

pub use error::{Error, Result};
pub use xgrasp_autodiff as autodiff;
