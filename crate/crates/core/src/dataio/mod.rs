//! Dataset formats, augmentation, synthetic scenes and evaluation.

pub mod augment;
pub mod eval;
pub mod kitti;
pub mod synth;

pub use kitti::{Difficulty, GroundTruth, SceneSample};
