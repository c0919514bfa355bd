//! Synthetic benchmarks standing in for the learned stages.

pub mod detections;
pub mod recall;
