//! Steering policies learned by behavioral cloning in a procedural road
//! simulator: explicit heads (regression, classification, mixture density)
//! and an energy-based head, with the training, evaluation and ablation pipeline.

pub mod action_space;
pub mod artifacts;
pub mod backbone;
pub mod checks;
pub mod commands;
pub mod data;
mod error;
pub mod experiment;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
