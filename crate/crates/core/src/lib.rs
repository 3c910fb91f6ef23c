//! Shepherding simulation and curriculum-based imitation learning.
//!
//! A scripted shepherd herds a flock to a goal in a deterministic 2D world. Its
//! demonstrations, recorded over a curriculum of drive and collect lessons, train small
//! networks that are then compared against networks trained on unstructured episodes.

pub mod curriculum;
pub mod dataset;
pub mod demos;
pub mod episode;
pub mod error;
pub mod evaluation;
pub mod learner;
pub mod policy;
pub mod sim;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
