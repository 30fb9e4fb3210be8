//! Grid world, help protocol and evaluation harness for a collaborative
//! block-building task in which an Architect helps a Builder with short
//! language feedback, and the Builder can ask one clarification question.

pub mod agents;
pub mod clarify;
pub mod codec;
pub mod corpus;
pub mod eval;
pub mod help;
pub mod metrics;
pub mod regions;
pub mod rng;
pub mod world;

pub use world::{Coordinate, GridBounds, GridDiff, GridState};
