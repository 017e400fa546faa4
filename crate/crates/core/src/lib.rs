//! Macroscopic traffic estimation on a differentiable computational graph.
//!
//! The graph chains trip generation, destination choice, logit route choice
//! and a link-interaction performance function. Its parameters are fitted
//! jointly from link flow and travel-time observations.

pub mod data;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod forward;
pub mod model;
pub mod network;
pub mod observations;
pub mod params;
pub mod rng;
pub mod sparse;
#[cfg(test)]
mod testkit;
pub mod train;

pub use error::{MateError, Result};
pub use model::NetworkModel;
