//! Review-aware graph contrastive learning for rating prediction.
//!
//! Pipeline: [`data`] ingests and splits interactions, [`embed`] builds frozen
//! whitened review features, [`graph`] holds the rating-typed bipartite graph
//! and its node-dropped views, [`model`] computes embeddings and predictions,
//! [`losses`] the rating and contrastive objectives, [`train`] optimizes them,
//! and [`eval`] measures held-out error.

pub mod data;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod model;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
