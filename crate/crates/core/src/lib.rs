//! Graph dual mixup: augmentation for graph classification with very few
//! labels.
//!
//! New training graphs are produced from pairs of labeled graphs by mixing
//! node features and labels directly, and mixing structure inside the
//! embedding space of a structure-only graph auto-encoder whose decoder
//! turns the mixed embeddings back into an adjacency matrix. Pairs are
//! chosen by difficulty, estimated with a pre-trained classifier, so the
//! generated set holds equal numbers of easy, mixed and hard samples.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod error;
mod fsio;
pub mod gradcheck;
pub mod graph;
pub mod gsae;
pub mod kernel;
pub mod layers;
pub mod mixup;
pub mod pipeline;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
