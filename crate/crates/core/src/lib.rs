//! Query-by-example spoken term detection with acoustic word embeddings.
//!
//! The pipeline runs corpus → features → model → search → eval. Search has
//! two interchangeable systems, see [`registry`].

pub mod blob;
pub mod corpus;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod features;
pub mod matcher;
pub mod model;
pub mod ranking;
pub mod registry;

pub use error::{Error, Result};

/// Crate version recorded in every output artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
