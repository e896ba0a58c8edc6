//! Balanced weighted-tree losses for hierarchical classification.
//!
//! The crate covers the full pipeline at desk scale: parsing and weighting
//! class trees, evaluating tree-aware losses with exact gradients,
//! hierarchical metrics and coarsening curves, brute-force verification
//! oracles, and a small trainer over synthetic hierarchically-clustered
//! data. The `hierloss` binary exposes all of it on the command line.

pub mod cli;
pub mod error;
pub mod fixtures;
pub mod hierarchy;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod trainer;
pub mod verify;
mod parallel;
mod textfmt;
pub mod weighting;

pub use error::{Error, Result};
