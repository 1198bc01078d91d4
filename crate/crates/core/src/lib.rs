//! Toolkit for evaluating user simulators of search sessions.

pub mod error;
pub mod ingest;
#[macro_use]
pub mod rng;
pub mod bench;
pub mod classifier;
pub mod embeddings;
pub mod realism;
pub mod reliability;
pub mod schema;
pub mod simulators;
pub mod testbed;

pub use error::{Error, Result};
