//! Reference-coupled multi-agent driving simulation with learned
//! hierarchical policies, discriminator-pruned beam search and realism
//! metrics.

pub mod agents;
pub mod beam;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod roadgraph;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
