//! Simulation of backdoor data poisoning in partitioned token gossip learning.
//!
//! Nodes of a random overlay each hold a 250-image MNIST shard and a
//! multinomial logistic regression model. They gossip model partitions under
//! a token budget, merging what they receive and training after every merge.
//! A chosen subset of nodes stamps a trigger on part of its data and relabels
//! it, and the simulator tracks how the honest nodes' accuracy on clean and
//! trigger-stamped test images evolves.
//!
//! The modules mirror the pipeline: [`data`] (IDX loading, sharding,
//! poisoning), [`model`] (learner and partitions), [`topology`] (overlay
//! generators), [`attack`] (Byzantine placement), [`protocol`] (node state
//! machine), [`engine`] (round loop and metrics) and [`plan`] (experiment
//! grids and output files).

pub mod attack;
pub mod data;
pub mod engine;
pub mod error;
pub mod model;
pub mod plan;
pub mod protocol;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
