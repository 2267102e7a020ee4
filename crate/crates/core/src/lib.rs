//! Critical node detection on sparse undirected networks.
//!
//! The crate evaluates the pairwise-connectivity objective exactly, trains a
//! graph-attention encoder with a dueling double-DQN head to pick nodes for
//! removal, and ships the usual comparison points: adaptive degree and
//! collective-influence heuristics, random removal, and a component-based
//! local search.

pub mod agent;
pub mod baselines;
pub mod bench;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod features;
pub mod graph;
pub mod local_search;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{connected_components, pairwise_connectivity, parse_edge_list, Graph, Solution};
