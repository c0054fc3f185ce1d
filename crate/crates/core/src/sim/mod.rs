//! Synthetic navigation environments and trajectory metrics.

pub mod graph;
pub mod metrics;
pub mod world;

use thiserror::Error;

use crate::embedding::StoreError;
use crate::priors::PriorError;

pub use graph::{DistanceTable, Edge, NavGraph};
pub use metrics::{episode_metrics, EpisodeMetrics, MetricsReport};
pub use world::{generate_world, Episode, Split, SynthConfig, World, WorldBundle};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("node {1} unreachable from node {0}")]
    Unreachable(usize, usize),
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prior(#[from] PriorError),
}
