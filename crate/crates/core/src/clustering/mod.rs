//! Pseudo-label generation and memory construction.
//!
//! Labels come from DBSCAN run separately on each modality and on the union
//! of both. Memories are per-cluster centroids; multi-memories split each
//! cluster further with k-means so that distinct sub-modes (viewpoints,
//! attire) of one identity keep their own prototype.

mod dbscan;
mod distance;
mod kmeans;
mod memory;

pub use dbscan::dbscan;
pub use distance::{pairwise_cosine_distance, DistanceMatrix};
pub use kmeans::{kmeans, sub_cluster, KMeansFit, MAX_LLOYD_ITERATIONS};
pub use memory::build_memory;

use crate::error::Result;
use crate::model::{EmbeddingSet, PseudoLabeling, Scope};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_samples: usize,
}

impl From<&crate::config::PipelineConfig> for DbscanParams {
    fn from(cfg: &crate::config::PipelineConfig) -> Self {
        Self {
            eps: cfg.dbscan_eps,
            min_samples: cfg.dbscan_min_samples,
        }
    }
}

/// Labelings for the visible set, the infrared set, and their union
/// (visible rows first).
#[derive(Clone, Debug, PartialEq)]
pub struct JointLabels {
    pub visible: PseudoLabeling,
    pub infrared: PseudoLabeling,
    pub joint: PseudoLabeling,
}

pub fn cluster_joint(
    visible: &EmbeddingSet,
    infrared: &EmbeddingSet,
    params: DbscanParams,
) -> Result<JointLabels> {
    let run = |set: &EmbeddingSet, scope| {
        dbscan(&pairwise_cosine_distance(set), params.eps, params.min_samples, scope)
    };
    let union = visible.concat(infrared)?;
    Ok(JointLabels {
        visible: run(visible, Scope::Visible),
        infrared: run(infrared, Scope::Infrared),
        joint: run(&union, Scope::Joint),
    })
}
