//! Multi-memory pseudo-label matching for unsupervised visible-infrared
//! re-identification, at desk scale.
//!
//! Embeddings of two modalities are clustered with DBSCAN, clusters are split
//! into several sub-memories with k-means, and visible clusters are matched to
//! infrared clusters by a minimum-cost assignment over sub-memory distances.
//! Per-sample confidence from a two-component Gaussian mixture over
//! identification losses down-weights noisy labels when memories are built.
//! A training loop optimizes free embedding vectors with a contrastive loss
//! plus intra- and inter-modality alignment terms.

pub mod clustering;
pub mod config;
pub mod error;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod reliability;
pub mod rng;
pub mod synth;

pub use config::{MemoryRefresh, MmdBandwidth, PipelineConfig, CONFIG_KEYS};
pub use error::{Error, Result};
pub use model::{
    Assignment, ConfidenceWeights, EmbeddingSet, GmmFit, Label, MemoryBank, Modality, MultiMemoryBank,
    Orientation, PseudoLabeling, RawEmbeddings, Scope, Violation, NOISE,
};
