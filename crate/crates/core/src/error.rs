use thiserror::Error;

use crate::model::Scope;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroRow { row: usize },

    #[error("invalid embedding set: {0}")]
    InvalidEmbeddings(String),

    #[error("invalid pseudo-labeling: {0}")]
    InvalidLabels(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("assignment infeasible: {visible} visible clusters cannot cover {infrared} infrared clusters")]
    Infeasible { visible: usize, infrared: usize },

    #[error("cost matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("loss distribution is degenerate ({0}); assign uniform confidence 1")]
    DegenerateLosses(String),

    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("unknown config key `{key}`; valid keys: {valid}")]
    UnknownKey { key: String, valid: String },

    #[error("invalid synth spec `{field}`: {reason}")]
    Spec { field: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("clustering collapsed at epoch {epoch}: no clusters in {scope} scope (check dbscan_eps)")]
    ClusteringCollapse { epoch: usize, scope: Scope },

    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    #[error("{0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn spec(field: &str, reason: impl Into<String>) -> Self {
        Error::Spec {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
