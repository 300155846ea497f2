//! Pipeline hyper-parameters and their flat `key=value` text form.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::parse_key_values;

/// Bandwidth of the Gaussian kernel used by the inter-modality MMD term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdBandwidth {
    /// Median pairwise distance over the union of the two compared sets.
    MedianHeuristic,
    Fixed(f64),
}

impl fmt::Display for MmdBandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MmdBandwidth::MedianHeuristic => f.write_str("median"),
            MmdBandwidth::Fixed(s) => write!(f, "{s}"),
        }
    }
}

/// When memory banks are rebuilt from the current features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryRefresh {
    Epoch,
    Batch,
}

impl fmt::Display for MemoryRefresh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryRefresh::Epoch => f.write_str("epoch"),
            MemoryRefresh::Batch => f.write_str("batch"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Softmax temperature of the contrastive and identification losses.
    pub tau: f64,
    /// DBSCAN radius in cosine distance.
    pub dbscan_eps: f64,
    pub dbscan_min_samples: usize,
    /// Sub-memories per cluster.
    pub n_memories: usize,
    pub lambda_intra: f64,
    pub lambda_inter: f64,
    pub mmd_sigma: MmdBandwidth,
    pub epochs: usize,
    /// First 1-based epoch in which the intra-modality alignment term counts.
    pub intra_start_epoch: usize,
    /// First 1-based epoch in which the inter-modality alignment term counts.
    pub inter_start_epoch: usize,
    pub batch_ids: usize,
    pub per_id_visible: usize,
    pub per_id_infrared: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Match clusters across modalities; when off, cluster `p` of one
    /// modality is paired with cluster `p` of the other.
    pub mmlm: bool,
    /// Weight memories by GMM posterior confidence.
    pub confidence_weighting: bool,
    pub memory_refresh: MemoryRefresh,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            dbscan_eps: 0.6,
            dbscan_min_samples: 4,
            n_memories: 4,
            lambda_intra: 0.5,
            lambda_inter: 0.05,
            mmd_sigma: MmdBandwidth::MedianHeuristic,
            epochs: 80,
            intra_start_epoch: 1,
            inter_start_epoch: 15,
            batch_ids: 8,
            per_id_visible: 4,
            per_id_infrared: 4,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            mmlm: true,
            confidence_weighting: true,
            memory_refresh: MemoryRefresh::Epoch,
        }
    }
}

/// Every accepted key, in canonical output order.
pub const CONFIG_KEYS: &[&str] = &[
    "tau",
    "dbscan_eps",
    "dbscan_min_samples",
    "n_memories",
    "lambda_intra",
    "lambda_inter",
    "mmd_sigma",
    "epochs",
    "intra_start_epoch",
    "inter_start_epoch",
    "batch_ids",
    "per_id_visible",
    "per_id_infrared",
    "learning_rate",
    "momentum",
    "weight_decay",
    "seed",
    "mmlm",
    "confidence_weighting",
    "memory_refresh",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        other => Err(Error::config(key, format!("expected true/false, got `{other}`"))),
    }
}

impl PipelineConfig {
    /// Sets one field from its text form. Unknown keys are rejected with the
    /// list of valid ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau" => self.tau = num(key, value)?,
            "dbscan_eps" => self.dbscan_eps = num(key, value)?,
            "dbscan_min_samples" => self.dbscan_min_samples = num(key, value)?,
            "n_memories" => self.n_memories = num(key, value)?,
            "lambda_intra" => self.lambda_intra = num(key, value)?,
            "lambda_inter" => self.lambda_inter = num(key, value)?,
            "mmd_sigma" => {
                self.mmd_sigma = match value.trim() {
                    "median" => MmdBandwidth::MedianHeuristic,
                    v => MmdBandwidth::Fixed(num(key, v)?),
                }
            }
            "epochs" => self.epochs = num(key, value)?,
            "intra_start_epoch" => self.intra_start_epoch = num(key, value)?,
            "inter_start_epoch" => self.inter_start_epoch = num(key, value)?,
            "batch_ids" => self.batch_ids = num(key, value)?,
            "per_id_visible" => self.per_id_visible = num(key, value)?,
            "per_id_infrared" => self.per_id_infrared = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mmlm" => self.mmlm = flag(key, value)?,
            "confidence_weighting" => self.confidence_weighting = flag(key, value)?,
            "memory_refresh" => {
                self.memory_refresh = match value.trim() {
                    "epoch" => MemoryRefresh::Epoch,
                    "batch" => MemoryRefresh::Batch,
                    other => {
                        return Err(Error::config(
                            key,
                            format!("expected epoch or batch, got `{other}`"),
                        ))
                    }
                }
            }
            _ => {
                return Err(Error::UnknownKey {
                    key: key.to_string(),
                    valid: CONFIG_KEYS.join(", "),
                })
            }
        }
        Ok(())
    }

    /// Text form of one field, as accepted by [`PipelineConfig::set`].
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "tau" => self.tau.to_string(),
            "dbscan_eps" => self.dbscan_eps.to_string(),
            "dbscan_min_samples" => self.dbscan_min_samples.to_string(),
            "n_memories" => self.n_memories.to_string(),
            "lambda_intra" => self.lambda_intra.to_string(),
            "lambda_inter" => self.lambda_inter.to_string(),
            "mmd_sigma" => self.mmd_sigma.to_string(),
            "epochs" => self.epochs.to_string(),
            "intra_start_epoch" => self.intra_start_epoch.to_string(),
            "inter_start_epoch" => self.inter_start_epoch.to_string(),
            "batch_ids" => self.batch_ids.to_string(),
            "per_id_visible" => self.per_id_visible.to_string(),
            "per_id_infrared" => self.per_id_infrared.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "seed" => self.seed.to_string(),
            "mmlm" => self.mmlm.to_string(),
            "confidence_weighting" => self.confidence_weighting.to_string(),
            "memory_refresh" => self.memory_refresh.to_string(),
            _ => {
                return Err(Error::UnknownKey {
                    key: key.to_string(),
                    valid: CONFIG_KEYS.join(", "),
                })
            }
        })
    }

    /// Applies `key=value` lines on top of `self`; later lines win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (_, key, value) in parse_key_values(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("canonical key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("dbscan_eps", self.dbscan_eps),
            ("learning_rate", self.learning_rate),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a positive finite number"));
            }
        }
        let non_negative = [
            ("lambda_intra", self.lambda_intra),
            ("lambda_inter", self.lambda_inter),
            ("weight_decay", self.weight_decay),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a non-negative finite number"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if let MmdBandwidth::Fixed(s) = self.mmd_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("mmd_sigma", "must be `median` or a positive number"));
            }
        }
        let counts = [
            ("dbscan_min_samples", self.dbscan_min_samples),
            ("n_memories", self.n_memories),
            ("intra_start_epoch", self.intra_start_epoch),
            ("inter_start_epoch", self.inter_start_epoch),
            ("batch_ids", self.batch_ids),
            ("per_id_visible", self.per_id_visible),
            ("per_id_infrared", self.per_id_infrared),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Short name of the matching setup, echoed in reports.
    pub fn matching_name(&self) -> &'static str {
        if !self.mmlm {
            "no-matching"
        } else if self.n_memories == 1 {
            "baseline-matching"
        } else {
            "multi-memory-matching"
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_ids * (self.per_id_visible + self.per_id_infrared)
    }
}
