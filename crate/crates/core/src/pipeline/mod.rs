//! Epoch-level training loop.
//!
//! Each epoch reclusters the current embeddings, matches visible and infrared
//! clusters into one label space, estimates per-sample confidence, rebuilds
//! the memories and then takes PK-batched SGD steps on the free embedding
//! parameters.

mod params;
mod sampler;

pub use params::TrainableEmbeddings;
pub use sampler::{pk_sample, Batch};

use ndarray::{s, Array2, ArrayView2};
use serde::Serialize;

use crate::clustering::{build_memory, cluster_joint, sub_cluster, JointLabels};
use crate::config::{MemoryRefresh, PipelineConfig};
use crate::error::{Error, Result};
use crate::matching::{align_labels, identity_assignment, match_clusters, multi_memory_cost, SharedLabels};
use crate::metrics::{ari_report, evaluate_retrieval, MetricReport, METRICS_CSV_HEADER};
use crate::model::{
    Assignment, ConfidenceWeights, EmbeddingSet, Label, MemoryBank, Modality, MultiMemoryBank, PseudoLabeling,
    Scope, NOISE,
};
use crate::objective::{
    cluster_nce, inter_loss, intra_loss, overall, BatchView, LossReport, LossTerms, Schedule, LOSS_CSV_HEADER,
};
use crate::reliability::estimate_confidence;
use crate::rng::{stream, streams};

#[derive(Clone, Debug, PartialEq)]
pub struct Banks {
    pub visible: MemoryBank,
    pub infrared: MemoryBank,
    pub joint: MemoryBank,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Confidences {
    pub visible: ConfidenceWeights,
    pub infrared: ConfidenceWeights,
    pub joint: ConfidenceWeights,
}

/// Everything derived from one snapshot of the embeddings before training
/// steps: pseudo-labels, cross-modality assignment, confidence and the
/// (confidence-weighted) memories used by every loss of the epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Structures {
    pub labels: JointLabels,
    /// Visible and infrared sub-memories, absent when matching is disabled.
    pub multi: Option<(MultiMemoryBank, MultiMemoryBank)>,
    pub assignment: Assignment,
    pub shared: SharedLabels,
    pub confidence: Confidences,
    pub banks: Banks,
}

fn banks_for(
    visible: &EmbeddingSet,
    infrared: &EmbeddingSet,
    joint: &EmbeddingSet,
    shared: &SharedLabels,
    joint_labels: &PseudoLabeling,
    weights: Option<&Confidences>,
) -> Result<Banks> {
    Ok(Banks {
        visible: build_memory(visible, &shared.visible, weights.map(|w| &w.visible))?,
        infrared: build_memory(infrared, &shared.infrared, weights.map(|w| &w.infrared))?,
        joint: build_memory(joint, joint_labels, weights.map(|w| &w.joint))?,
    })
}

/// Clusters, matches, weighs and builds memories for one snapshot.
pub fn build_structures(
    visible: &EmbeddingSet,
    infrared: &EmbeddingSet,
    cfg: &PipelineConfig,
    epoch: usize,
) -> Result<Structures> {
    let labels = cluster_joint(visible, infrared, cfg.into())?;
    for (l, scope) in [
        (&labels.visible, Scope::Visible),
        (&labels.infrared, Scope::Infrared),
        (&labels.joint, Scope::Joint),
    ] {
        if l.cluster_count() == 0 {
            return Err(Error::ClusteringCollapse { epoch, scope });
        }
    }

    let (multi, assignment) = if cfg.mmlm {
        let mv = sub_cluster(visible, &labels.visible, cfg.n_memories)?;
        let mr = sub_cluster(infrared, &labels.infrared, cfg.n_memories)?;
        let q = match_clusters(&multi_memory_cost(&mv, &mr)?)?;
        (Some((mv, mr)), q)
    } else {
        (
            None,
            identity_assignment(labels.visible.cluster_count(), labels.infrared.cluster_count()),
        )
    };
    let shared = align_labels(&labels.visible, &labels.infrared, &assignment)?;

    let joint = visible.concat(infrared)?;
    let plain = banks_for(visible, infrared, &joint, &shared, &labels.joint, None)?;
    let (confidence, banks) = if cfg.confidence_weighting {
        let confidence = Confidences {
            visible: estimate_confidence(visible, &shared.visible, &plain.visible, cfg.tau)?.1,
            infrared: estimate_confidence(infrared, &shared.infrared, &plain.infrared, cfg.tau)?.1,
            joint: estimate_confidence(&joint, &labels.joint, &plain.joint, cfg.tau)?.1,
        };
        let banks = banks_for(visible, infrared, &joint, &shared, &labels.joint, Some(&confidence))?;
        (confidence, banks)
    } else {
        let confidence = Confidences {
            visible: ConfidenceWeights::uniform(&shared.visible),
            infrared: ConfidenceWeights::uniform(&shared.infrared),
            joint: ConfidenceWeights::uniform(&labels.joint),
        };
        (confidence, plain)
    };
    Ok(Structures {
        labels,
        multi,
        assignment,
        shared,
        confidence,
        banks,
    })
}

/// ARI of the shared pseudo-labels and retrieval on the given embeddings;
/// `None` without ground truth.
pub fn evaluate(
    structures: &Structures,
    visible: &EmbeddingSet,
    infrared: &EmbeddingSet,
) -> Result<Option<MetricReport>> {
    if visible.true_identity().is_none() || infrared.true_identity().is_none() {
        return Ok(None);
    }
    let ari = ari_report(&structures.shared, visible.true_identity(), infrared.true_identity())?;
    let (infrared_to_visible, visible_to_infrared) = evaluate_retrieval(visible, infrared)?;
    Ok(Some(MetricReport {
        ari,
        infrared_to_visible,
        visible_to_infrared,
    }))
}

/// Losses and `dL/df` for one batch.
struct BatchOutcome {
    terms: LossTerms,
    visible: Array2<f64>,
    infrared: Array2<f64>,
    skipped: usize,
}

fn batch_step(
    visible: ArrayView2<'_, f64>,
    infrared: ArrayView2<'_, f64>,
    structures: &Structures,
    banks: &Banks,
    batch: &Batch,
    cfg: &PipelineConfig,
    epoch: usize,
) -> Result<BatchOutcome> {
    let nv = visible.nrows();
    let shared = &structures.shared;
    let vb = BatchView {
        features: visible,
        rows: &batch.visible,
        labels: shared.visible.labels(),
    };
    let rb = BatchView {
        features: infrared,
        rows: &batch.infrared,
        labels: shared.infrared.labels(),
    };
    let (l_v, gv) = cluster_nce(&vb, &banks.visible, cfg.tau)?;
    let (l_r, gr) = cluster_nce(&rb, &banks.infrared, cfg.tau)?;
    let mut grad_v = gv.into_inner();
    let mut grad_r = gr.into_inner();

    let joint_features = ndarray::concatenate(ndarray::Axis(0), &[visible, infrared])
        .map_err(|e| Error::Shape(e.to_string()))?;
    let joint_labels = structures.labels.joint.labels();
    let joint_rows: Vec<usize> = batch
        .visible
        .iter()
        .copied()
        .chain(batch.infrared.iter().map(|&r| r + nv))
        .filter(|&r| joint_labels[r] != NOISE)
        .collect();
    let jb = BatchView {
        features: joint_features.view(),
        rows: &joint_rows,
        labels: joint_labels,
    };
    let (l_vr, gj) = cluster_nce(&jb, &banks.joint, cfg.tau)?;
    let gj = gj.into_inner();
    grad_v += &gj.slice(s![..nv, ..]);
    grad_r += &gj.slice(s![nv.., ..]);

    let schedule = Schedule::from(cfg);
    let mut terms = LossTerms {
        l_v,
        l_r,
        l_vr,
        ..LossTerms::default()
    };
    if schedule.intra_active(epoch) {
        let out = intra_loss(&vb, &banks.visible, &rb, &banks.infrared)?;
        terms.l_intra = out.loss;
        if cfg.lambda_intra != 0.0 {
            grad_v.scaled_add(cfg.lambda_intra, &out.visible.view());
            grad_r.scaled_add(cfg.lambda_intra, &out.infrared.view());
        }
    }
    let mut skipped = 0;
    if schedule.inter_active(epoch) {
        let out = inter_loss(&vb, &rb, cfg.mmd_sigma)?;
        terms.l_inter = out.loss;
        skipped = out.skipped.len();
        if cfg.lambda_inter != 0.0 {
            grad_v.scaled_add(cfg.lambda_inter, &out.visible_grad().view());
            grad_r.scaled_add(cfg.lambda_inter, &out.infrared_grad().view());
        }
    }
    Ok(BatchOutcome {
        terms,
        visible: grad_v,
        infrared: grad_r,
        skipped,
    })
}

/// One epoch's structures, mean batch losses and metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochState {
    /// 1-based; 0 for an evaluation-only pass.
    pub epoch: usize,
    pub structures: Structures,
    pub loss: LossReport,
    /// Pseudo-label ARI for this epoch's labels; retrieval after its updates.
    pub metrics: Option<MetricReport>,
    pub iterations: usize,
    /// Largest per-batch shortfall of shared labels.
    pub shortfall: usize,
    /// Inter-modality label pairs skipped across all batches.
    pub skipped_labels: usize,
}

/// Samples whose shared label occurs in both modalities.
fn paired_samples(shared: &SharedLabels) -> usize {
    let common: std::collections::BTreeSet<Label> = shared.common().into_iter().collect();
    shared
        .visible
        .labels()
        .iter()
        .chain(shared.infrared.labels())
        .filter(|l| common.contains(l))
        .count()
}

pub fn run_epoch(params: &mut TrainableEmbeddings, cfg: &PipelineConfig, epoch: usize) -> Result<EpochState> {
    let (visible, infrared) = params.normalized()?;
    let structures = build_structures(&visible, &infrared, cfg, epoch)?;
    let mut rng = stream(cfg.seed, streams::SAMPLER, epoch as u64);
    let iterations = paired_samples(&structures.shared).div_ceil(cfg.batch_size()).max(1);

    let mut sum = LossTerms::default();
    let mut shortfall = 0;
    let mut skipped_labels = 0;
    for it in 0..iterations {
        let batch = pk_sample(&structures.shared, cfg, &mut rng);
        shortfall = shortfall.max(batch.shortfall);
        let (v, r) = if it == 0 {
            (visible.clone(), infrared.clone())
        } else {
            params.normalized()?
        };
        let refreshed;
        let banks = if cfg.memory_refresh == MemoryRefresh::Batch && it > 0 {
            let joint = v.concat(&r)?;
            let weights = cfg.confidence_weighting.then_some(&structures.confidence);
            refreshed = banks_for(
                &v,
                &r,
                &joint,
                &structures.shared,
                &structures.labels.joint,
                weights,
            )?;
            &refreshed
        } else {
            &structures.banks
        };
        let out = batch_step(v.features(), r.features(), &structures, banks, &batch, cfg, epoch)?;
        params.step(Modality::Visible, out.visible.view(), cfg)?;
        params.step(Modality::Infrared, out.infrared.view(), cfg)?;
        sum.l_v += out.terms.l_v;
        sum.l_r += out.terms.l_r;
        sum.l_vr += out.terms.l_vr;
        sum.l_intra += out.terms.l_intra;
        sum.l_inter += out.terms.l_inter;
        skipped_labels += out.skipped;
    }
    let n = iterations as f64;
    let mean = LossTerms {
        l_v: sum.l_v / n,
        l_r: sum.l_r / n,
        l_vr: sum.l_vr / n,
        l_intra: sum.l_intra / n,
        l_inter: sum.l_inter / n,
    };
    let loss = overall(&mean, cfg.lambda_intra, cfg.lambda_inter, epoch, Schedule::from(cfg));
    let (after_v, after_r) = params.normalized()?;
    let metrics = evaluate(&structures, &after_v, &after_r)?;
    Ok(EpochState {
        epoch,
        structures,
        loss,
        metrics,
        iterations,
        shortfall,
        skipped_labels,
    })
}

/// Compact per-epoch summary kept in the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossReport,
    pub metrics: Option<MetricReport>,
    /// Cluster counts in the visible, infrared and joint scopes.
    pub clusters: [usize; 3],
    pub matched: usize,
    pub iterations: usize,
}

impl From<&EpochState> for EpochRecord {
    fn from(s: &EpochState) -> Self {
        Self {
            epoch: s.epoch,
            loss: s.loss,
            metrics: s.metrics,
            clusters: cluster_counts(&s.structures),
            matched: s.structures.assignment.pairs().len(),
            iterations: s.iterations,
        }
    }
}

fn cluster_counts(s: &Structures) -> [usize; 3] {
    [
        s.labels.visible.cluster_count(),
        s.labels.infrared.cluster_count(),
        s.labels.joint.cluster_count(),
    ]
}

pub fn history_csv_header() -> String {
    format!("{LOSS_CSV_HEADER},clusters_v,clusters_r,clusters_vr,matched,{METRICS_CSV_HEADER}")
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let [cv, cr, cj] = self.clusters;
        let metrics = match &self.metrics {
            Some(m) => m.csv_row(),
            None => ",,,,,,,".to_string(),
        };
        format!("{},{cv},{cr},{cj},{},{metrics}", self.loss.csv_row(self.epoch), self.matched)
    }
}

/// Result of a full training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRun {
    pub config: PipelineConfig,
    pub history: Vec<EpochRecord>,
    /// Structures rebuilt from the final embeddings.
    pub final_structures: Structures,
    pub final_metrics: Option<MetricReport>,
    pub visible: EmbeddingSet,
    pub infrared: EmbeddingSet,
}

impl TrainingRun {
    pub fn history_csv(&self) -> String {
        let mut out = history_csv_header();
        out.push('\n');
        for r in &self.history {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn final_clusters(&self) -> [usize; 3] {
        cluster_counts(&self.final_structures)
    }
}

/// Trains for `cfg.epochs` epochs and evaluates the final embeddings;
/// `epochs = 0` only evaluates the inputs.
pub fn run_training(visible: &EmbeddingSet, infrared: &EmbeddingSet, cfg: &PipelineConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    let mut params = TrainableEmbeddings::new(visible, infrared)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let state = run_epoch(&mut params, cfg, epoch)?;
        history.push(EpochRecord::from(&state));
    }
    let (visible, infrared) = params.normalized()?;
    let final_structures = build_structures(&visible, &infrared, cfg, cfg.epochs)?;
    let final_metrics = evaluate(&final_structures, &visible, &infrared)?;
    Ok(TrainingRun {
        config: cfg.clone(),
        history,
        final_structures,
        final_metrics,
        visible,
        infrared,
    })
}

/// Names of the five ablation configurations, in lattice order.
pub const ABLATION_NAMES: [&str; 5] = ["baseline", "+mmlm", "+intra", "+inter", "full"];

/// Baseline (single-memory matching, no alignment terms, no confidence
/// weighting), then multi-memory matching, then each alignment term with
/// confidence weighting, then both. Values not toggled come from `base`.
pub fn ablation_lattice(base: &PipelineConfig) -> Vec<(&'static str, PipelineConfig)> {
    let with = |n: usize, intra: f64, inter: f64| PipelineConfig {
        mmlm: true,
        n_memories: n,
        lambda_intra: intra,
        lambda_inter: inter,
        confidence_weighting: intra > 0.0 || inter > 0.0,
        ..base.clone()
    };
    let n = base.n_memories;
    let configs = [
        with(1, 0.0, 0.0),
        with(n, 0.0, 0.0),
        with(n, base.lambda_intra, 0.0),
        with(n, 0.0, base.lambda_inter),
        with(n, base.lambda_intra, base.lambda_inter),
    ];
    ABLATION_NAMES.into_iter().zip(configs).collect()
}

/// One configuration per value of `key`, all other settings from `base`.
pub fn sweep_configs(base: &PipelineConfig, key: &str, values: &[String]) -> Result<Vec<(String, PipelineConfig)>> {
    values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(key, v)?;
            cfg.validate()?;
            Ok((v.clone(), cfg))
        })
        .collect()
}
