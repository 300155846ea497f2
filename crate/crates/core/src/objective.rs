//! Training losses and their gradients with respect to the unit-norm features.
//!
//! Memories are constants here: they are rebuilt from the features outside the
//! optimization step and never receive gradient.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::config::MmdBandwidth;
use crate::error::{Error, Result};
use crate::model::{Label, MemoryBank, NOISE};

/// `dL/df` for every sample of one feature matrix; rows outside the batch are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    g: Array2<f64>,
}

impl GradientBuffer {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            g: Array2::zeros((rows, dim)),
        }
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.g.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.g
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().all(|v| v.is_finite())
    }

    fn add_row(&mut self, row: usize, scale: f64, v: ArrayView1<'_, f64>) {
        self.g.row_mut(row).scaled_add(scale, &v);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &GradientBuffer) {
        self.g.scaled_add(scale, &other.g);
    }
}

/// Sample rows drawn into a batch (duplicates allowed) over a full feature
/// matrix with one label per row.
#[derive(Clone, Copy, Debug)]
pub struct BatchView<'a> {
    pub features: ArrayView2<'a, f64>,
    pub rows: &'a [usize],
    pub labels: &'a [Label],
}

impl BatchView<'_> {
    fn label_of(&self, row: usize, clusters: usize) -> Result<usize> {
        let l = self.labels[row];
        if l == NOISE || l as usize >= clusters {
            return Err(Error::Structural(format!(
                "sample {row} with label {l} has no memory among {clusters} clusters"
            )));
        }
        Ok(l as usize)
    }

    fn zeros(&self) -> GradientBuffer {
        GradientBuffer::zeros(self.features.nrows(), self.features.ncols())
    }
}

/// Batch mean of `-log(exp(<C+, f>/tau) / sum_p exp(<C_p, f>/tau))`.
pub fn cluster_nce(batch: &BatchView<'_>, bank: &MemoryBank, tau: f64) -> Result<(f64, GradientBuffer)> {
    let mut grad = batch.zeros();
    if batch.rows.is_empty() {
        return Ok((0.0, grad));
    }
    let centroids = bank.centroids();
    let scale = 1.0 / batch.rows.len() as f64;
    let mut loss = 0.0;
    for &r in batch.rows {
        let pos = batch.label_of(r, bank.cluster_count())?;
        let f = batch.features.row(r);
        let logits = centroids.dot(&f) / tau;
        let top = (0..logits.len())
            .max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a)))
            .expect("at least one cluster");
        let max = logits[top];
        let exp = logits.mapv(|v| (v - max).exp());
        // log-sum-exp with the leading 1 split off keeps tiny losses exact
        let rest: f64 = exp.iter().enumerate().filter(|&(k, _)| k != top).map(|(_, e)| e).sum();
        loss += (max - logits[pos]) + rest.ln_1p();
        let probs = exp / (1.0 + rest);
        // d/df = (sum_p prob_p C_p - C+) / tau
        let mut g = centroids.t().dot(&probs);
        g -= &centroids.row(pos);
        grad.add_row(r, scale / tau, g.view());
    }
    Ok((loss * scale, grad))
}

/// `sum ||f - C_label||^2` over the batch of one modality.
pub fn intra_term(batch: &BatchView<'_>, bank: &MemoryBank) -> Result<(f64, GradientBuffer)> {
    let mut grad = batch.zeros();
    let mut loss = 0.0;
    for &r in batch.rows {
        let c = batch.label_of(r, bank.cluster_count())?;
        let diff = &batch.features.row(r) - &bank.centroids().row(c);
        loss += diff.dot(&diff);
        grad.add_row(r, 2.0, diff.view());
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntraOutcome {
    pub loss: f64,
    pub visible: GradientBuffer,
    pub infrared: GradientBuffer,
}

/// Intra-modality alignment summed over both modalities.
pub fn intra_loss(
    visible: &BatchView<'_>,
    visible_bank: &MemoryBank,
    infrared: &BatchView<'_>,
    infrared_bank: &MemoryBank,
) -> Result<IntraOutcome> {
    let (lv, gv) = intra_term(visible, visible_bank)?;
    let (lr, gr) = intra_term(infrared, infrared_bank)?;
    Ok(IntraOutcome {
        loss: lv + lr,
        visible: gv,
        infrared: gr,
    })
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_mean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, sigma: f64) -> f64 {
    let denom = 2.0 * sigma * sigma;
    let mut total = 0.0;
    for x in a.rows() {
        for y in b.rows() {
            total += (-sq_dist(x, y) / denom).exp();
        }
    }
    total / (a.nrows() * b.nrows()) as f64
}

/// Biased squared MMD with a Gaussian kernel; self-pairs are included.
pub fn mmd2(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, sigma: f64) -> f64 {
    kernel_mean(x, x, sigma) + kernel_mean(y, y, sigma) - 2.0 * kernel_mean(x, y, sigma)
}

/// Gradient of [`mmd2`] with respect to each row of `x`, holding `y` fixed.
pub fn mmd2_grad_x(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    let (n, m) = (x.nrows() as f64, y.nrows() as f64);
    let s2 = sigma * sigma;
    let mut grad = Array2::zeros(x.dim());
    for (a, xa) in x.rows().into_iter().enumerate() {
        let mut g = grad.row_mut(a);
        for xb in x.rows() {
            let k = (-sq_dist(xa, xb) / (2.0 * s2)).exp();
            g.scaled_add(-2.0 * k / (n * n * s2), &(&xa - &xb));
        }
        for yb in y.rows() {
            let k = (-sq_dist(xa, yb) / (2.0 * s2)).exp();
            g.scaled_add(2.0 * k / (n * m * s2), &(&xa - &yb));
        }
    }
    grad
}

/// Median pairwise distance over the union of `x` and `y`; 1 if it vanishes.
pub fn median_bandwidth(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let rows: Vec<ArrayView1<'_, f64>> = x.rows().into_iter().chain(y.rows()).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if median > 1e-12 {
        median
    } else {
        1.0
    }
}

/// One half of the inter-modality loss with its gradient on both sides; the
/// stop-gradient side is always exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InterTerm {
    pub loss: f64,
    pub visible: GradientBuffer,
    pub infrared: GradientBuffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterOutcome {
    pub loss: f64,
    /// `1/P sum_p 1/2 D(F^v_p, sg(F^r_p))`.
    pub visible_term: InterTerm,
    /// `1/P sum_p 1/2 D(F^r_p, sg(F^v_p))`.
    pub infrared_term: InterTerm,
    pub paired: usize,
    /// Labels present on only one side of the batch.
    pub skipped: Vec<Label>,
}

impl InterOutcome {
    pub fn visible_grad(&self) -> GradientBuffer {
        let mut g = self.visible_term.visible.clone();
        g.add_scaled(1.0, &self.infrared_term.visible);
        g
    }

    pub fn infrared_grad(&self) -> GradientBuffer {
        let mut g = self.infrared_term.infrared.clone();
        g.add_scaled(1.0, &self.visible_term.infrared);
        g
    }
}

fn group(batch: &BatchView<'_>) -> BTreeMap<Label, Vec<usize>> {
    let mut out: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for &r in batch.rows {
        let l = batch.labels[r];
        if l != NOISE {
            out.entry(l).or_default().push(r);
        }
    }
    out
}

/// Cluster-level inter-modality alignment over labels shared by both sides.
///
/// Visible and infrared rows carrying the same label are compared with
/// [`mmd2`]; each half of the loss sends gradient only to its first argument.
pub fn inter_loss(
    visible: &BatchView<'_>,
    infrared: &BatchView<'_>,
    bandwidth: MmdBandwidth,
) -> Result<InterOutcome> {
    if visible.features.ncols() != infrared.features.ncols() {
        return Err(Error::Shape("visible and infrared dimensions differ".into()));
    }
    let gv = group(visible);
    let gr = group(infrared);
    let paired: Vec<Label> = gv.keys().filter(|l| gr.contains_key(l)).copied().collect();
    let skipped: Vec<Label> = gv
        .keys()
        .chain(gr.keys())
        .filter(|l| !(gv.contains_key(l) && gr.contains_key(l)))
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let empty = |b: &BatchView<'_>| b.zeros();
    let mut vt = InterTerm {
        loss: 0.0,
        visible: empty(visible),
        infrared: empty(infrared),
    };
    let mut rt = InterTerm {
        loss: 0.0,
        visible: empty(visible),
        infrared: empty(infrared),
    };
    if paired.is_empty() {
        return Ok(InterOutcome {
            loss: 0.0,
            visible_term: vt,
            infrared_term: rt,
            paired: 0,
            skipped,
        });
    }
    let weight = 0.5 / paired.len() as f64;
    for l in &paired {
        let (rows_v, rows_r) = (&gv[l], &gr[l]);
        let x = visible.features.select(Axis(0), rows_v);
        let y = infrared.features.select(Axis(0), rows_r);
        let sigma = match bandwidth {
            MmdBandwidth::Fixed(s) => s,
            MmdBandwidth::MedianHeuristic => median_bandwidth(x.view(), y.view()),
        };
        vt.loss += weight * mmd2(x.view(), y.view(), sigma);
        rt.loss += weight * mmd2(y.view(), x.view(), sigma);
        let dx = mmd2_grad_x(x.view(), y.view(), sigma);
        let dy = mmd2_grad_x(y.view(), x.view(), sigma);
        for (k, &r) in rows_v.iter().enumerate() {
            vt.visible.add_row(r, weight, dx.row(k));
        }
        for (k, &r) in rows_r.iter().enumerate() {
            rt.infrared.add_row(r, weight, dy.row(k));
        }
    }
    Ok(InterOutcome {
        loss: vt.loss + rt.loss,
        visible_term: vt,
        infrared_term: rt,
        paired: paired.len(),
        skipped,
    })
}

/// Raw loss values before weighting and scheduling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub l_v: f64,
    pub l_r: f64,
    pub l_vr: f64,
    pub l_intra: f64,
    pub l_inter: f64,
}

/// First 1-based epochs in which the alignment terms count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub intra_start_epoch: usize,
    pub inter_start_epoch: usize,
}

impl Schedule {
    pub fn intra_active(&self, epoch: usize) -> bool {
        epoch >= self.intra_start_epoch
    }

    pub fn inter_active(&self, epoch: usize) -> bool {
        epoch >= self.inter_start_epoch
    }
}

impl From<&crate::config::PipelineConfig> for Schedule {
    fn from(cfg: &crate::config::PipelineConfig) -> Self {
        Self {
            intra_start_epoch: cfg.intra_start_epoch,
            inter_start_epoch: cfg.inter_start_epoch,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_v: f64,
    pub l_r: f64,
    pub l_vr: f64,
    pub l_cmc: f64,
    pub l_intra: f64,
    pub l_inter: f64,
    pub l_sca: f64,
    pub l_overall: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,l_v,l_r,l_vr,l_cmc,l_intra,l_inter,l_sca,l_overall";

impl LossReport {
    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{},{},{},{},{},{},{},{}",
            self.l_v,
            self.l_r,
            self.l_vr,
            self.l_cmc,
            self.l_intra,
            self.l_inter,
            self.l_sca,
            self.l_overall
        )
    }

    /// Checks `l_cmc = l_v + l_r + l_vr`, the weighted alignment sum and the total.
    pub fn check(&self, lambda_intra: f64, lambda_inter: f64) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        let ok = close(self.l_cmc, self.l_v + self.l_r + self.l_vr)
            && close(self.l_sca, lambda_intra * self.l_intra + lambda_inter * self.l_inter)
            && close(self.l_overall, self.l_cmc + self.l_sca);
        if ok {
            Ok(())
        } else {
            Err(Error::Structural(format!("loss report does not compose: {self:?}")))
        }
    }
}

/// Combines the terms; alignment terms outside their schedule report 0.
pub fn overall(terms: &LossTerms, lambda_intra: f64, lambda_inter: f64, epoch: usize, schedule: Schedule) -> LossReport {
    let l_intra = if schedule.intra_active(epoch) { terms.l_intra } else { 0.0 };
    let l_inter = if schedule.inter_active(epoch) { terms.l_inter } else { 0.0 };
    let l_cmc = terms.l_v + terms.l_r + terms.l_vr;
    let l_sca = lambda_intra * l_intra + lambda_inter * l_inter;
    LossReport {
        l_v: terms.l_v,
        l_r: terms.l_r,
        l_vr: terms.l_vr,
        l_cmc,
        l_intra,
        l_inter,
        l_sca,
        l_overall: l_cmc + l_sca,
    }
}
