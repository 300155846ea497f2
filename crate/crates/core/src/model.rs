//! Domain types shared by every stage: embedding sets, pseudo-labels,
//! memory banks, assignments and confidence weights.
//!
//! Features are always stored with unit-norm rows, so every similarity in
//! the crate is a plain dot product. Noise samples carry the label [`NOISE`].

use std::fmt;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cluster index; negative values never appear except as [`NOISE`].
pub type Label = i64;

/// Label of samples that belong to no cluster.
pub const NOISE: Label = -1;

/// Tolerance of the unit-norm row invariant.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visible,
    Infrared,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visible => "v",
            Modality::Infrared => "r",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "v" => Some(Modality::Visible),
            "r" => Some(Modality::Infrared),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Visible => f.write_str("visible"),
            Modality::Infrared => f.write_str("infrared"),
        }
    }
}

/// Which samples a labeling, bank or weight vector refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Visible,
    Infrared,
    /// Visible rows followed by infrared rows.
    Joint,
}

impl From<Modality> for Scope {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Visible => Scope::Visible,
            Modality::Infrared => Scope::Infrared,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Visible => f.write_str("visible"),
            Scope::Infrared => f.write_str("infrared"),
            Scope::Joint => f.write_str("joint"),
        }
    }
}

/// Unvalidated embedding data, as read from disk or assembled by hand.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEmbeddings {
    pub features: Array2<f64>,
    pub modality: Vec<Option<Modality>>,
    pub true_identity: Option<Vec<Option<u32>>>,
}

/// A broken [`EmbeddingSet`] invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Empty,
    DimensionTooSmall { dim: usize },
    TagCount { rows: usize, tags: usize },
    IdentityCount { rows: usize, ids: usize },
    NonFinite { row: usize },
    NotUnitNorm { row: usize, norm: f64 },
    MissingModality { row: usize },
    MissingIdentity { row: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => f.write_str("no rows"),
            Violation::DimensionTooSmall { dim } => write!(f, "dimension {dim} < 2"),
            Violation::TagCount { rows, tags } => {
                write!(f, "{tags} modality tags for {rows} rows")
            }
            Violation::IdentityCount { rows, ids } => {
                write!(f, "{ids} identities for {rows} rows")
            }
            Violation::NonFinite { row } => write!(f, "row {row} has a non-finite entry"),
            Violation::NotUnitNorm { row, norm } => {
                write!(f, "row {row} has norm {norm}, expected 1")
            }
            Violation::MissingModality { row } => write!(f, "row {row} has no modality tag"),
            Violation::MissingIdentity { row } => write!(
                f,
                "row {row} has no identity while other rows do (identities must be all-or-none)"
            ),
        }
    }
}

/// Lists every violated invariant; an empty report means the data is valid.
pub fn validate(raw: &RawEmbeddings) -> Vec<Violation> {
    let mut report = Vec::new();
    let (rows, dim) = raw.features.dim();
    if rows == 0 {
        report.push(Violation::Empty);
    }
    if dim < 2 {
        report.push(Violation::DimensionTooSmall { dim });
    }
    if raw.modality.len() != rows {
        report.push(Violation::TagCount {
            rows,
            tags: raw.modality.len(),
        });
    }
    for (row, r) in raw.features.axis_iter(Axis(0)).enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            report.push(Violation::NonFinite { row });
            continue;
        }
        let norm = r.dot(&r).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            report.push(Violation::NotUnitNorm { row, norm });
        }
    }
    for (row, tag) in raw.modality.iter().enumerate() {
        if tag.is_none() {
            report.push(Violation::MissingModality { row });
        }
    }
    if let Some(ids) = &raw.true_identity {
        if ids.len() != rows {
            report.push(Violation::IdentityCount {
                rows,
                ids: ids.len(),
            });
        }
        if ids.iter().any(Option::is_some) {
            for (row, id) in ids.iter().enumerate() {
                if id.is_none() {
                    report.push(Violation::MissingIdentity { row });
                }
            }
        }
    }
    report
}

/// Unit-norm feature rows with per-row modality tags and optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    features: Array2<f64>,
    modality: Vec<Modality>,
    true_identity: Option<Vec<u32>>,
}

impl EmbeddingSet {
    pub fn new(
        features: Array2<f64>,
        modality: Vec<Modality>,
        true_identity: Option<Vec<u32>>,
    ) -> Result<Self> {
        let raw = RawEmbeddings {
            features,
            modality: modality.into_iter().map(Some).collect(),
            true_identity: true_identity.map(|ids| ids.into_iter().map(Some).collect()),
        };
        Self::from_raw(raw)
    }

    /// Builds a set whose rows all share one modality.
    pub fn single(
        features: Array2<f64>,
        modality: Modality,
        true_identity: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = features.nrows();
        Self::new(features, vec![modality; n], true_identity)
    }

    pub fn from_raw(raw: RawEmbeddings) -> Result<Self> {
        let report = validate(&raw);
        if !report.is_empty() {
            let msg = report
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::InvalidEmbeddings(msg));
        }
        let modality = raw.modality.into_iter().flatten().collect();
        // all-or-none was checked above; all-None means "no ground truth"
        let true_identity = raw
            .true_identity
            .and_then(|ids| ids.into_iter().collect::<Option<Vec<u32>>>());
        Ok(Self {
            features: raw.features,
            modality,
            true_identity,
        })
    }

    pub fn to_raw(&self) -> RawEmbeddings {
        RawEmbeddings {
            features: self.features.clone(),
            modality: self.modality.iter().copied().map(Some).collect(),
            true_identity: self
                .true_identity
                .as_ref()
                .map(|ids| ids.iter().copied().map(Some).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn modality(&self) -> &[Modality] {
        &self.modality
    }

    pub fn true_identity(&self) -> Option<&[u32]> {
        self.true_identity.as_deref()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &EmbeddingSet) -> Result<EmbeddingSet> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "cannot concatenate dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let modality = self
            .modality
            .iter()
            .chain(other.modality.iter())
            .copied()
            .collect();
        let true_identity = match (&self.true_identity, &other.true_identity) {
            (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).copied().collect()),
            _ => None,
        };
        Ok(EmbeddingSet {
            features,
            modality,
            true_identity,
        })
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> EmbeddingSet {
        EmbeddingSet {
            features: self.features.select(Axis(0), rows),
            modality: rows.iter().map(|&i| self.modality[i]).collect(),
            true_identity: self
                .true_identity
                .as_ref()
                .map(|ids| rows.iter().map(|&i| ids[i]).collect()),
        }
    }
}

/// Scales every row to unit L2 norm.
pub fn normalize_rows(matrix: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = matrix.to_owned();
    for (row, mut r) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = r.dot(&r).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroRow { row });
        }
        r.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

/// Cluster assignment per sample; non-noise labels are exactly `0..cluster_count`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PseudoLabeling {
    scope: Scope,
    labels: Vec<Label>,
    cluster_count: usize,
}

impl PseudoLabeling {
    /// Validates that the non-noise labels occupy a contiguous range from 0.
    pub fn new(scope: Scope, labels: Vec<Label>) -> Result<Self> {
        let mut max = NOISE;
        for (i, &l) in labels.iter().enumerate() {
            if l < NOISE {
                return Err(Error::InvalidLabels(format!("sample {i} has label {l}")));
            }
            max = max.max(l);
        }
        let cluster_count = (max + 1) as usize;
        let mut seen = vec![false; cluster_count];
        for &l in labels.iter().filter(|&&l| l != NOISE) {
            seen[l as usize] = true;
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidLabels(format!(
                "label {gap} is unoccupied but {max} is used"
            )));
        }
        Ok(Self {
            scope,
            labels,
            cluster_count,
        })
    }

    /// Renumbers arbitrary labels contiguously in order of first appearance;
    /// negative inputs become noise.
    pub fn renumbered(scope: Scope, raw: &[Label]) -> Self {
        let mut map = std::collections::BTreeMap::new();
        let labels = raw
            .iter()
            .map(|&l| {
                if l < 0 {
                    NOISE
                } else {
                    let next = map.len() as Label;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect();
        Self {
            scope,
            labels,
            cluster_count: map.len(),
        }
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    /// Member sample indices per cluster, in ascending sample order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != NOISE {
                out[l as usize].push(i);
            }
        }
        out
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.cluster_count];
        for &l in self.labels.iter().filter(|&&l| l != NOISE) {
            out[l as usize] += 1;
        }
        out
    }
}

/// One centroid per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    pub(crate) scope: Scope,
    pub(crate) centroids: Array2<f64>,
    pub(crate) counts: Vec<usize>,
}

impl MemoryBank {
    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn centroids(&self) -> ArrayView2<'_, f64> {
        self.centroids.view()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cluster_count(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }
}

/// Up to `n` sub-centroids per cluster; slots with zero occupancy are empty
/// and hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiMemoryBank {
    pub(crate) scope: Scope,
    pub(crate) memories: Array3<f64>,
    pub(crate) occupancy: Array2<usize>,
}

impl MultiMemoryBank {
    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn cluster_count(&self) -> usize {
        self.memories.dim().0
    }

    pub fn slots(&self) -> usize {
        self.memories.dim().1
    }

    pub fn dim(&self) -> usize {
        self.memories.dim().2
    }

    pub fn memories(&self) -> &Array3<f64> {
        &self.memories
    }

    pub fn occupancy(&self) -> &Array2<usize> {
        &self.occupancy
    }

    /// Non-empty sub-memories of `cluster`.
    pub fn active(&self, cluster: usize) -> impl Iterator<Item = ArrayView1<'_, f64>> + '_ {
        (0..self.slots())
            .filter(move |&j| self.occupancy[[cluster, j]] > 0)
            .map(move |j| self.memories.slice(s![cluster, j, ..]))
    }
}

/// Which side of the bipartite program is covered exactly once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Every infrared cluster matched once, visible clusters at most once.
    InfraredCovered,
    /// Transposed program used when there are fewer visible than infrared clusters.
    VisibleCovered,
}

/// Binary visible-to-infrared cluster correspondence with its cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub(crate) q: Array2<u8>,
    pub(crate) cost: Array2<f64>,
    pub(crate) total_cost: f64,
    pub(crate) orientation: Orientation,
}

impl Assignment {
    pub fn q(&self) -> &Array2<u8> {
        &self.q
    }

    pub fn cost(&self) -> &Array2<f64> {
        &self.cost
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn visible_clusters(&self) -> usize {
        self.q.nrows()
    }

    pub fn infrared_clusters(&self) -> usize {
        self.q.ncols()
    }

    /// Matched `(visible, infrared, cost)` triples in visible order.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for ((p, pp), &v) in self.q.indexed_iter() {
            if v == 1 {
                out.push((p, pp, self.cost[[p, pp]]));
            }
        }
        out
    }

    /// Infrared partner of each visible cluster.
    pub fn partner_of_visible(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.visible_clusters()];
        for (p, pp, _) in self.pairs() {
            out[p] = Some(pp);
        }
        out
    }

    /// Visible partner of each infrared cluster.
    pub fn partner_of_infrared(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.infrared_clusters()];
        for (p, pp, _) in self.pairs() {
            out[pp] = Some(p);
        }
        out
    }

    /// Checks binary entries, the row/column sum constraints of the current
    /// orientation, and that `total_cost` matches the selected entries.
    pub fn check(&self) -> Result<()> {
        if self.q.dim() != self.cost.dim() {
            return Err(Error::Structural("q and cost shapes differ".into()));
        }
        if self.q.iter().any(|&v| v > 1) {
            return Err(Error::Structural("q is not binary".into()));
        }
        let rows: Vec<usize> = self
            .q
            .axis_iter(Axis(0))
            .map(|r| r.iter().map(|&v| v as usize).sum())
            .collect();
        let cols: Vec<usize> = self
            .q
            .axis_iter(Axis(1))
            .map(|c| c.iter().map(|&v| v as usize).sum())
            .collect();
        let (exact, at_most, exact_name) = match self.orientation {
            Orientation::InfraredCovered => (&cols, &rows, "infrared column"),
            Orientation::VisibleCovered => (&rows, &cols, "visible row"),
        };
        if let Some(i) = exact.iter().position(|&s| s != 1) {
            return Err(Error::Structural(format!(
                "{exact_name} {i} matched {} times",
                exact[i]
            )));
        }
        if let Some(i) = at_most.iter().position(|&s| s > 1) {
            return Err(Error::Structural(format!(
                "cluster {i} on the slack side matched {} times",
                at_most[i]
            )));
        }
        let total: f64 = self.pairs().iter().map(|t| t.2).sum();
        if (total - self.total_cost).abs() > 1e-9 * (1.0 + total.abs()) {
            return Err(Error::Structural(format!(
                "total cost {} differs from selected sum {total}",
                self.total_cost
            )));
        }
        Ok(())
    }

    /// `visible_cluster,infrared_cluster,cost` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("visible_cluster,infrared_cluster,cost\n");
        for (p, pp, c) in self.pairs() {
            out.push_str(&format!("{p},{pp},{c}\n"));
        }
        out
    }
}

/// Two-component 1-D Gaussian mixture, component 0 having the smaller mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GmmFit {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub mix: [f64; 2],
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Log-likelihood before each M-step, plus the final value.
    pub trace: Vec<f64>,
}

/// Per-sample posterior confidence of the low-loss component.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceWeights {
    pub(crate) scope: Scope,
    pub(crate) w: Vec<f64>,
    /// `None` when the loss distribution was degenerate and confidence is uniform.
    pub(crate) gmm: Option<GmmFit>,
}

impl ConfidenceWeights {
    /// Weight 1 for clustered samples and 0 for noise.
    pub fn uniform(labels: &PseudoLabeling) -> Self {
        Self {
            scope: labels.scope(),
            w: labels
                .labels()
                .iter()
                .map(|&l| if l == NOISE { 0.0 } else { 1.0 })
                .collect(),
            gmm: None,
        }
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn gmm(&self) -> Option<&GmmFit> {
        self.gmm.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn raw(features: Array2<f64>) -> RawEmbeddings {
        let n = features.nrows();
        RawEmbeddings {
            features,
            modality: vec![Some(Modality::Visible); n],
            true_identity: None,
        }
    }

    #[test]
    fn valid_set_has_empty_report() {
        let r = raw(array![[1.0, 0.0], [0.6, 0.8], [0.0, -1.0], [0.8, 0.6]]);
        assert!(validate(&r).is_empty());
    }

    #[test]
    fn short_row_is_reported() {
        let r = raw(array![[1.0, 0.0], [0.3, 0.4]]);
        let report = validate(&r);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::NotUnitNorm { row: 1, .. }));
        assert!(report[0].to_string().contains("row 1"));
    }

    #[test]
    fn missing_tag_is_reported() {
        let mut r = raw(array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        r.modality[3] = None;
        assert_eq!(validate(&r), vec![Violation::MissingModality { row: 3 }]);
    }

    #[test]
    fn partial_identity_is_reported() {
        let mut r = raw(array![[1.0, 0.0], [0.0, 1.0]]);
        r.true_identity = Some(vec![Some(0), None]);
        assert_eq!(validate(&r), vec![Violation::MissingIdentity { row: 1 }]);
        r.true_identity = Some(vec![None, None]);
        assert!(validate(&r).is_empty());
        assert!(EmbeddingSet::from_raw(r).unwrap().true_identity().is_none());
    }

    #[test]
    fn tiny_dimension_is_reported() {
        let r = raw(array![[1.0], [1.0]]);
        assert_eq!(validate(&r), vec![Violation::DimensionTooSmall { dim: 1 }]);
    }

    #[test]
    fn normalize_three_four_five() {
        let out = normalize_rows(array![[3.0, 4.0]].view()).unwrap();
        assert!((out[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((out[[0, 1]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_keeps_unit_rows() {
        let x = array![[0.6, 0.8], [1.0, 0.0]];
        assert_eq!(normalize_rows(x.view()).unwrap(), x);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let err = normalize_rows(array![[1.0, 0.0], [0.0, 0.0]].view()).unwrap_err();
        assert_eq!(err, Error::ZeroRow { row: 1 });
    }

    #[test]
    fn labeling_requires_contiguous_labels() {
        assert!(PseudoLabeling::new(Scope::Visible, vec![0, 2, NOISE]).is_err());
        assert!(PseudoLabeling::new(Scope::Visible, vec![0, -3]).is_err());
        let l = PseudoLabeling::new(Scope::Visible, vec![1, 0, NOISE, 1]).unwrap();
        assert_eq!(l.cluster_count(), 2);
        assert_eq!(l.members(), vec![vec![1], vec![0, 3]]);
        assert_eq!(l.noise_count(), 1);
    }

    #[test]
    fn renumbering_follows_first_appearance() {
        let l = PseudoLabeling::renumbered(Scope::Joint, &[7, 7, -1, 3, 9, 3]);
        assert_eq!(l.labels(), &[0, 0, NOISE, 1, 2, 1]);
        assert_eq!(l.cluster_count(), 3);
    }

    #[test]
    fn concat_keeps_order() {
        let a = EmbeddingSet::single(array![[1.0, 0.0]], Modality::Visible, Some(vec![4])).unwrap();
        let b = EmbeddingSet::single(array![[0.0, 1.0]], Modality::Infrared, Some(vec![5])).unwrap();
        let c = a.concat(&b).unwrap();
        assert_eq!(c.modality(), &[Modality::Visible, Modality::Infrared]);
        assert_eq!(c.true_identity(), Some(&[4, 5][..]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_is_idempotent(
                rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..8)
            ) {
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                let m = Array2::from_shape_vec((rows.len(), 3), flat).unwrap();
                prop_assume!(m.axis_iter(Axis(0)).all(|r| r.dot(&r) > 1e-6));
                let once = normalize_rows(m.view()).unwrap();
                let twice = normalize_rows(once.view()).unwrap();
                for (a, b) in once.iter().zip(twice.iter()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
