//! Partition agreement (adjusted Rand index) and cross-modality retrieval
//! metrics (Rank-k, mAP).

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matching::SharedLabels;
use crate::model::{EmbeddingSet, Label, NOISE};

/// Cut-offs reported in the retrieval table.
pub const RANKS: [usize; 4] = [1, 5, 10, 20];

pub const METRICS_CSV_HEADER: &str = "ari_rgb,ari_ir,ari_all,rank1,rank5,rank10,rank20,map";

/// Counts of samples per (cluster in a, cluster in b).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub rows: Vec<u64>,
    pub cols: Vec<u64>,
    pub total: u64,
}

/// Gives every noise sample its own cluster id.
fn singletons(labels: &[Label]) -> Vec<(bool, i64)> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| if l == NOISE { (true, i as i64) } else { (false, l) })
        .collect()
}

fn index_of(labels: &[Label]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let keys = singletons(labels);
    for k in &keys {
        let next = ids.len();
        ids.entry(*k).or_insert(next);
    }
    (keys.iter().map(|k| ids[k]).collect(), ids.len())
}

impl ContingencyTable {
    /// Noise (`-1`) samples count as singleton clusters.
    pub fn new(a: &[Label], b: &[Label]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Metric(format!(
                "label lengths differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        let (ia, ka) = index_of(a);
        let (ib, kb) = index_of(b);
        let mut counts = vec![vec![0u64; kb]; ka];
        for (&x, &y) in ia.iter().zip(&ib) {
            counts[x][y] += 1;
        }
        let rows = counts.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..kb).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            rows,
            cols,
            total: a.len() as u64,
        })
    }
}

fn pairs(n: u64) -> i128 {
    let n = i128::from(n);
    n * (n - 1) / 2
}

/// `(2T*index - 2AB) / (T(A+B) - 2AB)`: the adjusted Rand index with every
/// term kept as an exact integer until the final division. Degenerate
/// denominators (both partitions trivial in the same way) score 1.
pub(crate) fn ari_from_pair_counts(index: i128, a: i128, b: i128, total_pairs: i128) -> f64 {
    let num = 2 * total_pairs * index - 2 * a * b;
    let den = total_pairs * (a + b) - 2 * a * b;
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn ari(a: &[Label], b: &[Label]) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::Metric(format!("ARI needs at least 2 samples, got {}", a.len())));
    }
    let t = ContingencyTable::new(a, b)?;
    let index = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sa = t.rows.iter().map(|&c| pairs(c)).sum();
    let sb = t.cols.iter().map(|&c| pairs(c)).sum();
    Ok(ari_from_pair_counts(index, sa, sb, pairs(t.total)))
}

/// Pseudo-label agreement with ground truth per modality and over both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AriReport {
    pub rgb: f64,
    pub ir: f64,
    pub all: f64,
}

fn truth_labels(ids: Option<&[u32]>, what: &str) -> Result<Vec<Label>> {
    ids.map(|ids| ids.iter().map(|&i| Label::from(i)).collect())
        .ok_or_else(|| Error::MissingGroundTruth(format!("{what} samples have no identities")))
}

/// RGB and IR score each modality's pseudo-labels; ALL scores the shared
/// label space over visible then infrared samples.
pub fn ari_report(
    shared: &SharedLabels,
    visible_truth: Option<&[u32]>,
    infrared_truth: Option<&[u32]>,
) -> Result<AriReport> {
    let tv = truth_labels(visible_truth, "visible")?;
    let tr = truth_labels(infrared_truth, "infrared")?;
    let all_truth: Vec<Label> = tv.iter().chain(&tr).copied().collect();
    Ok(AriReport {
        rgb: ari(shared.visible.labels(), &tv)?,
        ir: ari(shared.infrared.labels(), &tr)?,
        all: ari(&shared.concatenated(), &all_truth)?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RetrievalReport {
    /// Rank-1, -5, -10 and -20 accuracy.
    pub rank: [f64; 4],
    pub map: f64,
    pub evaluated: usize,
    /// Queries whose identity never appears in the gallery.
    pub excluded: usize,
}

/// Ranks each gallery column for each query row by descending score, ties
/// going to the lower gallery index.
pub fn retrieval_from_scores(
    scores: ArrayView2<'_, f64>,
    query_ids: &[u32],
    gallery_ids: &[u32],
) -> Result<RetrievalReport> {
    if scores.dim() != (query_ids.len(), gallery_ids.len()) {
        return Err(Error::Shape(format!(
            "score matrix {:?} for {} queries and {} gallery items",
            scores.dim(),
            query_ids.len(),
            gallery_ids.len()
        )));
    }
    let mut report = RetrievalReport::default();
    let mut order: Vec<usize> = (0..gallery_ids.len()).collect();
    for (q, row) in scores.rows().into_iter().enumerate() {
        let id = query_ids[q];
        let positives = gallery_ids.iter().filter(|&&g| g == id).count();
        if positives == 0 {
            report.excluded += 1;
            continue;
        }
        order.sort_by(|&i, &j| row[j].total_cmp(&row[i]).then(i.cmp(&j)));
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first_hit = None;
        for (pos, &g) in order.iter().enumerate() {
            if gallery_ids[g] == id {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
                first_hit.get_or_insert(pos);
                if hits == positives {
                    break;
                }
            }
        }
        let first = first_hit.expect("at least one positive");
        for (slot, &k) in RANKS.iter().enumerate() {
            if first < k {
                report.rank[slot] += 1.0;
            }
        }
        report.map += precision_sum / positives as f64;
        report.evaluated += 1;
    }
    if report.evaluated > 0 {
        let n = report.evaluated as f64;
        report.rank.iter_mut().for_each(|r| *r /= n);
        report.map /= n;
    }
    Ok(report)
}

/// Cosine-similarity retrieval of `gallery` items for each `query` sample.
pub fn retrieval_eval(query: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<RetrievalReport> {
    let q = query
        .true_identity()
        .ok_or_else(|| Error::MissingGroundTruth("query samples have no identities".into()))?;
    let g = gallery
        .true_identity()
        .ok_or_else(|| Error::MissingGroundTruth("gallery samples have no identities".into()))?;
    let scores = query.features().dot(&gallery.features().t());
    retrieval_from_scores(scores.view(), q, g)
}

/// Pseudo-label quality plus retrieval in both directions; the primary
/// direction queries with infrared samples against the visible gallery.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub ari: AriReport,
    pub infrared_to_visible: RetrievalReport,
    pub visible_to_infrared: RetrievalReport,
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let r = &self.infrared_to_visible;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.ari.rgb, self.ari.ir, self.ari.all, r.rank[0], r.rank[1], r.rank[2], r.rank[3], r.map
        )
    }
}

pub fn evaluate_retrieval(
    visible: &EmbeddingSet,
    infrared: &EmbeddingSet,
) -> Result<(RetrievalReport, RetrievalReport)> {
    Ok((retrieval_eval(infrared, visible)?, retrieval_eval(visible, infrared)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Modality, PseudoLabeling, Scope};
    use ndarray::array;
    use proptest::prelude::*;

    /// Counts agreeing pairs directly over all sample pairs.
    fn ari_pairs(a: &[Label], b: &[Label]) -> f64 {
        let same = |l: &[Label], i: usize, j: usize| l[i] != NOISE && l[i] == l[j];
        let (mut both, mut only_a, mut only_b) = (0i128, 0i128, 0i128);
        for i in 0..a.len() {
            for j in (i + 1)..a.len() {
                match (same(a, i, j), same(b, i, j)) {
                    (true, true) => both += 1,
                    (true, false) => only_a += 1,
                    (false, true) => only_b += 1,
                    _ => {}
                }
            }
        }
        let n = a.len() as i128;
        ari_from_pair_counts(both, both + only_a, both + only_b, n * (n - 1) / 2)
    }

    #[test]
    fn trivial_partitions() {
        let a = [0, 0, 1, 1, 2];
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
        let one = [0; 6];
        let single = [0, 1, 2, 3, 4, 5];
        assert_eq!(ari(&one, &single).unwrap(), 0.0);
        assert!(ari(&[0], &[0]).is_err());
    }

    #[test]
    fn hand_evaluated_instance() {
        // n_ij: [[2,0],[1,1],[0,2]] -> index 2; a sums 3; b sums 6; T = 15.
        // ARI = (2 - 18/15) / (4.5 - 18/15) = 0.8 / 3.3 = 8/33
        let a = [0, 0, 1, 1, 2, 2];
        let b = [0, 0, 0, 1, 1, 1];
        assert_eq!(ari(&a, &b).unwrap(), 8.0 / 33.0);
        assert_eq!(ari_pairs(&a, &b), 8.0 / 33.0);
    }

    #[test]
    fn noise_counts_as_singletons() {
        let a = [NOISE, NOISE, 0, 0];
        let b = [0, 1, 2, 2];
        assert_eq!(ari(&a, &b).unwrap(), 1.0);
        let t = ContingencyTable::new(&a, &b).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.total, 4);
    }

    #[test]
    fn flipped_correspondence_lowers_all() {
        let vis = PseudoLabeling::new(Scope::Visible, vec![0, 0, 1, 1]).unwrap();
        let good = SharedLabels {
            visible: vis.clone(),
            infrared: PseudoLabeling::new(Scope::Infrared, vec![0, 0, 1, 1]).unwrap(),
            flipped: false,
        };
        let flipped = SharedLabels {
            visible: vis,
            infrared: PseudoLabeling::new(Scope::Infrared, vec![1, 1, 0, 0]).unwrap(),
            flipped: false,
        };
        let truth = [7, 7, 9, 9];
        let r = ari_report(&good, Some(&truth), Some(&truth)).unwrap();
        assert_eq!((r.rgb, r.ir, r.all), (1.0, 1.0, 1.0));
        let r = ari_report(&flipped, Some(&truth), Some(&truth)).unwrap();
        assert_eq!((r.rgb, r.ir), (1.0, 1.0));
        // 8 samples, two visible/infrared halves each cross-labelled: index 4,
        // pseudo sums 12, truth sums 12, T = 28 -> (8*28 - 288) / (28*24 - 288)
        assert_eq!(r.all, (2.0 * 28.0 * 4.0 - 288.0) / (28.0 * 24.0 - 288.0));
        assert!(r.all < 1.0);
        assert!(matches!(
            ari_report(&good, None, Some(&truth)),
            Err(Error::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn duplicate_gallery_is_perfect() {
        let f = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let q = EmbeddingSet::single(f.clone(), Modality::Infrared, Some(vec![0, 1, 2])).unwrap();
        let g = EmbeddingSet::single(f, Modality::Visible, Some(vec![0, 1, 2])).unwrap();
        let r = retrieval_eval(&q, &g).unwrap();
        assert_eq!(r.rank, [1.0; 4]);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn wrong_then_right() {
        let scores = array![[0.9, 0.4]];
        let r = retrieval_from_scores(scores.view(), &[1], &[0, 1]).unwrap();
        assert_eq!(r.rank, [0.0, 1.0, 1.0, 1.0]);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn ties_go_to_lower_gallery_index() {
        let scores = array![[0.5, 0.5]];
        let r = retrieval_from_scores(scores.view(), &[0], &[0, 1]).unwrap();
        assert_eq!(r.rank[0], 1.0);
        let r = retrieval_from_scores(scores.view(), &[1], &[0, 1]).unwrap();
        assert_eq!(r.rank[0], 0.0);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn absent_identity_is_excluded() {
        let scores = array![[0.9, 0.4], [0.1, 0.2]];
        let r = retrieval_from_scores(scores.view(), &[0, 5], &[0, 1]).unwrap();
        assert_eq!((r.evaluated, r.excluded), (1, 1));
        assert_eq!(r.map, 1.0);
    }

    proptest! {
        #[test]
        fn contingency_matches_pair_counting(
            pairs in prop::collection::vec((-1i64..5, -1i64..5), 2..30)
        ) {
            let (a, b): (Vec<Label>, Vec<Label>) = pairs.into_iter().unzip();
            let v = ari(&a, &b).unwrap();
            prop_assert_eq!(v, ari_pairs(&a, &b));
            prop_assert_eq!(v, ari(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&v));
            let relabeled: Vec<Label> = a.iter().map(|&l| if l == NOISE { l } else { 10 - l }).collect();
            prop_assert_eq!(v, ari(&relabeled, &b).unwrap());
        }

        #[test]
        fn retrieval_invariant_to_monotone_scores(
            flat in prop::collection::vec(-1.0f64..1.0, 24),
            ids in prop::collection::vec(0u32..3, 10),
        ) {
            let scores = ndarray::Array2::from_shape_vec((4, 6), flat).unwrap();
            let a = retrieval_from_scores(scores.view(), &ids[..4], &ids[4..]).unwrap();
            let warped = scores.mapv(|s| (3.0 * s).exp() + 2.0);
            let b = retrieval_from_scores(warped.view(), &ids[..4], &ids[4..]).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
