use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{ConfidenceWeights, EmbeddingSet, MemoryBank, PseudoLabeling, NOISE};

/// Per-cluster centroids.
///
/// Without weights each centroid is the member mean. With weights each member
/// is scaled by its confidence and the sum is still divided by the member
/// count, so low-confidence samples shrink the centroid instead of dropping
/// out of the average. Noise samples never contribute.
pub fn build_memory(
    set: &EmbeddingSet,
    labels: &PseudoLabeling,
    weights: Option<&ConfidenceWeights>,
) -> Result<MemoryBank> {
    if labels.len() != set.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            set.len()
        )));
    }
    if let Some(w) = weights {
        if w.scope() != labels.scope() || w.weights().len() != labels.len() {
            return Err(Error::Shape(format!(
                "weights for {} scope ({} samples) do not fit {} labels ({} samples)",
                w.scope(),
                w.weights().len(),
                labels.scope(),
                labels.len()
            )));
        }
    }
    let p = labels.cluster_count();
    let mut centroids = Array2::zeros((p, set.dim()));
    let mut counts = vec![0usize; p];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l == NOISE {
            continue;
        }
        let c = l as usize;
        counts[c] += 1;
        let mut row = centroids.row_mut(c);
        match weights {
            Some(w) => row.scaled_add(w.weights()[i], &set.row(i)),
            None => row += &set.row(i),
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Structural(format!("cluster {c} has no members")));
        }
        centroids.row_mut(c).mapv_inplace(|v| v / count as f64);
    }
    Ok(MemoryBank {
        scope: labels.scope(),
        centroids,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Modality, Scope};
    use ndarray::array;

    fn pair() -> (EmbeddingSet, PseudoLabeling) {
        let set = EmbeddingSet::single(
            array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]],
            Modality::Visible,
            None,
        )
        .unwrap();
        let labels = PseudoLabeling::new(Scope::Visible, vec![0, 0, NOISE]).unwrap();
        (set, labels)
    }

    fn weights(w: Vec<f64>) -> ConfidenceWeights {
        ConfidenceWeights {
            scope: Scope::Visible,
            w,
            gmm: None,
        }
    }

    #[test]
    fn unweighted_mean() {
        let (set, labels) = pair();
        let bank = build_memory(&set, &labels, None).unwrap();
        assert_eq!(bank.centroids(), array![[0.5, 0.5]]);
        assert_eq!(bank.counts(), &[2]);
    }

    #[test]
    fn zero_weight_still_counts_in_divisor() {
        let (set, labels) = pair();
        let bank = build_memory(&set, &labels, Some(&weights(vec![1.0, 0.0, 0.0]))).unwrap();
        assert_eq!(bank.centroids(), array![[0.5, 0.0]]);
    }

    #[test]
    fn unit_weights_match_unweighted_exactly() {
        let (set, labels) = pair();
        let plain = build_memory(&set, &labels, None).unwrap();
        let uniform = ConfidenceWeights::uniform(&labels);
        assert_eq!(build_memory(&set, &labels, Some(&uniform)).unwrap(), plain);
    }

    #[test]
    fn mismatched_weights_are_rejected() {
        let (set, labels) = pair();
        assert!(build_memory(&set, &labels, Some(&weights(vec![1.0]))).is_err());
    }
}
