use std::collections::VecDeque;

use super::DistanceMatrix;
use crate::model::{Label, PseudoLabeling, Scope, NOISE};

/// Density-based clustering over a precomputed distance matrix.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Clusters are grown breadth-first from the lowest-index
/// unlabeled core point, so labels follow discovery order and a border point
/// joins the first cluster that reaches it. Points reached by no core are noise.
pub fn dbscan(dist: &DistanceMatrix, eps: f64, min_samples: usize, scope: Scope) -> PseudoLabeling {
    let n = dist.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist.get(i, j) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut next: Label = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if labels[seed].is_some() || !core[seed] {
            continue;
        }
        labels[seed] = Some(next);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next += 1;
    }
    let labels: Vec<Label> = labels.into_iter().map(|l| l.unwrap_or(NOISE)).collect();
    PseudoLabeling::new(scope, labels).expect("discovery order yields contiguous labels")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::pairwise_cosine_distance;
    use crate::model::{EmbeddingSet, Modality};
    use ndarray::{array, Array2};

    fn line(points: &[f64]) -> DistanceMatrix {
        let n = points.len();
        DistanceMatrix::from_matrix(Array2::from_shape_fn((n, n), |(i, j)| {
            (points[i] - points[j]).abs()
        }))
        .unwrap()
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let set = EmbeddingSet::single(
            Array2::from_shape_fn((5, 2), |(_, j)| if j == 0 { 1.0 } else { 0.0 }),
            Modality::Visible,
            None,
        )
        .unwrap();
        let l = dbscan(&pairwise_cosine_distance(&set), 0.6, 4, Scope::Visible);
        assert_eq!(l.labels(), &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let set = EmbeddingSet::single(array![[1.0, 0.0]], Modality::Visible, None).unwrap();
        let l = dbscan(&pairwise_cosine_distance(&set), 0.6, 4, Scope::Visible);
        assert_eq!(l.labels(), &[NOISE]);
        assert_eq!(l.cluster_count(), 0);
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // the point at 0.45 is within eps of a core on each side but is not core itself
        let pts = [0.0, 0.05, 0.1, 0.15, 0.45, 0.75, 0.8, 0.85, 0.9, 5.0];
        let l = dbscan(&line(&pts), 0.31, 4, Scope::Visible);
        assert_eq!(l.labels(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, NOISE]);
    }

    #[test]
    fn min_samples_counts_self() {
        let l = dbscan(&line(&[0.0, 0.1]), 0.2, 2, Scope::Visible);
        assert_eq!(l.labels(), &[0, 0]);
        let l = dbscan(&line(&[0.0, 0.1]), 0.2, 3, Scope::Visible);
        assert_eq!(l.labels(), &[NOISE, NOISE]);
    }
}
