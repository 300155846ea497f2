use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::{EmbeddingSet, MultiMemoryBank, PseudoLabeling};

/// Lloyd iterations stop at an assignment fixpoint or after this many rounds.
pub const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    /// Within-cell sum of squared distances after each round.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Greedy farthest-point seeding: the point farthest from the mean, then
/// repeatedly the point farthest from all chosen seeds. Ties go to the
/// lowest index.
fn farthest_point_seeds(points: ArrayView2<'_, f64>, k: usize) -> Vec<usize> {
    let mean = points.mean_axis(Axis(0)).expect("non-empty");
    let first = argmax_first(points.rows().into_iter().map(|r| sq_dist(r, mean.view())));
    let mut seeds = vec![first];
    let mut nearest: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, points.row(first)))
        .collect();
    while seeds.len() < k {
        let next = argmax_first(nearest.iter().copied());
        seeds.push(next);
        for (i, r) in points.rows().into_iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(r, points.row(next)));
        }
    }
    seeds
}

fn objective(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(assignment)
        .map(|(r, &c)| sq_dist(r, centroids.row(c)))
        .sum()
}

/// k-means minimizing the within-cell sum of squares.
///
/// Each round assigns points to the nearest centroid (ties to the lower
/// cell), refills any empty cell with the point farthest from its centroid
/// among cells holding at least two points, then recomputes means. With
/// `k <= points` every cell ends non-empty.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize) -> KMeansFit {
    let m = points.nrows();
    assert!(k >= 1 && k <= m, "k must lie in 1..=points");
    let seeds = farthest_point_seeds(points, k);
    let mut centroids = points.select(Axis(0), &seeds);
    let mut assignment: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut next: Vec<usize> = points
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = (0, f64::INFINITY);
                for c in 0..k {
                    let d = sq_dist(r, centroids.row(c));
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            })
            .collect();

        let mut sizes = vec![0usize; k];
        for &c in &next {
            sizes[c] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let donor = argmax_first(points.rows().into_iter().zip(&next).map(|(r, &c)| {
                if sizes[c] > 1 {
                    sq_dist(r, centroids.row(c))
                } else {
                    f64::NEG_INFINITY
                }
            }));
            sizes[next[donor]] -= 1;
            next[donor] = empty;
            sizes[empty] = 1;
        }

        let mut sums = Array2::<f64>::zeros(centroids.dim());
        for (r, &c) in points.rows().into_iter().zip(&next) {
            let mut row = sums.row_mut(c);
            row += &r;
        }
        for c in 0..k {
            let size = sizes[c] as f64;
            centroids.row_mut(c).assign(&sums.row(c).mapv(|v| v / size));
        }
        trace.push(objective(points, &centroids, &next));

        let converged = next == assignment;
        assignment = next;
        if converged {
            break;
        }
    }
    KMeansFit {
        centroids,
        assignment,
        objective: trace,
        iterations,
    }
}

/// Splits every cluster into `min(n, size)` sub-clusters and stores their
/// centroids as the cluster's sub-memories. Unused slots stay empty.
pub fn sub_cluster(set: &EmbeddingSet, labels: &PseudoLabeling, n: usize) -> Result<MultiMemoryBank> {
    if n == 0 {
        return Err(Error::Structural("sub-memory count must be at least 1".into()));
    }
    if labels.len() != set.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            set.len()
        )));
    }
    let p = labels.cluster_count();
    let mut memories = Array3::zeros((p, n, set.dim()));
    let mut occupancy = Array2::zeros((p, n));
    for (c, members) in labels.members().iter().enumerate() {
        let points = set.features().select(Axis(0), members);
        let k = n.min(members.len());
        let fit = kmeans(points.view(), k);
        for j in 0..k {
            memories.slice_mut(s![c, j, ..]).assign(&fit.centroids.row(j));
        }
        for &cell in &fit.assignment {
            occupancy[[c, cell]] += 1;
        }
    }
    Ok(MultiMemoryBank {
        scope: labels.scope(),
        memories,
        occupancy,
    })
}
