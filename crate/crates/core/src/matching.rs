//! Cross-modality cluster correspondence.
//!
//! Visible and infrared clusters are compared through their sub-memories:
//! every visible sub-memory looks for its nearest infrared sub-memory and the
//! distances are summed. The resulting cost matrix feeds a rectangular
//! assignment in which every infrared cluster is matched exactly once and
//! every visible cluster at most once. Visible labels are then rewritten into
//! the infrared label space.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{Assignment, Label, MultiMemoryBank, Orientation, PseudoLabeling, NOISE};

/// Non-negative finite `P^v x P^r` matching costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    m: Array2<f64>,
}

impl CostMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        for ((row, col), &v) in m.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NonFiniteCost { row, col });
            }
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.m
    }

    pub fn visible_clusters(&self) -> usize {
        self.m.nrows()
    }

    pub fn infrared_clusters(&self) -> usize {
        self.m.ncols()
    }
}

/// `m[p][p'] = sum_i min_j ||K_v(p, i) - K_r(p', j)||` over non-empty sub-memories.
pub fn multi_memory_cost(visible: &MultiMemoryBank, infrared: &MultiMemoryBank) -> Result<CostMatrix> {
    if visible.dim() != infrared.dim() {
        return Err(Error::Shape(format!(
            "sub-memory dimensions differ: {} vs {}",
            visible.dim(),
            infrared.dim()
        )));
    }
    for (bank, name) in [(visible, "visible"), (infrared, "infrared")] {
        if let Some(c) = (0..bank.cluster_count()).find(|&c| bank.active(c).next().is_none()) {
            return Err(Error::Structural(format!(
                "{name} cluster {c} has no non-empty sub-memory"
            )));
        }
    }
    let mut m = Array2::zeros((visible.cluster_count(), infrared.cluster_count()));
    for p in 0..visible.cluster_count() {
        for q in 0..infrared.cluster_count() {
            m[[p, q]] = visible
                .active(p)
                .map(|a| {
                    infrared
                        .active(q)
                        .map(|b| {
                            a.iter()
                                .zip(b.iter())
                                .map(|(x, y)| (x - y) * (x - y))
                                .sum::<f64>()
                                .sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
        }
    }
    CostMatrix::new(m)
}

/// Shortest-augmenting-path assignment of every row of `a` (n x m, n <= m) to
/// a distinct column, minimizing the summed cost. Among equal reduced costs
/// the lowest column index is taken first.
fn assign_rows(a: &Array2<f64>) -> Vec<usize> {
    let (n, m) = a.dim();
    debug_assert!(n <= m);
    // 1-based with index 0 as the virtual source, as in the classic formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=m {
        if owner[j] > 0 {
            col_of_row[owner[j] - 1] = j - 1;
        }
    }
    col_of_row
}

fn build(cost: &CostMatrix, pairs: impl Iterator<Item = (usize, usize)>, orientation: Orientation) -> Assignment {
    let m = cost.matrix();
    let mut q = Array2::zeros(m.dim());
    let mut total = 0.0;
    for (p, pp) in pairs {
        q[[p, pp]] = 1u8;
        total += m[[p, pp]];
    }
    Assignment {
        q,
        cost: m.clone(),
        total_cost: total,
        orientation,
    }
}

/// Minimum-cost matching covering every infrared cluster exactly once.
/// Fails when there are fewer visible than infrared clusters.
pub fn solve_assignment(cost: &CostMatrix) -> Result<Assignment> {
    let (pv, pr) = cost.matrix().dim();
    if pv < pr {
        return Err(Error::Infeasible {
            visible: pv,
            infrared: pr,
        });
    }
    let rows = assign_rows(&cost.matrix().t().to_owned());
    Ok(build(
        cost,
        rows.into_iter().enumerate().map(|(pp, p)| (p, pp)),
        Orientation::InfraredCovered,
    ))
}

/// Like [`solve_assignment`], but transposes the program when the visible
/// side is smaller so that the smaller side is always fully covered.
pub fn match_clusters(cost: &CostMatrix) -> Result<Assignment> {
    let (pv, pr) = cost.matrix().dim();
    if pv >= pr {
        return solve_assignment(cost);
    }
    let cols = assign_rows(cost.matrix());
    Ok(build(
        cost,
        cols.into_iter().enumerate(),
        Orientation::VisibleCovered,
    ))
}

/// Pairs cluster `p` with cluster `p` for `p < min(P^v, P^r)`; used when
/// cross-modality matching is switched off.
pub fn identity_assignment(visible_clusters: usize, infrared_clusters: usize) -> Assignment {
    let cost = CostMatrix {
        m: Array2::zeros((visible_clusters, infrared_clusters)),
    };
    let orientation = if visible_clusters >= infrared_clusters {
        Orientation::InfraredCovered
    } else {
        Orientation::VisibleCovered
    };
    let k = visible_clusters.min(infrared_clusters);
    build(&cost, (0..k).map(|p| (p, p)), orientation)
}

/// Rewrites `source` labels through `partner`; unmatched clusters receive
/// fresh labels from `target_count` upward in ascending source order.
fn relabel(source: &PseudoLabeling, target_count: usize, partner: &[Option<usize>]) -> PseudoLabeling {
    let mut fresh = target_count;
    let map: Vec<Label> = partner
        .iter()
        .map(|p| match p {
            Some(t) => *t as Label,
            None => {
                fresh += 1;
                (fresh - 1) as Label
            }
        })
        .collect();
    let labels = source
        .labels()
        .iter()
        .map(|&l| if l == NOISE { NOISE } else { map[l as usize] })
        .collect();
    PseudoLabeling::new(source.scope(), labels).expect("injective relabeling stays contiguous")
}

fn check_dims(visible: &PseudoLabeling, infrared: &PseudoLabeling, q: &Assignment) -> Result<()> {
    if q.visible_clusters() != visible.cluster_count() || q.infrared_clusters() != infrared.cluster_count() {
        return Err(Error::Shape(format!(
            "assignment is {}x{} but labelings have {} and {} clusters",
            q.visible_clusters(),
            q.infrared_clusters(),
            visible.cluster_count(),
            infrared.cluster_count()
        )));
    }
    q.check()
}

/// Expresses visible labels in the infrared label space: a visible cluster
/// matched to infrared cluster `p'` takes label `p'`, unmatched visible
/// clusters get labels `P^r, P^r + 1, ...`, and noise stays noise.
pub fn transfer_labels(
    visible: &PseudoLabeling,
    infrared: &PseudoLabeling,
    q: &Assignment,
) -> Result<PseudoLabeling> {
    check_dims(visible, infrared, q)?;
    if q.orientation() != Orientation::InfraredCovered {
        return Err(Error::Structural(
            "visible-to-infrared transfer needs every infrared cluster covered".into(),
        ));
    }
    Ok(relabel(visible, infrared.cluster_count(), &q.partner_of_visible()))
}

/// Both modalities' labels in one shared space.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedLabels {
    pub visible: PseudoLabeling,
    pub infrared: PseudoLabeling,
    /// True when infrared labels were moved into the visible space instead.
    pub flipped: bool,
}

impl SharedLabels {
    /// Labels occupied on both sides, ascending.
    pub fn common(&self) -> Vec<Label> {
        let v = self.visible.counts();
        let r = self.infrared.counts();
        (0..v.len().min(r.len()))
            .filter(|&l| v[l] > 0 && r[l] > 0)
            .map(|l| l as Label)
            .collect()
    }

    /// Visible labels followed by infrared labels.
    pub fn concatenated(&self) -> Vec<Label> {
        self.visible
            .labels()
            .iter()
            .chain(self.infrared.labels())
            .copied()
            .collect()
    }
}

/// Applies `q` in whichever direction its orientation allows.
pub fn align_labels(
    visible: &PseudoLabeling,
    infrared: &PseudoLabeling,
    q: &Assignment,
) -> Result<SharedLabels> {
    check_dims(visible, infrared, q)?;
    Ok(match q.orientation() {
        Orientation::InfraredCovered => SharedLabels {
            visible: relabel(visible, infrared.cluster_count(), &q.partner_of_visible()),
            infrared: infrared.clone(),
            flipped: false,
        },
        Orientation::VisibleCovered => SharedLabels {
            visible: visible.clone(),
            infrared: relabel(infrared, visible.cluster_count(), &q.partner_of_infrared()),
            flipped: true,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Scope;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn bank(memories: Array3<f64>, occupancy: Array2<usize>) -> MultiMemoryBank {
        MultiMemoryBank {
            scope: Scope::Visible,
            memories,
            occupancy,
        }
    }

    /// Exhaustive minimum over injections of the covered side into the other.
    fn brute_force(m: &Array2<f64>) -> f64 {
        let (pv, pr) = m.dim();
        fn rec(m: &Array2<f64>, col: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if col == m.ncols() {
                *best = best.min(acc);
                return;
            }
            for row in 0..m.nrows() {
                if !used[row] {
                    used[row] = true;
                    rec(m, col + 1, used, acc + m[[row, col]], best);
                    used[row] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(m, 0, &mut vec![false; pv], 0.0, &mut best);
        let _ = pr;
        best
    }

    #[test]
    fn single_slot_cost_is_centroid_distance() {
        let v = bank(array![[[0.0, 0.0]], [[3.0, 0.0]]], array![[1], [1]]);
        let r = bank(array![[[0.0, 4.0]]], array![[2]]);
        let c = multi_memory_cost(&v, &r).unwrap();
        assert_eq!(c.matrix(), &array![[4.0], [5.0]]);
    }

    #[test]
    fn nearest_sub_memory_is_summed() {
        let v = bank(array![[[0.0, 1.0], [1.0, 0.0]]], array![[3, 2]]);
        let r = bank(array![[[0.0, 1.0], [9.0, 9.0]]], array![[4, 0]]);
        let c = multi_memory_cost(&v, &r).unwrap();
        assert!((c.matrix()[[0, 0]] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_banks_have_zero_diagonal() {
        let mems = array![[[0.0, 1.0], [1.0, 0.0]], [[0.5, 0.5], [0.0, 0.0]]];
        let occ = array![[1, 1], [2, 0]];
        let c = multi_memory_cost(&bank(mems.clone(), occ.clone()), &bank(mems, occ)).unwrap();
        assert_eq!(c.matrix()[[0, 0]], 0.0);
        assert_eq!(c.matrix()[[1, 1]], 0.0);
        assert!(c.matrix()[[0, 1]] > 0.0);
    }

    #[test]
    fn empty_cluster_is_structural_error() {
        let v = bank(array![[[0.0, 1.0]]], array![[0]]);
        let r = bank(array![[[0.0, 1.0]]], array![[1]]);
        assert!(matches!(multi_memory_cost(&v, &r), Err(Error::Structural(_))));
    }

    #[test]
    fn diagonal_optimum() {
        let c = CostMatrix::new(array![[0.0, 5.0], [5.0, 0.0]]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.q(), &array![[1u8, 0], [0, 1]]);
        assert_eq!(a.total_cost(), 0.0);
        a.check().unwrap();
    }

    #[test]
    fn spare_visible_row_stays_unmatched() {
        // all six injections of 2 columns into 3 rows: 2, 3, 3, 5, 4, 5 -> minimum 2
        let c = CostMatrix::new(array![[1.0, 2.0], [2.0, 1.0], [3.0, 3.0]]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.q(), &array![[1u8, 0], [0, 1], [0, 0]]);
        assert_eq!(a.total_cost(), 2.0);
        assert_eq!(brute_force(c.matrix()), 2.0);
    }

    #[test]
    fn ties_prefer_lower_visible_index() {
        let c = CostMatrix::new(array![[1.0], [1.0], [1.0]]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.pairs(), vec![(0, 0, 1.0)]);
    }

    #[test]
    fn too_few_visible_clusters_is_infeasible() {
        let c = CostMatrix::new(array![[1.0, 2.0]]).unwrap();
        assert_eq!(
            solve_assignment(&c).unwrap_err(),
            Error::Infeasible {
                visible: 1,
                infrared: 2
            }
        );
        let a = match_clusters(&c).unwrap();
        assert_eq!(a.orientation(), Orientation::VisibleCovered);
        assert_eq!(a.pairs(), vec![(0, 0, 1.0)]);
        a.check().unwrap();
    }

    #[test]
    fn nan_cost_is_rejected() {
        assert_eq!(
            CostMatrix::new(array![[0.0, f64::NAN]]).unwrap_err(),
            Error::NonFiniteCost { row: 0, col: 1 }
        );
    }

    #[test]
    fn seeded_six_by_five_matches_exhaustive_minimum() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, "test", 0);
        let m = Array2::from_shape_fn((6, 5), |_| rng.random_range(0.0..10.0));
        let a = solve_assignment(&CostMatrix::new(m.clone()).unwrap()).unwrap();
        a.check().unwrap();
        assert!((a.total_cost() - brute_force(&m)).abs() <= 1e-9);
    }

    fn labels(v: Vec<Label>) -> PseudoLabeling {
        PseudoLabeling::new(Scope::Visible, v).unwrap()
    }

    #[test]
    fn identity_transfer_keeps_labels() {
        let vis = labels(vec![0, 1, NOISE, 1]);
        let inf = labels(vec![1, 0]);
        let q = solve_assignment(&CostMatrix::new(array![[0.0, 5.0], [5.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(transfer_labels(&vis, &inf, &q).unwrap(), vis);
    }

    #[test]
    fn matched_cluster_takes_infrared_label() {
        let vis = labels(vec![0, 0, 1]);
        let inf = labels(vec![0, 1]);
        let q = solve_assignment(&CostMatrix::new(array![[5.0, 0.0], [0.0, 5.0]]).unwrap()).unwrap();
        assert_eq!(transfer_labels(&vis, &inf, &q).unwrap().labels(), &[1, 1, 0]);
    }

    #[test]
    fn unmatched_cluster_gets_fresh_label() {
        let vis = labels(vec![0, 1, 2, 2, NOISE]);
        let inf = labels(vec![0, 1]);
        let q = solve_assignment(
            &CostMatrix::new(array![[1.0, 2.0], [2.0, 1.0], [3.0, 3.0]]).unwrap(),
        )
        .unwrap();
        let out = transfer_labels(&vis, &inf, &q).unwrap();
        assert_eq!(out.labels(), &[0, 1, 2, 2, NOISE]);
        assert_eq!(out.cluster_count(), 3);
    }

    #[test]
    fn flipped_alignment_moves_infrared_labels() {
        let vis = labels(vec![0, 0]);
        let inf = labels(vec![0, 1, 1]);
        let q = match_clusters(&CostMatrix::new(array![[4.0, 1.0]]).unwrap()).unwrap();
        let shared = align_labels(&vis, &inf, &q).unwrap();
        assert!(shared.flipped);
        assert_eq!(shared.infrared.labels(), &[1, 0, 0]);
        assert_eq!(shared.common(), vec![0]);
        assert!(transfer_labels(&vis, &inf, &q).is_err());
    }

    #[test]
    fn identity_assignment_is_feasible() {
        for (pv, pr) in [(3, 2), (2, 3), (2, 2), (0, 0)] {
            let q = identity_assignment(pv, pr);
            q.check().unwrap();
            assert_eq!(q.pairs().len(), pv.min(pr));
        }
    }

    #[test]
    fn csv_export() {
        let c = CostMatrix::new(array![[1.0, 2.0], [2.0, 1.5], [3.0, 3.0]]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.to_csv(), "visible_cluster,infrared_cluster,cost\n0,0,1\n1,1,1.5\n");
    }

    proptest! {
        #[test]
        fn constant_shift_keeps_the_matching(
            flat in prop::collection::vec(0.0f64..10.0, 20),
            shift in 0.0f64..5.0,
        ) {
            let m = Array2::from_shape_vec((5, 4), flat).unwrap();
            let a = solve_assignment(&CostMatrix::new(m.clone()).unwrap()).unwrap();
            let b = solve_assignment(&CostMatrix::new(m.mapv(|v| v + shift)).unwrap()).unwrap();
            prop_assert!((b.total_cost() - a.total_cost() - 4.0 * shift).abs() < 1e-9);
            prop_assert!((a.total_cost() - brute_force(&m)).abs() < 1e-9);
            // ties are measure-zero for continuous draws
            prop_assert_eq!(a.q(), b.q());
        }

        #[test]
        fn transfer_preserves_partition(
            raw in prop::collection::vec(-1i64..5, 1..30),
            flat in prop::collection::vec(0.0f64..10.0, 25),
        ) {
            let vis = PseudoLabeling::renumbered(Scope::Visible, &raw);
            let pv = vis.cluster_count();
            prop_assume!(pv >= 1);
            let pr = (pv + 1) / 2;
            let inf = PseudoLabeling::new(Scope::Infrared, (0..pr as Label).collect()).unwrap();
            let m = Array2::from_shape_fn((pv, pr), |(i, j)| flat[(i * 5 + j) % 25]);
            let q = solve_assignment(&CostMatrix::new(m).unwrap()).unwrap();
            let out = transfer_labels(&vis, &inf, &q).unwrap();
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    let before = vis.labels()[i] == vis.labels()[j] && vis.labels()[i] != NOISE;
                    let after = out.labels()[i] == out.labels()[j] && out.labels()[i] != NOISE;
                    prop_assert_eq!(before, after);
                }
            }
        }
    }
}
