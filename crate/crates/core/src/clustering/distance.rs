use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::EmbeddingSet;

/// Symmetric non-negative distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    d: Array2<f64>,
}

impl DistanceMatrix {
    /// Wraps an externally computed matrix (e.g. a re-ranked distance).
    pub fn from_matrix(d: Array2<f64>) -> Result<Self> {
        let (n, m) = d.dim();
        if n != m {
            return Err(Error::Shape(format!("distance matrix is {n}x{m}")));
        }
        for i in 0..n {
            if d[[i, i]] != 0.0 {
                return Err(Error::Structural(format!("d[{i}][{i}] = {}", d[[i, i]])));
            }
            for j in 0..i {
                let (a, b) = (d[[i, j]], d[[j, i]]);
                if !(a >= 0.0) || !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(Error::Structural(format!(
                        "entries ({i},{j})={a} and ({j},{i})={b} are not a symmetric distance"
                    )));
                }
            }
        }
        Ok(Self { d })
    }

    pub fn len(&self) -> usize {
        self.d.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.d.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.d.view()
    }

    /// Row-major decimal text, for debugging.
    pub fn to_text(&self) -> String {
        crate::io::write_matrix(&self.d)
    }
}

/// `1 - <f_i, f_j>` over unit-norm rows, clamped to `[0, 2]`.
pub fn pairwise_cosine_distance(set: &EmbeddingSet) -> DistanceMatrix {
    let f = set.features();
    let gram = f.dot(&f.t());
    let n = set.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (1.0 - gram[[i, j]]).clamp(0.0, 2.0);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    DistanceMatrix { d }
}
