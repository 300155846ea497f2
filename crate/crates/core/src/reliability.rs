//! Pseudo-label confidence from the per-sample identification loss.
//!
//! Samples whose loss falls in the low-mean component of a two-component
//! Gaussian mixture are treated as clean; the posterior of that component is
//! the sample's confidence weight.

use std::f64::consts::PI;

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::model::{ConfidenceWeights, EmbeddingSet, GmmFit, MemoryBank, PseudoLabeling, Scope, NOISE};

pub const GMM_MAX_ITERATIONS: usize = 500;
pub const GMM_TOLERANCE: f64 = 1e-8;
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Per-sample identification loss in nats; noise samples are excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct IdLossVector {
    pub scope: Scope,
    pub losses: Vec<f64>,
    pub included: Vec<bool>,
}

impl IdLossVector {
    pub fn included_values(&self) -> Vec<f64> {
        self.losses
            .iter()
            .zip(&self.included)
            .filter(|(_, &inc)| inc)
            .map(|(&l, _)| l)
            .collect()
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(<f_i, C> / tau)[label_i]` against every centroid of `bank`.
pub fn id_loss(set: &EmbeddingSet, labels: &PseudoLabeling, bank: &MemoryBank, tau: f64) -> Result<IdLossVector> {
    if labels.len() != set.len() || bank.cluster_count() != labels.cluster_count() {
        return Err(Error::Shape(format!(
            "{} samples, {} labels over {} clusters, bank of {}",
            set.len(),
            labels.len(),
            labels.cluster_count(),
            bank.cluster_count()
        )));
    }
    let logits = set.features().dot(&bank.centroids().t()) / tau;
    let mut losses = vec![0.0; set.len()];
    let mut included = vec![false; set.len()];
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let l = labels.labels()[i];
        if l == NOISE {
            continue;
        }
        let row = row.to_vec();
        losses[i] = (log_sum_exp(&row) - row[l as usize]).max(0.0);
        included[i] = true;
    }
    Ok(IdLossVector {
        scope: labels.scope(),
        losses,
        included,
    })
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean) * (x - mean) / var)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.max(VARIANCE_FLOOR))
}

struct Params {
    means: [f64; 2],
    vars: [f64; 2],
    mix: [f64; 2],
}

impl Params {
    fn joint_logs(&self, x: f64) -> [f64; 2] {
        [0, 1].map(|k| self.mix[k].ln() + log_normal(x, self.means[k], self.vars[k]))
    }

    fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter().map(|&x| log_sum_exp(&self.joint_logs(x))).sum()
    }
}

/// Fits a two-component mixture to the included losses by EM.
///
/// Starts from a median split, stops when the log-likelihood gains less than
/// [`GMM_TOLERANCE`] or after [`GMM_MAX_ITERATIONS`] rounds, and floors
/// variances at [`VARIANCE_FLOOR`]. Components are returned sorted by mean.
/// Losses spread over less than one floor standard deviation cannot be split
/// and are reported as degenerate.
pub fn fit_gmm2(losses: &IdLossVector) -> Result<GmmFit> {
    let mut data = losses.included_values();
    if data.len() < 2 {
        return Err(Error::DegenerateLosses(format!(
            "{} usable samples",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateLosses("non-finite loss".into()));
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo < VARIANCE_FLOOR.sqrt() {
        return Err(Error::DegenerateLosses(format!(
            "loss spread {:e} is below the variance floor's resolution",
            hi - lo
        )));
    }
    data.sort_by(f64::total_cmp);
    let half = data.len() / 2;
    let (m0, v0) = mean_var(&data[..half]);
    let (m1, v1) = mean_var(&data[half..]);
    let mut params = Params {
        means: [m0, m1],
        vars: [v0, v1],
        mix: [0.5, 0.5],
    };

    let n = data.len() as f64;
    let mut ll = params.log_likelihood(&data);
    let mut trace = vec![ll];
    let mut iterations = 0;
    for it in 1..=GMM_MAX_ITERATIONS {
        let mut weight = [0.0f64; 2];
        let mut first = [0.0f64; 2];
        let resp: Vec<[f64; 2]> = data
            .iter()
            .map(|&x| {
                let logs = params.joint_logs(x);
                let norm = log_sum_exp(&logs);
                logs.map(|l| (l - norm).exp())
            })
            .collect();
        for (r, &x) in resp.iter().zip(&data) {
            for k in 0..2 {
                weight[k] += r[k];
                first[k] += r[k] * x;
            }
        }
        for k in 0..2 {
            if weight[k] <= f64::MIN_POSITIVE {
                continue;
            }
            let mean = first[k] / weight[k];
            let var = resp
                .iter()
                .zip(&data)
                .map(|(r, &x)| r[k] * (x - mean) * (x - mean))
                .sum::<f64>()
                / weight[k];
            params.means[k] = mean;
            params.vars[k] = var.max(VARIANCE_FLOOR);
        }
        let mix0 = (weight[0] / n).clamp(1e-12, 1.0 - 1e-12);
        params.mix = [mix0, 1.0 - mix0];

        let next = params.log_likelihood(&data);
        trace.push(next);
        iterations = it;
        let gain = next - ll;
        ll = next;
        if gain < GMM_TOLERANCE {
            break;
        }
    }

    let order = if params.means[0] <= params.means[1] { [0, 1] } else { [1, 0] };
    Ok(GmmFit {
        means: order.map(|k| params.means[k]),
        variances: order.map(|k| params.vars[k]),
        mix: order.map(|k| params.mix[k]),
        log_likelihood: ll,
        iterations,
        trace,
    })
}

/// Posterior probabilities of both components at `x`; they sum to 1.
pub fn posteriors(x: f64, fit: &GmmFit) -> [f64; 2] {
    let logs = [0, 1].map(|k| fit.mix[k].ln() + log_normal(x, fit.means[k], fit.variances[k]));
    let norm = log_sum_exp(&logs);
    let p0 = (logs[0] - norm).exp();
    [p0, 1.0 - p0]
}

/// Confidence of every sample: the posterior of the smaller-mean component,
/// or 0 for excluded samples.
pub fn confidence(losses: &IdLossVector, fit: &GmmFit) -> ConfidenceWeights {
    let w = losses
        .losses
        .iter()
        .zip(&losses.included)
        .map(|(&l, &inc)| if inc { posteriors(l, fit)[0] } else { 0.0 })
        .collect();
    ConfidenceWeights {
        scope: losses.scope,
        w,
        gmm: Some(fit.clone()),
    }
}

/// Loss, GMM fit and confidence in one step; a degenerate loss distribution
/// yields uniform confidence.
pub fn estimate_confidence(
    set: &EmbeddingSet,
    labels: &PseudoLabeling,
    bank: &MemoryBank,
    tau: f64,
) -> Result<(IdLossVector, ConfidenceWeights)> {
    let losses = id_loss(set, labels, bank, tau)?;
    let weights = match fit_gmm2(&losses) {
        Ok(fit) => confidence(&losses, &fit),
        Err(Error::DegenerateLosses(_)) => ConfidenceWeights::uniform(labels),
        Err(e) => return Err(e),
    };
    Ok((losses, weights))
}

/// `loss,weight` rows for every included sample.
pub fn confidence_csv(losses: &IdLossVector, weights: &ConfidenceWeights) -> String {
    let mut out = String::from("loss,weight\n");
    for ((l, inc), w) in losses.losses.iter().zip(&losses.included).zip(weights.weights()) {
        if *inc {
            out.push_str(&format!("{l},{w}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::build_memory;
    use crate::model::Modality;
    use ndarray::array;
    use proptest::prelude::*;

    fn vector(values: &[f64]) -> IdLossVector {
        IdLossVector {
            scope: Scope::Visible,
            losses: values.to_vec(),
            included: vec![true; values.len()],
        }
    }

    fn bank(centroids: ndarray::Array2<f64>) -> MemoryBank {
        let p = centroids.nrows();
        MemoryBank {
            scope: Scope::Visible,
            centroids,
            counts: vec![1; p],
        }
    }

    #[test]
    fn single_class_has_zero_loss() {
        let set = EmbeddingSet::single(array![[1.0, 0.0], [0.0, 1.0]], Modality::Visible, None).unwrap();
        let labels = PseudoLabeling::new(Scope::Visible, vec![0, 0]).unwrap();
        let b = build_memory(&set, &labels, None).unwrap();
        let l = id_loss(&set, &labels, &b, 0.05).unwrap();
        assert_eq!(l.losses, vec![0.0, 0.0]);
    }

    #[test]
    fn closed_form_two_class_losses() {
        let set =
            EmbeddingSet::single(array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], Modality::Visible, None).unwrap();
        let labels = PseudoLabeling::new(Scope::Visible, vec![0, 0, 1]).unwrap();
        let b = bank(array![[1.0, 0.0], [0.0, 1.0]]);
        let l = id_loss(&set, &labels, &b, 1.0).unwrap();
        // -ln(e / (e + 1)) and -ln(1 / (1 + e))
        assert!((l.losses[0] - 0.313_261_687_518_222_8).abs() < 1e-12);
        assert!((l.losses[1] - 1.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn noise_is_excluded() {
        let set = EmbeddingSet::single(array![[1.0, 0.0], [0.0, 1.0]], Modality::Visible, None).unwrap();
        let labels = PseudoLabeling::new(Scope::Visible, vec![0, NOISE]).unwrap();
        let b = build_memory(&set, &labels, None).unwrap();
        let l = id_loss(&set, &labels, &b, 1.0).unwrap();
        assert_eq!(l.included, vec![true, false]);
        let w = confidence(
            &l,
            &GmmFit {
                means: [0.0, 1.0],
                variances: [1.0, 1.0],
                mix: [0.5, 0.5],
                log_likelihood: 0.0,
                iterations: 0,
                trace: vec![],
            },
        );
        assert_eq!(w.weights()[1], 0.0);
    }

    #[test]
    fn separated_groups_are_recovered() {
        let mut data = vec![0.1; 50];
        data.extend(vec![2.0; 50]);
        let fit = fit_gmm2(&vector(&data)).unwrap();
        assert!((fit.means[0] - 0.1).abs() < 0.02, "{fit:?}");
        assert!((fit.means[1] - 2.0).abs() < 0.02, "{fit:?}");
        assert!((fit.mix[0] - 0.5).abs() < 1e-6);
        assert!((fit.mix[0] + fit.mix[1] - 1.0).abs() < 1e-12);
        assert!(fit.variances.iter().all(|&v| v >= VARIANCE_FLOOR));
        let w = confidence(&vector(&[0.1, 2.0]), &fit);
        assert!(w.weights()[0] > 0.999);
        assert!(w.weights()[1] < 0.001);
    }

    #[test]
    fn components_are_sorted_by_mean() {
        let data = [-1.0, -1.1, -0.9, 1.0, 1.1, 0.9];
        let fit = fit_gmm2(&vector(&data)).unwrap();
        assert!(fit.means[0] < fit.means[1]);
        assert!((fit.means[0] + fit.means[1]).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_gmm2(&vector(&[0.3])), Err(Error::DegenerateLosses(_))));
        assert!(matches!(fit_gmm2(&vector(&[0.3, 0.3, 0.3])), Err(Error::DegenerateLosses(_))));
        let tight = vector(&[1e-4, 2e-4, 3e-4, 9e-4]);
        assert!(matches!(fit_gmm2(&tight), Err(Error::DegenerateLosses(_))));
        assert!(fit_gmm2(&vector(&[1e-4, 2e-4, 3e-4, 2e-3])).is_ok());
    }

    #[test]
    fn equal_components_give_half() {
        let fit = GmmFit {
            means: [1.0, 1.0],
            variances: [0.5, 0.5],
            mix: [0.5, 0.5],
            log_likelihood: 0.0,
            iterations: 0,
            trace: vec![],
        };
        let w = confidence(&vector(&[0.0, 1.0, 7.5]), &fit);
        assert!(w.weights().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn csv_has_one_row_per_included_sample() {
        let mut v = vector(&[0.5, 1.5]);
        v.included[1] = false;
        let w = ConfidenceWeights {
            scope: Scope::Visible,
            w: vec![0.25, 0.0],
            gmm: None,
        };
        assert_eq!(confidence_csv(&v, &w), "loss,weight\n0.5,0.25\n");
    }

    proptest! {
        #[test]
        fn log_likelihood_never_decreases(
            a in prop::collection::vec(0.0f64..1.0, 5..40),
            b in prop::collection::vec(0.5f64..3.0, 5..40),
        ) {
            let data: Vec<f64> = a.into_iter().chain(b).collect();
            let fit = fit_gmm2(&vector(&data)).unwrap();
            for w in fit.trace.windows(2) {
                prop_assert!(w[1] - w[0] >= -1e-9, "{:?}", fit.trace);
            }
            for &x in &data {
                let p = posteriors(x, &fit);
                prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&p[0]));
            }
        }

        // The low-loss posterior is non-increasing only to the right of its
        // turning point, which lies below the small mean when that component
        // is also the narrower one.
        #[test]
        fn confidence_decreases_above_the_small_mean(
            a in prop::collection::vec(0.0f64..1.0, 5..40),
            b in prop::collection::vec(0.5f64..3.0, 5..40),
        ) {
            let data: Vec<f64> = a.into_iter().chain(b).collect();
            let fit = fit_gmm2(&vector(&data)).unwrap();
            prop_assume!(fit.variances[0] <= fit.variances[1]);
            let mut xs: Vec<f64> = data.iter().copied().filter(|&x| x >= fit.means[0]).collect();
            xs.sort_by(f64::total_cmp);
            for w in xs.windows(2) {
                prop_assert!(posteriors(w[1], &fit)[0] <= posteriors(w[0], &fit)[0] + 1e-12);
            }
        }

        #[test]
        fn id_loss_ignores_cluster_order(
            flat in prop::collection::vec(-1.0f64..1.0, 18),
        ) {
            let f = ndarray::Array2::from_shape_vec((6, 3), flat).unwrap();
            prop_assume!(f.rows().into_iter().all(|r| r.dot(&r) > 1e-3));
            let f = crate::model::normalize_rows(f.view()).unwrap();
            let set = EmbeddingSet::single(f, Modality::Visible, None).unwrap();
            let a = PseudoLabeling::new(Scope::Visible, vec![0, 1, 2, 0, 1, 2]).unwrap();
            let b = PseudoLabeling::new(Scope::Visible, vec![2, 0, 1, 2, 0, 1]).unwrap();
            let la = id_loss(&set, &a, &build_memory(&set, &a, None).unwrap(), 0.05).unwrap();
            let lb = id_loss(&set, &b, &build_memory(&set, &b, None).unwrap(), 0.05).unwrap();
            for (x, y) in la.losses.iter().zip(&lb.losses) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
