use ndarray::{Array2, ArrayView2, Axis};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::{normalize_rows, EmbeddingSet, Modality};

/// Free per-sample embedding vectors trained by SGD with momentum. Consumers
/// only ever see the row-normalized view.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableEmbeddings {
    visible: Array2<f64>,
    infrared: Array2<f64>,
    velocity_visible: Array2<f64>,
    velocity_infrared: Array2<f64>,
    visible_ids: Option<Vec<u32>>,
    infrared_ids: Option<Vec<u32>>,
}

impl TrainableEmbeddings {
    pub fn new(visible: &EmbeddingSet, infrared: &EmbeddingSet) -> Result<Self> {
        let tagged = |set: &EmbeddingSet, m: Modality| set.modality().iter().all(|&t| t == m);
        if !tagged(visible, Modality::Visible) || !tagged(infrared, Modality::Infrared) {
            return Err(Error::InvalidEmbeddings(
                "training expects one all-visible and one all-infrared set".into(),
            ));
        }
        if visible.dim() != infrared.dim() {
            return Err(Error::Shape(format!(
                "visible dimension {} differs from infrared dimension {}",
                visible.dim(),
                infrared.dim()
            )));
        }
        Ok(Self {
            visible: visible.features().to_owned(),
            infrared: infrared.features().to_owned(),
            velocity_visible: Array2::zeros(visible.features().dim()),
            velocity_infrared: Array2::zeros(infrared.features().dim()),
            visible_ids: visible.true_identity().map(<[u32]>::to_vec),
            infrared_ids: infrared.true_identity().map(<[u32]>::to_vec),
        })
    }

    pub fn raw(&self, modality: Modality) -> ArrayView2<'_, f64> {
        match modality {
            Modality::Visible => self.visible.view(),
            Modality::Infrared => self.infrared.view(),
        }
    }

    pub fn normalized(&self) -> Result<(EmbeddingSet, EmbeddingSet)> {
        Ok((
            EmbeddingSet::single(
                normalize_rows(self.visible.view())?,
                Modality::Visible,
                self.visible_ids.clone(),
            )?,
            EmbeddingSet::single(
                normalize_rows(self.infrared.view())?,
                Modality::Infrared,
                self.infrared_ids.clone(),
            )?,
        ))
    }

    /// One SGD step given `dL/df` for the normalized rows:
    /// `g_x = (g - (g.f) f) / |x| + wd x`, `v = mu v + g_x`, `x -= lr v`.
    pub fn step(&mut self, modality: Modality, grad_f: ArrayView2<'_, f64>, cfg: &PipelineConfig) -> Result<()> {
        let (x, v) = match modality {
            Modality::Visible => (&mut self.visible, &mut self.velocity_visible),
            Modality::Infrared => (&mut self.infrared, &mut self.velocity_infrared),
        };
        if grad_f.dim() != x.dim() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameters {:?}",
                grad_f.dim(),
                x.dim()
            )));
        }
        for ((mut xr, mut vr), g) in x
            .axis_iter_mut(Axis(0))
            .zip(v.axis_iter_mut(Axis(0)))
            .zip(grad_f.axis_iter(Axis(0)))
        {
            let norm = xr.dot(&xr).sqrt();
            let f = &xr / norm;
            let radial = g.dot(&f);
            let gx = (&g - &(&f * radial)) / norm + &(&xr * cfg.weight_decay);
            vr *= cfg.momentum;
            vr += &gx;
            xr.scaled_add(-cfg.learning_rate, &vr);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structural("parameters became non-finite".into()));
        }
        Ok(())
    }
}
