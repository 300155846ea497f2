use rand::seq::index::sample;
use rand::Rng;

use crate::config::PipelineConfig;
use crate::matching::SharedLabels;
use crate::model::Label;
use crate::rng::StreamRng;

/// One PK batch: sample rows per modality and the shared labels drawn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub labels: Vec<Label>,
    pub visible: Vec<usize>,
    pub infrared: Vec<usize>,
    /// Labels short of `batch_ids` because too few are shared.
    pub shortfall: usize,
}

fn draw(rng: &mut StreamRng, members: &[usize], k: usize, out: &mut Vec<usize>) {
    if members.len() >= k {
        out.extend(sample(rng, members.len(), k).into_iter().map(|i| members[i]));
    } else {
        out.extend((0..k).map(|_| members[rng.random_range(0..members.len())]));
    }
}

/// Draws `batch_ids` labels present in both modalities, then
/// `per_id_visible` / `per_id_infrared` members of each, with replacement
/// only when a side has too few members.
pub fn pk_sample(shared: &SharedLabels, cfg: &PipelineConfig, rng: &mut StreamRng) -> Batch {
    let common = shared.common();
    let take = cfg.batch_ids.min(common.len());
    let vm = shared.visible.members();
    let rm = shared.infrared.members();
    let mut batch = Batch {
        labels: Vec::with_capacity(take),
        visible: Vec::with_capacity(take * cfg.per_id_visible),
        infrared: Vec::with_capacity(take * cfg.per_id_infrared),
        shortfall: cfg.batch_ids - take,
    };
    for i in sample(rng, common.len(), take) {
        let l = common[i];
        batch.labels.push(l);
        draw(rng, &vm[l as usize], cfg.per_id_visible, &mut batch.visible);
        draw(rng, &rm[l as usize], cfg.per_id_infrared, &mut batch.infrared);
    }
    batch
}
