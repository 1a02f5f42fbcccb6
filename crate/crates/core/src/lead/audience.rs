use rand::seq::index::sample;

use super::{AudienceKind, AudienceSpec};
use crate::model::{FedarParams, ModelInput};
use crate::seeds::{derive_seed, rng_for};
use crate::training::{continue_training, TrainConfig};
use crate::{Error, Result};

/// `(tensor, entry)` positions of every prunable weight: encoder and
/// classifier weight matrices.
pub fn maskable_entries<T: crate::autograd::Real>(params: &FedarParams<T>) -> Vec<(usize, usize)> {
    params
        .specs()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.maskable())
        .flat_map(|(i, s)| (0..s.rows * s.cols).map(move |j| (i, j)))
        .collect()
}

/// Zeroes `round(rate * n)` of the `n` maskable entries, chosen uniformly
/// without replacement under `seed`. Survivors are not rescaled. Returns
/// the number of pruned entries.
pub fn prune(params: &mut FedarParams<f32>, rate: f64, seed: u64) -> usize {
    let entries = maskable_entries(params);
    let count = (rate * entries.len() as f64).round() as usize;
    if count == 0 {
        return 0;
    }
    let mut rng = rng_for(seed, &[]);
    for k in sample(&mut rng, entries.len(), count) {
        let (t, j) = entries[k];
        params.tensors_mut()[t].data_mut()[j] = 0.0;
    }
    count
}

/// Derives `spec.count` audiences from `lecturer`. Continued training draws
/// its batches from `train` (required for that kind).
pub fn spawn_audiences(
    lecturer: &FedarParams<f32>,
    spec: &AudienceSpec,
    train: Option<&[(ModelInput<f32>, Vec<usize>)]>,
    train_config: &TrainConfig,
) -> Result<Vec<FedarParams<f32>>> {
    spec.validate()?;
    (0..spec.count)
        .map(|mu| {
            let mut audience = lecturer.clone();
            let seed = derive_seed(spec.seed, &[mu as u64]);
            match spec.kind {
                AudienceKind::DropoutPrune => {
                    prune(&mut audience, spec.rate, seed);
                }
                AudienceKind::ContinuedTraining => {
                    let data = train.ok_or_else(|| {
                        Error::Contract("continued-training audiences need training examples".into())
                    })?;
                    continue_training(&mut audience, data, spec.batches, spec.lr, train_config, seed)?;
                }
            }
            Ok(audience)
        })
        .collect()
}
