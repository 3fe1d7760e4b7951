//! Deterministic batch scheduling: fraction subsampling and per-epoch
//! shuffling, both pure functions of the seed.

use rand::seq::SliceRandom;

use super::DataError;
use crate::rng::{indexed_stream, stream};

/// Produces shuffled index batches over a dataset.
///
/// The training subsample (a `fraction` of the dataset) is drawn **once**
/// from the seed and reused every epoch; each epoch reshuffles that fixed
/// subsample with an epoch-indexed stream. Trailing samples that do not fill
/// a batch are dropped.
#[derive(Debug, Clone)]
pub struct Batcher {
    subsample: Vec<usize>,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub fn new(
        dataset_len: usize,
        batch_size: usize,
        fraction: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::BatchConfig {
                detail: "batch size must be positive".into(),
            });
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DataError::BatchConfig {
                detail: format!("dataset fraction {fraction} outside (0, 1]"),
            });
        }
        let take = (fraction * dataset_len as f64).floor() as usize;
        if take < batch_size {
            return Err(DataError::BatchConfig {
                detail: format!(
                    "fraction {fraction} of {dataset_len} samples yields {take} < batch size {batch_size}"
                ),
            });
        }
        let mut ids: Vec<usize> = (0..dataset_len).collect();
        ids.shuffle(&mut stream(seed, "subsample"));
        ids.truncate(take);
        ids.sort_unstable();
        Ok(Self {
            subsample: ids,
            batch_size,
            seed,
        })
    }

    /// The fixed subsample (sorted dataset indices).
    pub fn subsample(&self) -> &[usize] {
        &self.subsample
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.subsample.len() / self.batch_size
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// The shuffled batches for one epoch: `batches_per_epoch` groups of
    /// `batch_size` dataset indices.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order = self.subsample.clone();
        order.shuffle(&mut indexed_stream(self.seed, "epoch", epoch as u64));
        order
            .chunks_exact(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}
