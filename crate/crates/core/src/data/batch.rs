use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::derive_seed;
use crate::tensor::Tensor;

/// Seeded minibatch schedule over a dataset.
///
/// Every epoch is a fresh permutation that visits each index exactly once;
/// the last batch may be short. In stratified mode each class is shuffled
/// separately and every batch takes an equal slice of every class, so each
/// batch holds every present class in about its dataset share. Batch sizes
/// then vary by up to the number of classes, and when some class has fewer
/// samples than there would be batches, fewer and larger batches are used.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a> {
    ds: &'a Dataset,
    batch_size: usize,
    seed: u64,
    stratified: bool,
}

impl<'a> BatchIterator<'a> {
    pub fn new(ds: &'a Dataset, batch_size: usize, seed: u64, stratified: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batches", "batch size must be at least 1"));
        }
        let present = ds.class_counts().iter().filter(|&&n| n > 0).count();
        if stratified && batch_size < present {
            return Err(Error::invalid(
                "batches",
                format!("stratified batches of {batch_size} cannot hold {present} classes"),
            ));
        }
        Ok(BatchIterator {
            ds,
            batch_size,
            seed,
            stratified,
        })
    }

    /// Index batches of epoch `epoch`.
    pub fn epoch_indices(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[epoch]));
        if !self.stratified {
            let mut idx: Vec<usize> = (0..self.ds.len()).collect();
            idx.shuffle(&mut rng);
            return idx.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        }
        let classes: Vec<Vec<usize>> = (0..self.ds.n_classes)
            .map(|c| {
                let mut idx = self.ds.indices_of(c);
                idx.shuffle(&mut rng);
                idx
            })
            .filter(|idx| !idx.is_empty())
            .collect();
        // Batch j takes the j-th of `nb` equal slices of every class, so no
        // batch misses a class; the rarest class caps the batch count.
        let rarest = classes.iter().map(Vec::len).min().unwrap_or(0);
        let nb = self.ds.len().div_ceil(self.batch_size).min(rarest);
        (0..nb)
            .map(|j| {
                let mut batch: Vec<usize> = classes
                    .iter()
                    .flat_map(|idx| {
                        let n = idx.len();
                        idx[j * n / nb..(j + 1) * n / nb].iter().copied()
                    })
                    .collect();
                batch.shuffle(&mut rng);
                batch
            })
            .collect()
    }

    /// Materialized `(images, labels)` batches of epoch `epoch`.
    pub fn epoch(&self, epoch: u64) -> impl Iterator<Item = (Tensor, Vec<usize>)> + '_ {
        self.epoch_indices(epoch).into_iter().map(|b| self.ds.batch(&b))
    }
}
