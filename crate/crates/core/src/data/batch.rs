use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Seeded per-epoch permutation cut into batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batcher {
    len: usize,
    batch_size: usize,
    seed: u64,
    drop_last: bool,
}

impl Batcher {
    /// `batch_size` must be at least 2 so every batch holds a negative.
    pub fn new(len: usize, batch_size: usize, seed: u64, drop_last: bool) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {batch_size}")));
        }
        Ok(Self {
            len,
            batch_size,
            seed,
            drop_last,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        if self.drop_last {
            self.len / self.batch_size
        } else {
            self.len.div_ceil(self.batch_size)
        }
    }

    /// Index batches of `epoch`; the same `(seed, epoch)` always yields the same order.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut rng_from(derive_seed(self.seed, epoch)));
        order
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_last_floors() {
        let b = Batcher::new(10, 4, 1, true).unwrap();
        let sizes: Vec<usize> = b.epoch(0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4]);
        let keep = Batcher::new(10, 4, 1, false).unwrap();
        let sizes: Vec<usize> = keep.epoch(0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(keep.batches_per_epoch(), 3);
    }

    #[test]
    fn epochs_are_seeded_permutations() {
        let b = Batcher::new(50, 5, 9, true).unwrap();
        assert_eq!(b.epoch(3), b.epoch(3));
        let orders: Vec<Vec<usize>> = (0..5).map(|e| b.epoch(e).concat()).collect();
        for i in 0..orders.len() {
            let mut sorted = orders[i].clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..50).collect::<Vec<_>>());
            for j in i + 1..orders.len() {
                assert_ne!(orders[i], orders[j]);
            }
        }
    }

    #[test]
    fn rejects_tiny_batches() {
        assert!(Batcher::new(10, 1, 0, true).is_err());
    }
}
