use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::PAD;
use crate::error::{Error, Result};

/// A group of caption sequences padded to a common length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Indices into the sequence list handed to [`batch_iter`].
    pub items: Vec<usize>,
    /// Padded token rows, all of length `max(lengths)`.
    pub tokens: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    /// `true` on real tokens, `false` on PAD fill.
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Row `i` with PAD fill removed.
    pub fn unpadded(&self, i: usize) -> &[usize] {
        &self.tokens[i][..self.lengths[i]]
    }
}

/// Permutation of `0..n` for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = Uniform::new_inclusive(0, i).expect("nonempty range").sample(&mut rng);
        order.swap(i, j);
    }
    order
}

/// Shuffles `sequences` with [`epoch_order`] and cuts them into padded
/// batches; the final batch holds the remainder.
pub fn batch_iter(sequences: &[Vec<usize>], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput { op: "batch_iter" });
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let order = epoch_order(sequences.len(), seed, epoch);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let lengths: Vec<usize> = chunk.iter().map(|&i| sequences[i].len()).collect();
            let width = lengths.iter().copied().max().unwrap_or(0);
            let tokens = chunk
                .iter()
                .map(|&i| {
                    let mut row = sequences[i].clone();
                    row.resize(width, PAD);
                    row
                })
                .collect();
            let mask = lengths.iter().map(|&l| (0..width).map(|k| k < l).collect()).collect();
            Batch {
                items: chunk.to_vec(),
                tokens,
                lengths,
                mask,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(n: usize) -> Vec<Vec<usize>> {
        (0..n).map(|i| vec![1; 3 + i % 4]).collect()
    }

    #[test]
    fn sizes_4_4_2() {
        let b = batch_iter(&seqs(10), 4, 7, 0).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.iter().flat_map(|x| x.items.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn order_is_reproducible_and_varies_by_epoch() {
        assert_eq!(epoch_order(50, 3, 1), epoch_order(50, 3, 1));
        assert_ne!(epoch_order(50, 3, 1), epoch_order(50, 3, 2));
        assert_ne!(epoch_order(50, 3, 1), epoch_order(50, 4, 1));
    }

    #[test]
    fn padding_and_mask() {
        let s = vec![vec![1, 5, 2], vec![1, 5, 6, 7, 2]];
        let b = &batch_iter(&s, 2, 0, 0).unwrap()[0];
        for i in 0..2 {
            assert_eq!(b.tokens[i].len(), 5);
            assert_eq!(b.unpadded(i), s[b.items[i]].as_slice());
            let real = b.mask[i].iter().filter(|&&m| m).count();
            assert_eq!(real, b.lengths[i]);
            assert!(b.tokens[i][b.lengths[i]..].iter().all(|&t| t == PAD));
        }
    }

    #[test]
    fn rejects_empty_and_zero_batch() {
        assert!(batch_iter(&[], 4, 0, 0).is_err());
        assert!(batch_iter(&seqs(3), 0, 0, 0).is_err());
    }
}
