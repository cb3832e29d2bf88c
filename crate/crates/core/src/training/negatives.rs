use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::dataset::Impression;
use crate::error::{Error, Result};

/// Draws `k` items uniformly without replacement, or with replacement when
/// fewer than `k` are available.
pub fn sample_from<T: Copy, R: Rng + ?Sized>(pool: &[T], k: usize, rng: &mut R) -> Result<Vec<T>> {
    if pool.is_empty() {
        return Err(Error::NoNegatives);
    }
    if pool.len() >= k {
        Ok(pool.choose_multiple(rng, k).copied().collect())
    } else {
        Ok((0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect())
    }
}

/// `k` non-clicked candidates of the impression.
pub fn sample_negatives<R: Rng + ?Sized>(imp: &Impression, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    sample_from(&imp.negatives(), k, rng)
}
