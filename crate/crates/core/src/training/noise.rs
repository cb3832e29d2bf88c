use rand::Rng;

use crate::error::{Error, Result};
use crate::user::HistorySequence;

/// A history position during training: a real news item or an injected
/// mask token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    News(usize),
    Mask,
}

/// Before each valid position, inserts `mask` with probability `rate`, then
/// keeps the most recent `max_len` positions.
pub fn inject_masked_news<T: Clone, R: Rng + ?Sized>(
    history: &HistorySequence<T>,
    mask: T,
    rate: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<HistorySequence<T>> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(Error::InvalidArgument(format!("mask noise rate {rate} outside [0, 0.5]")));
    }
    let mut items = Vec::with_capacity(history.len());
    let mut valid = Vec::with_capacity(history.len());
    for (item, &v) in history.items.iter().zip(&history.valid) {
        if v && rate > 0.0 && rng.gen::<f64>() < rate {
            items.push(mask.clone());
            valid.push(true);
        }
        items.push(item.clone());
        valid.push(v);
    }
    let cut = items.len().saturating_sub(max_len);
    items.drain(..cut);
    valid.drain(..cut);
    Ok(HistorySequence { items, valid })
}
