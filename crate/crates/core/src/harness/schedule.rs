use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Step decay: `base · 0.5^⌊epoch / period⌋`.
pub fn lr_at(epoch: usize, base_lr: f64, halving_period: usize) -> f64 {
    let halvings = epoch.checked_div(halving_period).unwrap_or(0);
    base_lr * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32)
}

/// Partition sizes for `n` items: `⌊f·n⌋` for validation and test, the
/// remainder to training.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    // The small slack keeps products like 0.2·70000 from landing just below
    // an integer.
    let take = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let val = take(fractions[1]);
    let test = take(fractions[2]);
    Ok([n - val - test, val, test])
}

/// Seeded shuffle followed by a contiguous train/validation/test split.
pub fn split_dataset<T>(items: Vec<T>, fractions: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let [n_train, n_val, _] = split_sizes(items.len(), fractions)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| slots[i].take().expect("each index once")).collect()
    };
    let train = take(0..n_train);
    let val = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..order.len());
    Ok((train, val, test))
}
