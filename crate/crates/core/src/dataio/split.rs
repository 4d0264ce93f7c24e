use rand::seq::SliceRandom;

use super::Sample;
use crate::error::{Error, Result};
use crate::seed;

/// Labeled / unlabeled partition of a training set.
///
/// Unlabeled samples keep their label so they can be scored, but the trainer
/// only ever reads their image and map.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub lab_ratio: f64,
    pub seed: u64,
}

impl DatasetSplit {
    /// Everything labeled; the purely supervised setting.
    pub fn all_labeled(samples: Vec<Sample>) -> Self {
        Self {
            labeled: samples,
            unlabeled: Vec::new(),
            lab_ratio: 1.0,
            seed: 0,
        }
    }
}

/// Randomly assigns `round(lab_ratio · n)` samples (at least one) to the
/// labeled pool.
pub fn split_dataset(samples: Vec<Sample>, lab_ratio: f64, seed: u64) -> Result<DatasetSplit> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} sample(s)")));
    }
    if !(lab_ratio > 0.0 && lab_ratio <= 1.0) {
        return Err(Error::invalid(format!("lab_ratio {lab_ratio} outside (0, 1]")));
    }
    if let Some(s) = samples.iter().find(|s| s.label.is_none()) {
        return Err(Error::invalid(format!("{} has no label", s.tile_id)));
    }
    let n_lab = ((lab_ratio * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(&[seed, 0x5711])));
    let mut is_lab = vec![false; n];
    for &i in &order[..n_lab] {
        is_lab[i] = true;
    }
    let (mut labeled, mut unlabeled) = (Vec::with_capacity(n_lab), Vec::with_capacity(n - n_lab));
    for (s, lab) in samples.into_iter().zip(is_lab) {
        if lab {
            labeled.push(s);
        } else {
            unlabeled.push(s);
        }
    }
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        lab_ratio,
        seed,
    })
}
