use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Stratified train/val/test partition. Per class, `round(n·f_train)` go to
/// train, `round(n·f_val)` to val and the remainder to test.
pub fn split(dataset: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fs <= 0.0 || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (label, name) in dataset.class_names().iter().enumerate() {
        let mut idx: Vec<usize> =
            (0..dataset.len()).filter(|&i| dataset.records()[i].label == label).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * ft).round() as usize;
        let n_val = (n as f64 * fv).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(Error::TooSmall(format!(
                "class {name} with {n} subjects cannot fill every split"
            )));
        }
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_unstable();
    }
    Ok(Split { train: dataset.subset(&train), val: dataset.subset(&val), test: dataset.subset(&test) })
}

/// `k` stratified folds. Fold `i` tests on part `i`, validates on part
/// `(i+1) mod k` and trains on the rest.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 3 {
        return Err(Error::Config(format!("cross-validation needs at least 3 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = vec![Vec::new(); k];
    for (label, name) in dataset.class_names().iter().enumerate() {
        let mut idx: Vec<usize> =
            (0..dataset.len()).filter(|&i| dataset.records()[i].label == label).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::TooSmall(format!("class {name} has {} subjects for {k} folds", idx.len())));
        }
        idx.shuffle(&mut rng);
        for (n, i) in idx.into_iter().enumerate() {
            parts[n % k].push(i);
        }
    }
    Ok((0..k)
        .map(|fold| {
            let val_part = (fold + 1) % k;
            let mut train: Vec<usize> = (0..k)
                .filter(|&p| p != fold && p != val_part)
                .flat_map(|p| parts[p].iter().copied())
                .collect();
            train.sort_unstable();
            let sorted = |p: usize| {
                let mut v = parts[p].clone();
                v.sort_unstable();
                v
            };
            Split {
                train: dataset.subset(&train),
                val: dataset.subset(&sorted(val_part)),
                test: dataset.subset(&sorted(fold)),
            }
        })
        .collect())
}
