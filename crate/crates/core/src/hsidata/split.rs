use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeds;

use super::LabelMap;

/// Fractions of labeled pixels assigned to train/validation/test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::invalid(format!("split fractions must lie in (0, 1), got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.1,
            val_fraction: 0.1,
            test_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Disjoint coordinate lists, each sorted row-major.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

/// Stratified split by center coordinate. Per class, train and validation
/// counts are rounded down and the remainder goes to test.
pub fn split_pixels(labels: &LabelMap, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut per_class: Vec<Vec<(usize, usize)>> = vec![Vec::new(); labels.n_classes() + 1];
    for (r, c) in labels.labeled() {
        per_class[labels.get(r, c) as usize].push((r, c));
    }
    let mut split = Split::default();
    for (class, mut coords) in per_class.into_iter().enumerate().skip(1) {
        let n = coords.len();
        if n < 3 {
            return Err(Error::invalid(format!(
                "class {class} has {n} labeled pixels, at least 3 are needed to split"
            )));
        }
        let mut rng = seeds::rng(seeds::derive(spec.seed, class as u64));
        coords.shuffle(&mut rng);
        // guard against 0.1 * 100 landing just below 10
        let n_train = (spec.train_fraction * n as f64 + 1e-9).floor() as usize;
        let n_val = (spec.val_fraction * n as f64 + 1e-9).floor() as usize;
        split.train.extend_from_slice(&coords[..n_train]);
        split.val.extend_from_slice(&coords[n_train..n_train + n_val]);
        split.test.extend_from_slice(&coords[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
