use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| *r <= 0.0 || !r.is_finite()) {
            return Err(Error::Config(format!("split ratios must be positive, got {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {all:?}")));
        }
        Ok(())
    }

    /// `(train, val, test)` file counts for a class of `n` files: val and test
    /// are floored, train takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        // The tolerance keeps products like 0.1 * 30 from flooring one short.
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test);
        (n.saturating_sub(val + test), val, test)
    }
}

/// Assigns every record to train/val/test. Splitting happens per class over
/// source files, so all segments of one recording land in the same split.
pub fn split_manifest(m: &Manifest, ratios: SplitRatios, seed: u64) -> Result<Manifest> {
    ratios.validate()?;
    let mut files_by_class: BTreeMap<&str, Vec<PathBuf>> = BTreeMap::new();
    for r in m.records() {
        let files = files_by_class.entry(&r.class_label).or_default();
        if !files.contains(&r.source_path) {
            files.push(r.source_path.clone());
        }
    }

    let mut assignment: BTreeMap<(String, PathBuf), Split> = BTreeMap::new();
    for (class_idx, (label, mut files)) in files_by_class.into_iter().enumerate() {
        files.sort();
        let n = files.len();
        let (train, val, test) = ratios.counts(n);
        if n < 3 || train == 0 || val == 0 || test == 0 {
            return Err(Error::InvalidInput(format!(
                "class `{label}` has {n} source file(s), too few for non-empty {train}/{val}/{test} splits"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class_idx as u64);
        files.shuffle(&mut rng);
        for (i, f) in files.into_iter().enumerate() {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            assignment.insert((label.to_owned(), f), split);
        }
    }

    let mut out = m.clone();
    for r in out.records_mut() {
        r.split = assignment[&(r.class_label.clone(), r.source_path.clone())];
    }
    out.split_seed = Some(seed);
    Ok(out)
}
