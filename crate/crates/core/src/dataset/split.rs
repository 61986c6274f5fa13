use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::class::RoastClass;
use crate::dataset::LabeledSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.6, validation: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, validation, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("split ratios out of range: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

/// Sample indices grouped by class, in input order.
fn by_class(samples: &[LabeledSample]) -> [Vec<usize>; RoastClass::COUNT] {
    let mut groups: [Vec<usize>; RoastClass::COUNT] = Default::default();
    for (i, s) in samples.iter().enumerate() {
        groups[s.class.index()].push(i);
    }
    groups
}

/// Stratified shuffle-then-cut. Each present class needs at least three
/// samples; classes are cut independently so per-class proportions track
/// the ratios to within one sample.
pub fn split_dataset(samples: &[LabeledSample], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit { train: vec![], validation: vec![], test: vec![], seed, ratios };
    for (class, mut idx) in RoastClass::ALL.into_iter().zip(by_class(samples)) {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::Data(format!("class {class} has {} samples; need at least 3", idx.len())));
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((n as f64 * ratios.train).round() as usize).min(n);
        let n_val = ((n as f64 * ratios.validation).round() as usize).min(n - n_train);
        let pick = |range: &[usize]| range.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        split.train.extend(pick(&idx[..n_train]));
        split.validation.extend(pick(&idx[n_train..n_train + n_val]));
        split.test.extend(pick(&idx[n_train + n_val..]));
    }
    Ok(split)
}

/// Stratified k-fold assignment, one fold index per input sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Indices held out in round `fold`.
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each class and deals it round-robin over the folds. The
/// starting fold rotates from class to class so overall fold sizes also
/// stay within one of each other.
pub fn make_folds(samples: &[LabeledSample], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; samples.len()];
    let mut offset = 0;
    for (class, mut idx) in RoastClass::ALL.into_iter().zip(by_class(samples)) {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::Config(format!("class {class} has {} samples, fewer than k = {k}", idx.len())));
        }
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            assignments[i] = (offset + pos) % k;
        }
        offset = (offset + idx.len()) % k;
    }
    Ok(FoldPlan { k, seed, assignments })
}
