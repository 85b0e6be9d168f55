//! Samples, datasets, and the splits handed to federated clients.

pub mod adult;
pub mod partition;
pub mod synth;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub use adult::{load_adult_csv, load_adult_records, AdultPreprocessor, AdultRecord, AdultSchema};
pub use partition::{partition_noniid, PartitionPlan};
pub use synth::{synth_generate, SynthConfig};

/// Privileged group id.
pub const PRIVILEGED: u8 = 1;

/// One `(x, y, g)` triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u8,
    pub group: u8,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: u8, group: u8) -> Self {
        Self {
            features,
            label,
            group,
        }
    }

    pub fn label_f64(&self) -> f64 {
        f64::from(self.label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Adult,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_dim: usize,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset, checking that it is nonempty and dimensionally uniform.
    pub fn new(samples: Vec<Sample>, provenance: Provenance) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyInput("dataset"))?;
        let feature_dim = first.features.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::Parse {
                    row: i,
                    msg: format!("feature dimension {} != {feature_dim}", s.features.len()),
                });
            }
            if s.label > 1 || s.group > 1 {
                return Err(Error::Parse {
                    row: i,
                    msg: "label and group must be 0 or 1".into(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of sample {i}")));
            }
        }
        Ok(Self {
            samples,
            feature_dim,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn group_count(&self, group: u8) -> usize {
        self.samples.iter().filter(|s| s.group == group).count()
    }

    pub fn has_both_groups(&self) -> bool {
        self.group_count(0) > 0 && self.group_count(1) > 0
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, self.provenance)
    }

    pub fn refs(&self) -> Vec<&Sample> {
        self.samples.iter().collect()
    }
}

/// Seeded shuffle split returning `(train, test)` index lists, each ascending.
pub fn split_indices(
    groups: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let n = groups.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::Split(format!(
            "fraction {test_fraction} of {n} samples leaves a split empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Purpose::Split, &[]));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    for (name, idx) in [("train", &train), ("test", &test)] {
        for g in 0..2u8 {
            if !idx.iter().any(|&i| groups[i] == g) {
                return Err(Error::Split(format!(
                    "{name} split has no group-{g} samples"
                )));
            }
        }
    }
    Ok((train, test))
}

pub fn train_test_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let groups: Vec<u8> = dataset.samples.iter().map(|s| s.group).collect();
    let (train, test) = split_indices(&groups, test_fraction, seed)?;
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}
