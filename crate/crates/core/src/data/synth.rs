//! Controlled two-group testbed.
//!
//! Each sample carries `INFORMATIVE_DIMS` Gaussian features plus a trailing
//! group-indicator feature (1 for the privileged group). Class clusters sit at
//! `±(separation / 2 - shift) * u` along the unit diagonal `u`, with unit
//! isotropic noise; `shift` is `disadvantage` for group 0 and 0 for group 1, so
//! a positive disadvantage pulls the targeted group's clusters toward the
//! decision boundary and lowers its true-positive rate.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, Sample};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub const INFORMATIVE_DIMS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    /// Fraction of samples in the privileged group.
    pub group_fraction: f64,
    pub separation: f64,
    pub disadvantage: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 4000,
            group_fraction: 0.7,
            separation: 3.0,
            disadvantage: 1.0,
        }
    }
}

pub fn synth_generate(
    seed: u64,
    n: usize,
    group_fraction: f64,
    separation: f64,
    disadvantage: f64,
) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Config(format!(
            "synthetic dataset needs n >= 4, got {n}"
        )));
    }
    if !(group_fraction > 0.0 && group_fraction < 1.0) {
        return Err(Error::Config("group_fraction must lie in (0, 1)".into()));
    }
    if !(separation > 0.0) {
        return Err(Error::Config("separation must be positive".into()));
    }
    if !disadvantage.is_finite() {
        return Err(Error::Config("disadvantage must be finite".into()));
    }
    let mut rng = stream(seed, Purpose::Synthetic, &[]);
    let axis = 1.0 / (INFORMATIVE_DIMS as f64).sqrt();
    let samples = (0..n)
        .map(|_| {
            let group = u8::from(rng.random_bool(group_fraction));
            let label = u8::from(rng.random_bool(0.5));
            let shift = if group == 0 { disadvantage } else { 0.0 };
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let centre = sign * (separation / 2.0 - shift) * axis;
            let mut x: Vec<f64> = (0..INFORMATIVE_DIMS)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    centre + z
                })
                .collect();
            x.push(f64::from(group));
            Sample::new(x, label, group)
        })
        .collect();
    Dataset::new(samples, Provenance::Synthetic)
}

impl SynthConfig {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        synth_generate(
            seed,
            self.n,
            self.group_fraction,
            self.separation,
            self.disadvantage,
        )
    }
}
