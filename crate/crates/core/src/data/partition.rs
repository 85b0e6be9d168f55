//! Non-IID client partitioning.
//!
//! Client sizes follow a power law over rank, `size_k ∝ (k + 1)^-1.2`. Each
//! client's privileged-group share is drawn from `Beta(α, α(1 - q)/q)`, where
//! `q` is the global privileged fraction, so the mean share is `q` and the
//! spread vanishes as `α → ∞`. Integer group counts are then reconciled with
//! the available samples by largest remainder, and samples are dealt out from
//! seeded shuffles of each group.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Rng};

pub const SIZE_EXPONENT: f64 = 1.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub alpha: f64,
    pub seed: u64,
    /// `clients[k]` holds the ascending sample indices owned by client `k`.
    pub clients: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks that the plan is a set partition of `0..n` with nonempty parts.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (k, idx) in self.clients.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::Config(format!("client {k} has no samples")));
            }
            for &i in idx {
                if i >= n || seen[i] {
                    return Err(Error::Config(format!(
                        "index {i} invalid or assigned twice"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config(
                "partition does not cover every sample".into(),
            ));
        }
        Ok(())
    }
}

/// `ln Gamma(shape, 1)` sample; small shapes use the `U^(1/a)` boost so the
/// result never underflows to `-inf`.
fn ln_gamma_sample(shape: f64, rng: &mut Rng) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0)
            .expect("valid shape")
            .sample(rng)
            .ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0)
            .expect("valid shape")
            .sample(rng);
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        g.ln() + u.ln() / shape
    }
}

pub(crate) fn beta_sample(a: f64, b: f64, rng: &mut Rng) -> f64 {
    let la = ln_gamma_sample(a, rng);
    let lb = ln_gamma_sample(b, rng);
    1.0 / (1.0 + (lb - la).exp())
}

/// Power-law client sizes summing to `n`, each at least 1.
fn client_sizes(n: usize, n_clients: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..n_clients)
        .map(|k| ((k + 1) as f64).powf(-SIZE_EXPONENT))
        .collect();
    let total: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut sizes: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..n_clients).collect();
    order.sort_by(|&a, &b| {
        (ideal[b] - ideal[b].floor())
            .total_cmp(&(ideal[a] - ideal[a].floor()))
            .then(a.cmp(&b))
    });
    let missing = n - sizes.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        sizes[k] += 1;
    }
    // Power-law tails can round to zero on tiny datasets.
    for k in 0..n_clients {
        while sizes[k] == 0 {
            let donor = (0..n_clients)
                .max_by_key(|&j| (sizes[j], usize::MAX - j))
                .unwrap();
            sizes[donor] -= 1;
            sizes[k] += 1;
        }
    }
    sizes
}

/// Largest-remainder reconciliation of per-client privileged counts with the
/// number of privileged samples actually available.
fn reconcile_counts(targets: &[f64], sizes: &[usize], available: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = targets
        .iter()
        .zip(sizes)
        .map(|(t, &s)| (t.round() as usize).min(s))
        .collect();
    let mut total: usize = counts.iter().sum();
    while total < available {
        let k = (0..counts.len())
            .filter(|&k| counts[k] < sizes[k])
            .max_by(|&a, &b| {
                (targets[a] - counts[a] as f64)
                    .total_cmp(&(targets[b] - counts[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("capacity exists while total < available");
        counts[k] += 1;
        total += 1;
    }
    while total > available {
        let k = (0..counts.len())
            .filter(|&k| counts[k] > 0)
            .min_by(|&a, &b| {
                (targets[a] - counts[a] as f64)
                    .total_cmp(&(targets[b] - counts[b] as f64))
                    .then(a.cmp(&b))
            })
            .expect("some client holds privileged samples");
        counts[k] -= 1;
        total -= 1;
    }
    counts
}

pub fn partition_noniid(
    dataset: &Dataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if n_clients < 2 {
        return Err(Error::Config("need at least 2 clients".into()));
    }
    if n_clients > dataset.len() {
        return Err(Error::Config(format!(
            "{n_clients} clients exceed dataset size {}",
            dataset.len()
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(
            "alpha must be a positive finite number".into(),
        ));
    }
    if !dataset.has_both_groups() {
        return Err(Error::Config(
            "partitioning needs both groups present".into(),
        ));
    }

    let mut rng = stream(seed, Purpose::Partition, &[]);
    let mut privileged: Vec<usize> = Vec::new();
    let mut targeted: Vec<usize> = Vec::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.group == 1 {
            privileged.push(i);
        } else {
            targeted.push(i);
        }
    }
    let q = privileged.len() as f64 / dataset.len() as f64;

    let sizes = client_sizes(dataset.len(), n_clients);
    let shares: Vec<f64> = (0..n_clients)
        .map(|_| beta_sample(alpha, alpha * (1.0 - q) / q, &mut rng))
        .collect();
    let targets: Vec<f64> = shares
        .iter()
        .zip(&sizes)
        .map(|(p, &s)| p * s as f64)
        .collect();
    let priv_counts = reconcile_counts(&targets, &sizes, privileged.len());

    privileged.shuffle(&mut rng);
    targeted.shuffle(&mut rng);
    let (mut pi, mut ti) = (0usize, 0usize);
    let clients = sizes
        .iter()
        .zip(&priv_counts)
        .map(|(&size, &np)| {
            let nt = size - np;
            let mut idx: Vec<usize> = privileged[pi..pi + np]
                .iter()
                .chain(&targeted[ti..ti + nt])
                .copied()
                .collect();
            pi += np;
            ti += nt;
            idx.sort_unstable();
            idx
        })
        .collect();

    let plan = PartitionPlan {
        alpha,
        seed,
        clients,
    };
    plan.validate(dataset.len())?;
    Ok(plan)
}
