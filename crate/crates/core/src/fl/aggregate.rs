//! Server-side aggregation rules. Each returns per-participant weights that
//! sum to 1; the server applies `θ_g += Σ w_k δ_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Rescale the whole update onto the L2 ball.
    #[default]
    Clip,
    /// Zero each coordinate whose magnitude exceeds the threshold.
    ZeroExceedingCoords,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregationRule {
    Fedavg,
    Krum {
        /// Assumed Byzantine count; derived from ε when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f: Option<usize>,
    },
    NormThreshold {
        tau_norm: f64,
        #[serde(default)]
        mode: ClipMode,
    },
    Qffl {
        q: f64,
    },
    Fairfed {
        #[serde(default = "default_beta")]
        beta: f64,
    },
}

fn default_beta() -> f64 {
    1.0
}

impl AggregationRule {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Fedavg => "fedavg",
            Self::Krum { .. } => "krum",
            Self::NormThreshold { .. } => "norm_threshold",
            Self::Qffl { .. } => "qffl",
            Self::Fairfed { .. } => "fairfed",
        }
    }

    /// Tag plus parameters, e.g. `krum(f=2)`; distinguishes sweep entries that
    /// share a tag.
    pub fn label(&self) -> String {
        match *self {
            Self::Fedavg | Self::Krum { f: None } => self.tag().into(),
            Self::Krum { f: Some(f) } => format!("krum(f={f})"),
            Self::NormThreshold { tau_norm, mode } => {
                let mode = match mode {
                    ClipMode::Clip => "clip",
                    ClipMode::ZeroExceedingCoords => "zero_exceeding_coords",
                };
                format!("norm_threshold(tau_norm={tau_norm},mode={mode})")
            }
            Self::Qffl { q } => format!("qffl(q={q})"),
            Self::Fairfed { beta } => format!("fairfed(beta={beta})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::NormThreshold { tau_norm, .. } if !(tau_norm > 0.0) => {
                Err(Error::Config("tau_norm must be positive".into()))
            }
            Self::Qffl { q } if !(q >= 0.0) => Err(Error::Config("q must be nonnegative".into())),
            Self::Fairfed { beta } if !(beta >= 0.0) => {
                Err(Error::Config("beta must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }
}

fn normalize(raw: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Rule(format!(
            "weights do not normalise (sum {total})"
        )));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::EmptyInput("aggregation participants"));
    }
    if sizes.contains(&0) {
        return Err(Error::Rule("client with zero samples".into()));
    }
    Ok(())
}

pub fn aggregate_fedavg(sizes: &[usize]) -> Result<Vec<f64>> {
    check_sizes(sizes)?;
    normalize(sizes.iter().map(|&d| d as f64).collect())
}

/// One-hot on the update with the smallest sum of squared distances to its
/// `m - f - 2` nearest neighbours; ties go to the lowest position.
pub fn aggregate_krum(deltas: &[ParamVector], f: usize) -> Result<Vec<f64>> {
    let m = deltas.len();
    if m < f + 3 {
        return Err(Error::Rule(format!(
            "krum needs m >= f + 3, got m = {m}, f = {f}"
        )));
    }
    let mut dist = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let d = deltas[i].sub(&deltas[j])?;
            let sq = d.dot(&d)?;
            dist[i][j] = sq;
            dist[j][i] = sq;
        }
    }
    let k = m - f - 2;
    let mut best = (f64::INFINITY, 0);
    for i in 0..m {
        let mut others: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| dist[i][j]).collect();
        others.sort_by(f64::total_cmp);
        let score: f64 = others[..k].iter().sum();
        if score < best.0 {
            best = (score, i);
        }
    }
    let mut w = vec![0.0; m];
    w[best.1] = 1.0;
    Ok(w)
}

/// Default Byzantine count for Krum: `ceil(ε m)` clamped to `floor((m - 3) / 2)`.
pub fn default_krum_f(m: usize, epsilon: f64) -> usize {
    let expected = (epsilon * m as f64).ceil() as usize;
    expected.min(m.saturating_sub(3) / 2)
}

pub fn aggregate_norm_threshold(
    deltas: &[ParamVector],
    sizes: &[usize],
    tau_norm: f64,
    mode: ClipMode,
) -> Result<(Vec<ParamVector>, Vec<f64>)> {
    if !(tau_norm > 0.0) {
        return Err(Error::Rule("tau_norm must be positive".into()));
    }
    if deltas.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            expected: sizes.len(),
            got: deltas.len(),
        });
    }
    let clipped = deltas
        .iter()
        .map(|d| {
            let mut d = d.clone();
            match mode {
                ClipMode::Clip => {
                    let n = d.norm();
                    if n > tau_norm {
                        d.scale(tau_norm / n);
                    }
                }
                ClipMode::ZeroExceedingCoords => {
                    d.0.iter_mut()
                        .filter(|v| v.abs() > tau_norm)
                        .for_each(|v| *v = 0.0)
                }
            }
            d
        })
        .collect();
    Ok((clipped, aggregate_fedavg(sizes)?))
}

/// `w_k ∝ d_k · loss_k^q`; falls back to FedAvg when every loss is zero.
pub fn aggregate_qffl(local_losses: &[f64], sizes: &[usize], q: f64) -> Result<Vec<f64>> {
    check_sizes(sizes)?;
    if local_losses.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            expected: sizes.len(),
            got: local_losses.len(),
        });
    }
    if local_losses.iter().any(|l| !(*l >= 0.0)) || !(q >= 0.0) {
        return Err(Error::Rule("q-FFL needs nonnegative losses and q".into()));
    }
    if q > 0.0 && local_losses.iter().all(|&l| l == 0.0) {
        log::warn!("q-FFL: all local losses are zero; using FedAvg weights");
        return aggregate_fedavg(sizes);
    }
    normalize(
        sizes
            .iter()
            .zip(local_losses)
            .map(|(&d, l)| d as f64 * l.powf(q))
            .collect(),
    )
}

/// `w_k ∝ d_k · exp(-β |global_eod - local_eod_k|)`.
pub fn aggregate_fairfed(
    sizes: &[usize],
    local_eod: &[f64],
    global_eod: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    check_sizes(sizes)?;
    if local_eod.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            expected: sizes.len(),
            got: local_eod.len(),
        });
    }
    if !(beta >= 0.0) {
        return Err(Error::Rule("FairFed beta must be nonnegative".into()));
    }
    normalize(
        sizes
            .iter()
            .zip(local_eod)
            .map(|(&d, e)| d as f64 * (-beta * (global_eod - e).abs()).exp())
            .collect(),
    )
}

/// `θ += Σ w_k δ_k`, summed in the given order.
pub fn apply_deltas(
    theta: &mut ParamVector,
    deltas: &[ParamVector],
    weights: &[f64],
) -> Result<()> {
    if deltas.len() != weights.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            got: deltas.len(),
        });
    }
    let mut step = ParamVector::zeros(theta.len());
    for (d, &w) in deltas.iter().zip(weights) {
        if w != 0.0 {
            step.axpy(w, d)?;
        }
    }
    theta.axpy(1.0, &step)
}
