//! Layer-wise relevance propagation with the ε-stabilised z-rule, and the
//! mapping from neuron relevance to a per-parameter importance vector `h`.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{MlpModel, ParamVector};

pub const DEFAULT_EPSILON_STAB: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceSource {
    SingleSample,
    Aggregated { n_samples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    /// `layers[0]` is the input layer, the last entry is the single output neuron.
    pub layers: Vec<Vec<f64>>,
    pub source: RelevanceSource,
}

impl RelevanceMap {
    pub fn layer_sums(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.iter().sum()).collect()
    }

    fn check_shape(&self, model: &MlpModel) -> Result<()> {
        let dims = model.layer_dims();
        if self.layers.len() != dims.len() {
            return Err(Error::Shape {
                expected: dims.len(),
                got: self.layers.len(),
            });
        }
        for (l, &d) in self.layers.iter().zip(dims) {
            if l.len() != d {
                return Err(Error::Shape {
                    expected: d,
                    got: l.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRelevance {
    pub h: ParamVector,
}

fn stabilise(s: f64, eps: f64) -> f64 {
    s + eps * if s >= 0.0 { 1.0 } else { -1.0 }
}

pub fn lrp_propagate(model: &MlpModel, x: &[f64], epsilon_stab: f64) -> Result<RelevanceMap> {
    if !(epsilon_stab >= 0.0) {
        return Err(Error::Config("epsilon_stab must be nonnegative".into()));
    }
    let trace = model.forward_trace(x)?;
    let dims = model.layer_dims();
    let n_layers = model.num_layers();
    let mut layers = vec![Vec::new(); n_layers + 1];
    layers[n_layers] = vec![trace.logit()];

    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let a = &trace.activations[l];
        let upper = &layers[l + 1];
        let mut lower = vec![0.0; n_in];
        for q in 0..n_out {
            let r_q = upper[q];
            if r_q == 0.0 {
                continue;
            }
            let s: f64 = (0..n_in).map(|p| a[p] * model.weight(l, q, p)).sum();
            let denom = stabilise(s, epsilon_stab);
            if denom == 0.0 {
                return Err(Error::ZeroDenominator {
                    layer: l,
                    neuron: q,
                });
            }
            let ratio = r_q / denom;
            for p in 0..n_in {
                lower[p] += a[p] * model.weight(l, q, p) * ratio;
            }
        }
        layers[l] = lower;
    }

    if layers.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("relevance".into()));
    }
    Ok(RelevanceMap {
        layers,
        source: RelevanceSource::SingleSample,
    })
}

/// Mean absolute relevance over a sample set.
pub fn aggregate_relevance(
    model: &MlpModel,
    samples: &[&Sample],
    epsilon_stab: f64,
) -> Result<RelevanceMap> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("relevance aggregation set"));
    }
    let mut acc: Vec<Vec<f64>> = model.layer_dims().iter().map(|&d| vec![0.0; d]).collect();
    for s in samples {
        let r = lrp_propagate(model, &s.features, epsilon_stab)?;
        for (a, l) in acc.iter_mut().zip(&r.layers) {
            for (v, x) in a.iter_mut().zip(l) {
                *v += x.abs();
            }
        }
    }
    let inv = 1.0 / samples.len() as f64;
    acc.iter_mut().flatten().for_each(|v| *v *= inv);
    Ok(RelevanceMap {
        layers: acc,
        source: RelevanceSource::Aggregated {
            n_samples: samples.len(),
        },
    })
}

/// Each weight `W_l[q, p]` and bias `b_l[q]` inherits `|R_{l+1}[q]|`; the
/// vector is then scaled so its largest entry is 1.
pub fn param_relevance(relmap: &RelevanceMap, model: &MlpModel) -> Result<ParamRelevance> {
    relmap.check_shape(model)?;
    let dims = model.layer_dims();
    let mut h = Vec::with_capacity(model.num_params());
    for l in 0..model.num_layers() {
        let upper = &relmap.layers[l + 1];
        for &r in upper {
            h.extend(std::iter::repeat_n(r.abs(), dims[l]));
        }
        h.extend(upper.iter().map(|r| r.abs()));
    }
    debug_assert_eq!(h.len(), model.num_params());
    let max = h.iter().copied().fold(0.0, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("parameter relevance".into()));
    }
    if max == 0.0 {
        log::warn!("all-zero relevance; using uniform parameter relevance");
        h.iter_mut().for_each(|v| *v = 1.0);
    } else {
        h.iter_mut().for_each(|v| *v /= max);
    }
    Ok(ParamRelevance { h: ParamVector(h) })
}
