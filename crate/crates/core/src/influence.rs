//! Neural-tangent-kernel influence of privileged samples on a targeted group.
//!
//! For a candidate `i` and targeted-group samples `j`,
//!
//! ```text
//! score(i) = mean_j Θ(x_i, x_j) · (dBCE/df(x_i) + w · dphi/df(x_i))
//! Θ(a, b) = <∇θ f(a), ∇θ f(b)>
//! ```
//!
//! With `TargetWeighting::Loss` each target term is additionally weighted by
//! the target's own loss derivative `dBCE/df(x_j)`, so the score becomes the
//! alignment of the candidate's gradient with the targeted-group loss gradient:
//! positive means a training step on `x_i` lowers the targeted-group loss.
//! `TargetWeighting::Uniform` weights every target by 1.
//!
//! The kernel is linear in its second argument, so the (weighted) mean over
//! targets is computed once as `<∇θ f(x_i), mean_j w_j ∇θ f(x_j)>`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fairness::{surrogate_from_logits, SurrogateConfig};
use crate::nn::{bce_grad, MlpModel, ParamVector};

/// Kernel value `<∇f(x_i), ∇f(x_j)>`.
pub fn ntk(model: &MlpModel, xi: &[f64], xj: &[f64]) -> Result<f64> {
    let gi = model.per_sample_output_grad(xi)?;
    let gj = model.per_sample_output_grad(xj)?;
    gi.dot(&gj)
}

/// Gram matrix over `xs`, materialising at most `block_size` gradients of the
/// column block at a time.
pub fn ntk_gram(model: &MlpModel, xs: &[&[f64]], block_size: usize) -> Result<Vec<Vec<f64>>> {
    let block = block_size.max(1);
    let n = xs.len();
    let mut gram = vec![vec![0.0; n]; n];
    for row_start in (0..n).step_by(block) {
        let row_end = (row_start + block).min(n);
        let rows = xs[row_start..row_end]
            .iter()
            .map(|x| model.per_sample_output_grad(x))
            .collect::<Result<Vec<_>>>()?;
        for col_start in (row_start..n).step_by(block) {
            let col_end = (col_start + block).min(n);
            let cols = if col_start == row_start {
                rows.clone()
            } else {
                xs[col_start..col_end]
                    .iter()
                    .map(|x| model.per_sample_output_grad(x))
                    .collect::<Result<Vec<_>>>()?
            };
            for (a, ga) in rows.iter().enumerate() {
                for (b, gb) in cols.iter().enumerate() {
                    let (i, j) = (row_start + a, col_start + b);
                    if j < i {
                        continue;
                    }
                    let v = ga.dot(gb)?;
                    gram[i][j] = v;
                    gram[j][i] = v;
                }
            }
        }
    }
    Ok(gram)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetWeighting {
    #[default]
    Loss,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScores {
    /// `(local sample index, score)` in candidate order.
    pub entries: Vec<(usize, f64)>,
    pub target_group: u8,
    pub model_round: usize,
}

impl InfluenceScores {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,score\n");
        for (i, s) in &self.entries {
            out.push_str(&format!("{i},{s:e}\n"));
        }
        out
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    /// Min, quartiles, and max of the scores.
    pub fn quantiles(&self) -> [f64; 5] {
        let mut s = self.scores();
        if s.is_empty() {
            return [0.0; 5];
        }
        s.sort_by(f64::total_cmp);
        let at = |q: f64| s[((s.len() - 1) as f64 * q).round() as usize];
        [at(0.0), at(0.25), at(0.5), at(0.75), at(1.0)]
    }
}

/// Per-candidate loss-side factor `dBCE/df + w · dphi/df`, with the
/// surrogate evaluated over candidates and targets together.
pub fn candidate_coefficients(
    model: &MlpModel,
    local: &Dataset,
    candidates: &[usize],
    targets: &[usize],
    surrogate: &SurrogateConfig,
) -> Result<Vec<f64>> {
    let pool: Vec<usize> = candidates.iter().chain(targets).copied().collect();
    let logits = pool
        .iter()
        .map(|&i| model.forward(&local.samples[i].features))
        .collect::<Result<Vec<_>>>()?;
    let groups: Vec<u8> = pool.iter().map(|&i| local.samples[i].group).collect();
    let phi_grad = match surrogate_from_logits(&logits, &groups) {
        Ok(s) => s.grad,
        Err(Error::SurrogateUndefined { .. }) => vec![0.0; pool.len()],
        Err(e) => return Err(e),
    };
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            bce_grad(logits[k], local.samples[i].label_f64())
                + surrogate.penalty_weight * phi_grad[k]
        })
        .collect())
}

/// Weighted mean output gradient over the target samples.
pub fn mean_target_gradient(
    model: &MlpModel,
    local: &Dataset,
    targets: &[usize],
    weighting: TargetWeighting,
) -> Result<ParamVector> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("influence targets"));
    }
    let mut mean = ParamVector::zeros(model.num_params());
    for &j in targets {
        let s = &local.samples[j];
        let trace_grad = model.per_sample_output_grad(&s.features)?;
        let w = match weighting {
            TargetWeighting::Uniform => 1.0,
            TargetWeighting::Loss => bce_grad(model.forward(&s.features)?, s.label_f64()),
        };
        mean.axpy(w, &trace_grad)?;
    }
    mean.scale(1.0 / targets.len() as f64);
    Ok(mean)
}

pub fn influence_scores(
    model: &MlpModel,
    local: &Dataset,
    candidates: &[usize],
    targets: &[usize],
    target_group: u8,
    surrogate: &SurrogateConfig,
    weighting: TargetWeighting,
    model_round: usize,
) -> Result<InfluenceScores> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("influence candidates"));
    }
    for &i in candidates.iter().chain(targets) {
        if i >= local.len() {
            return Err(Error::Config(format!("sample index {i} out of range")));
        }
    }
    let target_grad = mean_target_gradient(model, local, targets, weighting)?;
    let coeffs = candidate_coefficients(model, local, candidates, targets, surrogate)?;
    let kernels = candidates
        .par_iter()
        .map(|&i| {
            model
                .per_sample_output_grad(&local.samples[i].features)?
                .dot(&target_grad)
        })
        .collect::<Result<Vec<f64>>>()?;
    let entries = candidates
        .iter()
        .zip(kernels.iter().zip(&coeffs))
        .map(|(&i, (k, c))| (i, k * c))
        .collect::<Vec<_>>();
    if entries.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFinite("influence score".into()));
    }
    Ok(InfluenceScores {
        entries,
        target_group,
        model_round,
    })
}
