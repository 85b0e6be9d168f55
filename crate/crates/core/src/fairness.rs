//! Group-fairness metrics and the differentiable fairness surrogate.
//!
//! Metrics work on hard predictions (`sigmoid(logit) >= 0.5`). The surrogate
//! `phi` is the soft disparate-impact ratio `min(r0, r1) / max(r0, r1)` of
//! mean predicted probabilities per group, and local training enforces
//! `phi >= mu` through the hinge penalty `w * max(0, mu - phi)^2`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, MlpModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    /// Fairness tolerance; 0.8 is the four-fifths rule.
    pub mu: f64,
    pub penalty_weight: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            mu: 0.8,
            penalty_weight: 1.0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config(format!(
                "mu = {} must lie in (0, 1]",
                self.mu
            )));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::Config("penalty_weight must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroupRates {
    pub positive_rate: f64,
    pub tpr: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "FlatReport", into = "FlatReport")]
pub struct FairnessReport {
    pub eod: f64,
    pub dpd: f64,
    pub utility: f64,
    pub group_rates: [GroupRates; 2],
}

/// Wire form: one flat object with dotted rate keys.
#[derive(Serialize, Deserialize)]
struct FlatReport {
    eod: f64,
    dpd: f64,
    utility: f64,
    #[serde(rename = "rates.g0.positive_rate")]
    g0_positive_rate: f64,
    #[serde(rename = "rates.g0.tpr")]
    g0_tpr: f64,
    #[serde(rename = "rates.g0.count")]
    g0_count: usize,
    #[serde(rename = "rates.g1.positive_rate")]
    g1_positive_rate: f64,
    #[serde(rename = "rates.g1.tpr")]
    g1_tpr: f64,
    #[serde(rename = "rates.g1.count")]
    g1_count: usize,
}

impl From<FairnessReport> for FlatReport {
    fn from(r: FairnessReport) -> Self {
        let [g0, g1] = r.group_rates;
        Self {
            eod: r.eod,
            dpd: r.dpd,
            utility: r.utility,
            g0_positive_rate: g0.positive_rate,
            g0_tpr: g0.tpr,
            g0_count: g0.count,
            g1_positive_rate: g1.positive_rate,
            g1_tpr: g1.tpr,
            g1_count: g1.count,
        }
    }
}

impl From<FlatReport> for FairnessReport {
    fn from(f: FlatReport) -> Self {
        Self {
            eod: f.eod,
            dpd: f.dpd,
            utility: f.utility,
            group_rates: [
                GroupRates {
                    positive_rate: f.g0_positive_rate,
                    tpr: f.g0_tpr,
                    count: f.g0_count,
                },
                GroupRates {
                    positive_rate: f.g1_positive_rate,
                    tpr: f.g1_tpr,
                    count: f.g1_count,
                },
            ],
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

fn group_tpr(preds: &[u8], labels: &[u8], groups: &[u8], g: u8) -> Option<f64> {
    let (mut pos, mut hit) = (0usize, 0usize);
    for ((&p, &y), &gg) in preds.iter().zip(labels).zip(groups) {
        if gg == g && y == 1 {
            pos += 1;
            hit += usize::from(p == 1);
        }
    }
    (pos > 0).then(|| hit as f64 / pos as f64)
}

fn group_positive_rate(preds: &[u8], groups: &[u8], g: u8) -> Option<f64> {
    let (mut n, mut pos) = (0usize, 0usize);
    for (&p, &gg) in preds.iter().zip(groups) {
        if gg == g {
            n += 1;
            pos += usize::from(p == 1);
        }
    }
    (n > 0).then(|| pos as f64 / n as f64)
}

/// Equal opportunity difference: absolute true-positive-rate gap.
pub fn compute_eod(preds: &[u8], labels: &[u8], groups: &[u8]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    check_lengths(preds.len(), groups.len())?;
    let tpr = |g| {
        group_tpr(preds, labels, groups, g)
            .ok_or_else(|| Error::UndefinedMetric(format!("EOD: group {g} has no positive labels")))
    };
    Ok((tpr(0)? - tpr(1)?).abs())
}

/// Demographic parity difference: largest deviation of a group's positive
/// rate from the overall positive rate.
pub fn compute_dpd(preds: &[u8], groups: &[u8]) -> Result<f64> {
    check_lengths(preds.len(), groups.len())?;
    let rate = |g| {
        group_positive_rate(preds, groups, g)
            .ok_or_else(|| Error::UndefinedMetric(format!("DPD: group {g} is absent")))
    };
    let (r0, r1) = (rate(0)?, rate(1)?);
    let overall = preds.iter().filter(|&&p| p == 1).count() as f64 / preds.len() as f64;
    Ok((r0 - overall).abs().max((r1 - overall).abs()))
}

/// Accuracy.
pub fn compute_utility(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyInput("utility predictions"));
    }
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / preds.len() as f64)
}

pub fn hard_prediction(logit: f64) -> u8 {
    u8::from(sigmoid(logit) >= 0.5)
}

/// Full report from hard predictions.
pub fn report(preds: &[u8], labels: &[u8], groups: &[u8]) -> Result<FairnessReport> {
    let eod = compute_eod(preds, labels, groups)?;
    let dpd = compute_dpd(preds, groups)?;
    let utility = compute_utility(preds, labels)?;
    let rates = |g: u8| GroupRates {
        positive_rate: group_positive_rate(preds, groups, g).unwrap_or(0.0),
        tpr: group_tpr(preds, labels, groups, g).unwrap_or(0.0),
        count: groups.iter().filter(|&&x| x == g).count(),
    };
    Ok(FairnessReport {
        eod,
        dpd,
        utility,
        group_rates: [rates(0), rates(1)],
    })
}

/// Evaluates a model on a dataset.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<FairnessReport> {
    let preds = data
        .samples
        .iter()
        .map(|s| model.forward(&s.features).map(hard_prediction))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = data.samples.iter().map(|s| s.label).collect();
    let groups: Vec<u8> = data.samples.iter().map(|s| s.group).collect();
    report(&preds, &labels, &groups)
}

/// Value of the surrogate and its derivative with respect to every logit.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub phi: f64,
    pub grad: Vec<f64>,
}

/// Soft disparate-impact ratio from logits.
///
/// With `r_a` the mean of `sigmoid(logit)` over group `a`, `phi = r_lo / r_hi`
/// where `lo` is the group with the smaller rate (group 0 on ties).
pub fn surrogate_from_logits(logits: &[f64], groups: &[u8]) -> Result<Surrogate> {
    check_lengths(logits.len(), groups.len())?;
    let mut sum = [0.0f64; 2];
    let mut count = [0usize; 2];
    for (&l, &g) in logits.iter().zip(groups) {
        sum[g as usize] += sigmoid(l);
        count[g as usize] += 1;
    }
    for g in 0..2u8 {
        if count[g as usize] == 0 {
            return Err(Error::SurrogateUndefined { missing_group: g });
        }
    }
    let r = [sum[0] / count[0] as f64, sum[1] / count[1] as f64];
    let (lo, hi) = if r[0] <= r[1] {
        (0usize, 1usize)
    } else {
        (1, 0)
    };
    let phi = r[lo] / r[hi];
    let grad = logits
        .iter()
        .zip(groups)
        .map(|(&l, &g)| {
            let s = sigmoid(l);
            let dr = s * (1.0 - s) / count[g as usize] as f64;
            if g as usize == lo {
                dr / r[hi]
            } else {
                -r[lo] * dr / (r[hi] * r[hi])
            }
        })
        .collect();
    Ok(Surrogate { phi, grad })
}

pub fn surrogate_phi(model: &MlpModel, batch: &[&Sample]) -> Result<Surrogate> {
    let logits = batch
        .iter()
        .map(|s| model.forward(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let groups: Vec<u8> = batch.iter().map(|s| s.group).collect();
    surrogate_from_logits(&logits, &groups)
}

/// `(w * max(0, mu - phi)^2, d/dphi)`
pub fn fairness_penalty(phi: f64, mu: f64, penalty_weight: f64) -> (f64, f64) {
    let gap = (mu - phi).max(0.0);
    (penalty_weight * gap * gap, -2.0 * penalty_weight * gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eod_examples() {
        // group 0 positives predicted 1,1,0,0; group 1 positives all 1
        let preds = [1, 1, 0, 0, 1, 1, 1, 1];
        let labels = [1; 8];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        assert!((compute_eod(&preds, &labels, &groups).unwrap() - 0.5).abs() < 1e-15);
        let swapped: Vec<u8> = groups.iter().map(|g| 1 - g).collect();
        assert_eq!(
            compute_eod(&preds, &labels, &groups).unwrap(),
            compute_eod(&preds, &labels, &swapped).unwrap()
        );
        assert_eq!(compute_eod(&labels, &labels, &groups).unwrap(), 0.0);
        assert!(matches!(
            compute_eod(&[1, 1], &[1, 0], &[0, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn dpd_examples() {
        // group rates 0.8 and 0.2 with ten samples each
        let mut preds = vec![1u8; 8];
        preds.extend([0, 0]);
        preds.extend([1, 1]);
        preds.extend([0u8; 8]);
        let groups: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        assert!((compute_dpd(&preds, &groups).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(compute_dpd(&[1; 20], &groups).unwrap(), 0.0);
        assert_eq!(compute_dpd(&[1, 0, 1, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(compute_dpd(&[1, 0], &[1, 1]).is_err());
    }

    #[test]
    fn utility_examples() {
        assert_eq!(compute_utility(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(compute_utility(&[1, 0, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(compute_utility(&[], &[]).is_err());
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(fairness_penalty(0.9, 0.8, 1.0), (0.0, 0.0));
        assert_eq!(fairness_penalty(0.8, 0.8, 1.0).0, 0.0);
        let (p, dp) = fairness_penalty(0.6, 0.8, 1.0);
        assert!((p - 0.04).abs() < 1e-15);
        let h = 1e-6;
        let fd = (fairness_penalty(0.6 + h, 0.8, 1.0).0 - fairness_penalty(0.6 - h, 0.8, 1.0).0)
            / (2.0 * h);
        assert!((dp - fd).abs() < 1e-8);
    }

    fn logit_of(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn surrogate_engineered_rates() {
        let logits = [logit_of(0.4), logit_of(0.4), logit_of(0.8), logit_of(0.8)];
        let s = surrogate_from_logits(&logits, &[0, 0, 1, 1]).unwrap();
        assert!((s.phi - 0.5).abs() < 1e-12);
    }

    #[test]
    fn surrogate_equal_rates() {
        let logits = [0.3, 0.3, 0.3];
        let groups = [0, 1, 1];
        let s = surrogate_from_logits(&logits, &groups).unwrap();
        assert!((s.phi - 1.0).abs() < 1e-15);
        // quotient rule with r0 = r1 = r: group 0 gets s'/(n0 r), group 1 gets -s'/(n1 r)
        let sg = sigmoid(0.3);
        let d = sg * (1.0 - sg);
        assert!((s.grad[0] - d / sg).abs() < 1e-12);
        assert!((s.grad[1] + d / (2.0 * sg)).abs() < 1e-12);
    }

    #[test]
    fn surrogate_missing_group() {
        assert!(matches!(
            surrogate_from_logits(&[0.1, 0.2], &[1, 1]),
            Err(Error::SurrogateUndefined { missing_group: 0 })
        ));
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let logits = [0.2, -1.0, 0.7, 1.5, -0.3, 0.9];
        let groups = [0, 0, 0, 1, 1, 1];
        let s = surrogate_from_logits(&logits, &groups).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut p = logits;
            p[i] += h;
            let mut m = logits;
            m[i] -= h;
            let fd = (surrogate_from_logits(&p, &groups).unwrap().phi
                - surrogate_from_logits(&m, &groups).unwrap().phi)
                / (2.0 * h);
            assert!((s.grad[i] - fd).abs() <= 1e-4 * fd.abs() + 1e-10, "{i}");
        }
    }

    #[test]
    fn report_round_trips_flat_json() {
        let r = report(&[1, 0, 1, 1], &[1, 1, 1, 0], &[0, 0, 1, 1]).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("rates.g0.tpr").is_some());
        assert!(json.get("rates.g1.count").is_some());
        assert_eq!(json.as_object().unwrap().len(), 9);
        let back: FairnessReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }
}
