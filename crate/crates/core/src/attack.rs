//! Malicious-client pipeline: fairness-constrained local training, influence-ranked
//! selection of a biasing set from privileged samples, and poisoning confined to
//! low-relevance parameters.
//!
//! The poisoning objective, with `Δ = θ_p - θ_b`, is
//!
//! ```text
//! mean_{i in D_bias} BCE(f(x_i; θ_p), y_i) + γ Σ h ⊙ Δ² + ρ ‖Δ‖₂
//! ```

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::fairness::{fairness_penalty, surrogate_phi, SurrogateConfig};
use crate::influence::{influence_scores, InfluenceScores, TargetWeighting};
use crate::lrp::{aggregate_relevance, param_relevance, ParamRelevance, DEFAULT_EPSILON_STAB};
use crate::nn::{MlpModel, OptimizerState, ParamVector};
use crate::rng::{stream, Purpose, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            local_epochs: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || self.batch_size == 0
        {
            return Err(Error::Config(
                "optimizer needs learning_rate > 0, momentum in [0, 1), batch_size >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kappa: f64,
    pub gamma: f64,
    pub rho: f64,
    pub mu: f64,
    pub target_group: u8,
    /// Epochs of the benign stage; `None` uses the shared optimizer setting.
    pub local_epochs: Option<usize>,
    pub poison_epochs: usize,
    pub poison_lr: f64,
    pub epsilon_stab: f64,
    pub target_weighting: TargetWeighting,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kappa: 0.4,
            gamma: 0.4,
            rho: 0.7,
            mu: 0.8,
            target_group: 0,
            local_epochs: None,
            poison_epochs: 5,
            poison_lr: 0.01,
            epsilon_stab: DEFAULT_EPSILON_STAB,
            target_weighting: TargetWeighting::Loss,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.kappa) {
            problems.push("kappa must lie in [0, 1]");
        }
        if !(self.gamma >= 0.0) || !(self.rho >= 0.0) {
            problems.push("gamma and rho must be nonnegative");
        }
        if self.target_group > 1 {
            problems.push("target_group must be 0 or 1");
        }
        if !(self.poison_lr > 0.0) {
            problems.push("poison_lr must be positive");
        }
        if !(self.epsilon_stab >= 0.0) {
            problems.push("epsilon_stab must be nonnegative");
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            problems.push("mu must lie in (0, 1]");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn privileged_group(&self) -> u8 {
        1 - self.target_group
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasingDataset {
    pub indices: Vec<usize>,
    pub parent_round: usize,
}

impl BiasingDataset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Every index is valid, unique, and refers to a privileged sample.
    pub fn check(&self, local: &Dataset, privileged: u8) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &i in &self.indices {
            if i >= local.len() || !seen.insert(i) || local.samples[i].group != privileged {
                return Err(Error::AttackAborted(format!("invalid biasing index {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LocalTrainResult {
    pub model: MlpModel,
    /// Mean BCE over the local data after each epoch.
    pub epoch_losses: Vec<f64>,
}

fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Mini-batch SGD on BCE plus, when `surrogate` is given, the hinge penalty on
/// the soft disparate-impact ratio of each batch.
pub fn benign_local_train(
    theta_g: &MlpModel,
    local: &Dataset,
    epochs: usize,
    optimizer: &OptimizerConfig,
    surrogate: Option<&SurrogateConfig>,
    rng: &mut Rng,
) -> Result<LocalTrainResult> {
    if local.is_empty() {
        return Err(Error::EmptyInput("local dataset"));
    }
    optimizer.validate()?;
    let mut model = theta_g.clone();
    let mut state = OptimizerState::new(
        model.num_params(),
        optimizer.learning_rate,
        optimizer.momentum,
    )?;
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut skipped = 0usize;
    for _ in 0..epochs {
        let order = shuffled(local.len(), rng);
        for chunk in order.chunks(optimizer.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &local.samples[i]).collect();
            let extra = match surrogate {
                Some(cfg) if cfg.penalty_weight > 0.0 => match surrogate_phi(&model, &batch) {
                    Ok(s) => {
                        let (_, dpen) = fairness_penalty(s.phi, cfg.mu, cfg.penalty_weight);
                        Some(s.grad.iter().map(|g| dpen * g).collect::<Vec<f64>>())
                    }
                    Err(Error::SurrogateUndefined { .. }) => {
                        skipped += 1;
                        None
                    }
                    Err(e) => return Err(e),
                },
                _ => None,
            };
            let grad = model.backward(&batch, extra.as_deref())?;
            state.step(&mut model, &grad)?;
        }
        let loss = model.mean_loss(&local.samples)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("local training loss".into()));
        }
        epoch_losses.push(loss);
    }
    if skipped > 0 {
        log::debug!("fairness penalty skipped on {skipped} single-group batches");
    }
    Ok(LocalTrainResult {
        model,
        epoch_losses,
    })
}

/// First `ceil(kappa * n)` candidates in ascending score order (ties by index).
pub fn select_from_scores(scores: &InfluenceScores, kappa: f64) -> Vec<usize> {
    let n = scores.entries.len();
    let take = ((kappa * n as f64).ceil() as usize).min(n);
    let mut ranked = scores.entries.clone();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(take).map(|(i, _)| i).collect()
}

pub fn select_biasing_dataset(
    theta_g: &MlpModel,
    local: &Dataset,
    tau: u8,
    kappa: f64,
    surrogate: &SurrogateConfig,
    weighting: TargetWeighting,
    round: usize,
) -> Result<(BiasingDataset, Option<InfluenceScores>)> {
    let empty = BiasingDataset {
        indices: Vec::new(),
        parent_round: round,
    };
    if kappa == 0.0 {
        return Ok((empty, None));
    }
    let privileged: Vec<usize> = (0..local.len())
        .filter(|&i| local.samples[i].group != tau)
        .collect();
    let targets: Vec<usize> = (0..local.len())
        .filter(|&i| local.samples[i].group == tau)
        .collect();
    if targets.is_empty() {
        return Err(Error::AttackAborted(
            "no targeted-group samples on this client".into(),
        ));
    }
    if privileged.is_empty() {
        return Err(Error::AttackAborted(
            "no privileged samples on this client".into(),
        ));
    }
    let scores = influence_scores(
        theta_g,
        local,
        &privileged,
        &targets,
        tau,
        surrogate,
        weighting,
        round,
    )?;
    let set = BiasingDataset {
        indices: select_from_scores(&scores, kappa),
        parent_round: round,
    };
    Ok((set, Some(scores)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonSettings {
    pub gamma: f64,
    pub rho: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug)]
pub struct PoisonResult {
    pub model: MlpModel,
    /// `‖θ_p - θ_b‖₂`
    pub distance: f64,
    /// `Σ h ⊙ Δ²`
    pub weighted_shift: f64,
}

/// Proximal step for `γ Σ h Δ² + ρ ‖Δ‖` with step size `lr`: the weighted
/// quadratic shrinks each coordinate by `1 / (1 + 2 lr γ h)`, then the norm
/// term shrinks the whole vector by `lr ρ` (to zero if shorter).
fn regulariser_prox(delta: &mut ParamVector, h: &ParamVector, gamma: f64, rho: f64, lr: f64) {
    for (d, w) in delta.0.iter_mut().zip(&h.0) {
        *d /= 1.0 + 2.0 * lr * gamma * w;
    }
    let norm = delta.norm();
    let keep = if norm > 0.0 {
        (1.0 - lr * rho / norm).max(0.0)
    } else {
        0.0
    };
    delta.scale(keep);
}

fn weighted_shift(delta: &ParamVector, h: &ParamVector) -> f64 {
    delta.0.iter().zip(&h.0).map(|(d, w)| w * d * d).sum()
}

/// Mini-batch proximal gradient descent on the poisoning objective starting
/// at `θ_b`: a gradient step on the data term followed by the regulariser prox.
pub fn poison_optimize(
    theta_b: &MlpModel,
    local: &Dataset,
    biasing: &BiasingDataset,
    h: &ParamRelevance,
    settings: &PoisonSettings,
    rng: &mut Rng,
) -> Result<PoisonResult> {
    if h.h.len() != theta_b.num_params() {
        return Err(Error::Shape {
            expected: theta_b.num_params(),
            got: h.h.len(),
        });
    }
    let mut model = theta_b.clone();
    if biasing.is_empty() {
        return Ok(PoisonResult {
            model,
            distance: 0.0,
            weighted_shift: 0.0,
        });
    }
    let batch_size = settings.batch_size.max(1);
    for epoch in 0..settings.epochs {
        let mut order = biasing.indices.clone();
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &local.samples[i]).collect();
            let grad = model.backward(&batch, None)?;
            model.params_mut().axpy(-settings.lr, &grad)?;
            let mut delta = model.params().sub(theta_b.params())?;
            regulariser_prox(&mut delta, &h.h, settings.gamma, settings.rho, settings.lr);
            let mut next = theta_b.params().clone();
            next.axpy(1.0, &delta)?;
            *model.params_mut() = next;
        }
        if !model.params().all_finite() {
            return Err(Error::AttackAborted(format!(
                "poisoning diverged in epoch {epoch} (lr {}, |D_bias| {})",
                settings.lr,
                biasing.len()
            )));
        }
    }
    let delta = model.params().sub(theta_b.params())?;
    Ok(PoisonResult {
        distance: delta.norm(),
        weighted_shift: weighted_shift(&delta, &h.h),
        model,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackDiagnostics {
    pub client_id: usize,
    pub biasing_size: usize,
    pub poison_distance: f64,
    pub weighted_shift: f64,
    /// Min, quartiles, max of the candidate influence scores.
    pub influence_quantiles: Option<[f64; 5]>,
    pub abort_reason: Option<String>,
}

#[derive(Clone, Debug)]
pub struct MaliciousOutcome {
    pub model: MlpModel,
    pub benign_model: MlpModel,
    pub diagnostics: AttackDiagnostics,
}

/// Shared context of one client's local job.
#[derive(Clone, Copy, Debug)]
pub struct ClientJob<'a> {
    pub seed: u64,
    pub round: usize,
    pub client_id: usize,
    pub optimizer: &'a OptimizerConfig,
    /// Fairness constraint for the benign stage; `None` trains on plain BCE.
    pub surrogate: Option<&'a SurrogateConfig>,
}

impl ClientJob<'_> {
    pub fn shuffle_stream(&self) -> Rng {
        stream(
            self.seed,
            Purpose::Shuffle,
            &[self.round as u64, self.client_id as u64],
        )
    }
}

/// The honest-client procedure.
pub fn benign_update(theta_g: &MlpModel, local: &Dataset, job: &ClientJob) -> Result<MlpModel> {
    let mut rng = job.shuffle_stream();
    Ok(benign_local_train(
        theta_g,
        local,
        job.optimizer.local_epochs,
        job.optimizer,
        job.surrogate,
        &mut rng,
    )?
    .model)
}

pub fn malicious_update(
    theta_g: &MlpModel,
    local: &Dataset,
    cfg: &AttackConfig,
    job: &ClientJob,
) -> Result<MaliciousOutcome> {
    cfg.validate()?;
    let mut rng = job.shuffle_stream();
    let epochs = cfg.local_epochs.unwrap_or(job.optimizer.local_epochs);
    let attack_surrogate = SurrogateConfig {
        mu: cfg.mu,
        penalty_weight: job
            .surrogate
            .map_or(SurrogateConfig::default().penalty_weight, |s| {
                s.penalty_weight
            }),
    };
    let benign_surrogate = job.surrogate.map(|_| attack_surrogate);
    let theta_b = benign_local_train(
        theta_g,
        local,
        epochs,
        job.optimizer,
        benign_surrogate.as_ref(),
        &mut rng,
    )?
    .model;

    let mut diagnostics = AttackDiagnostics {
        client_id: job.client_id,
        ..Default::default()
    };
    let degrade = |reason: String, mut diagnostics: AttackDiagnostics| {
        log::info!(
            "round {} client {}: attack aborted: {reason}",
            job.round,
            job.client_id
        );
        diagnostics.abort_reason = Some(reason);
        MaliciousOutcome {
            model: theta_b.clone(),
            benign_model: theta_b.clone(),
            diagnostics,
        }
    };
    if cfg.kappa == 0.0 {
        return Ok(MaliciousOutcome {
            model: theta_b.clone(),
            benign_model: theta_b,
            diagnostics,
        });
    }

    let privileged = cfg.privileged_group();
    let (biasing, scores) = match select_biasing_dataset(
        theta_g,
        local,
        cfg.target_group,
        cfg.kappa,
        &attack_surrogate,
        cfg.target_weighting,
        job.round,
    ) {
        Ok(v) => v,
        Err(Error::AttackAborted(reason)) => return Ok(degrade(reason, diagnostics)),
        Err(e) => return Err(e),
    };
    biasing.check(local, privileged)?;
    diagnostics.biasing_size = biasing.len();
    diagnostics.influence_quantiles = scores.as_ref().map(|s| s.quantiles());

    let privileged_samples: Vec<&Sample> = local
        .samples
        .iter()
        .filter(|s| s.group == privileged)
        .collect();
    let relevance = aggregate_relevance(&theta_b, &privileged_samples, cfg.epsilon_stab)?;
    let h = param_relevance(&relevance, &theta_b)?;

    let settings = PoisonSettings {
        gamma: cfg.gamma,
        rho: cfg.rho,
        epochs: cfg.poison_epochs,
        lr: cfg.poison_lr,
        batch_size: job.optimizer.batch_size,
    };
    let mut poison_rng = stream(
        job.seed,
        Purpose::Poison,
        &[job.round as u64, job.client_id as u64],
    );
    match poison_optimize(&theta_b, local, &biasing, &h, &settings, &mut poison_rng) {
        Ok(p) => {
            diagnostics.poison_distance = p.distance;
            diagnostics.weighted_shift = p.weighted_shift;
            Ok(MaliciousOutcome {
                model: p.model,
                benign_model: theta_b,
                diagnostics,
            })
        }
        Err(Error::AttackAborted(reason)) => Ok(degrade(reason, diagnostics)),
        Err(e) => Err(e),
    }
}

/// Label-flipped, noise-perturbed copies of targeted-group samples appended to
/// the local data. `ceil(fraction * n)` copies are made, cycling through the
/// targeted samples in a seeded order.
pub fn anchoring_baseline(
    local: &Dataset,
    tau: u8,
    poison_fraction: f64,
    perturb_scale: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&poison_fraction) || !(perturb_scale >= 0.0) {
        return Err(Error::Config(
            "anchoring needs fraction in [0, 1] and scale >= 0".into(),
        ));
    }
    let mut parents: Vec<usize> = (0..local.len())
        .filter(|&i| local.samples[i].group == tau)
        .collect();
    if parents.is_empty() {
        return Err(Error::AttackAborted(
            "no targeted-group samples to anchor".into(),
        ));
    }
    let count = (poison_fraction * local.len() as f64).ceil() as usize;
    parents.shuffle(rng);
    let noise = Normal::new(0.0, perturb_scale.max(f64::MIN_POSITIVE)).expect("valid scale");
    let mut samples = local.samples.clone();
    for k in 0..count {
        let parent = &local.samples[parents[k % parents.len()]];
        let features = parent
            .features
            .iter()
            .map(|&v| {
                if perturb_scale > 0.0 {
                    v + noise.sample(rng)
                } else {
                    v
                }
            })
            .collect();
        samples.push(Sample::new(features, 1 - parent.label, tau));
    }
    Dataset::new(samples, local.provenance)
}
