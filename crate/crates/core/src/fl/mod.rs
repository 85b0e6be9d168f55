//! Federated server loop: participant sampling, parallel local jobs, and
//! weighted delta aggregation.

pub mod aggregate;
pub mod experiment;

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    anchoring_baseline, benign_update, malicious_update, AttackConfig, AttackDiagnostics,
    ClientJob, OptimizerConfig,
};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::fairness::{compute_eod, evaluate, hard_prediction, FairnessReport, SurrogateConfig};
use crate::nn::{MlpModel, ParamVector};
use crate::rng::{stream, Purpose};

pub use aggregate::{AggregationRule, ClipMode};
pub use experiment::{run_experiment, AttackKind, ExperimentConfig, Schedule};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchoringConfig {
    pub poison_fraction: f64,
    pub perturb_scale: f64,
    pub target_group: u8,
}

impl Default for AnchoringConfig {
    fn default() -> Self {
        Self {
            poison_fraction: 0.1,
            perturb_scale: 0.1,
            target_group: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClientRole {
    Benign,
    Malicious(AttackConfig),
    Anchoring(AnchoringConfig),
}

impl ClientRole {
    pub fn is_adversarial(&self) -> bool {
        !matches!(self, Self::Benign)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientSpec {
    pub id: usize,
    pub data: Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub schema_version: u32,
    pub round: usize,
    pub participants: Vec<usize>,
    pub malicious: Vec<usize>,
    /// Aggregation weight of each participant, in `participants` order.
    pub weights: Vec<f64>,
    pub rule: String,
    /// Global model evaluated on the held-out test set after aggregation.
    pub report: FairnessReport,
    pub attack: Vec<AttackDiagnostics>,
    /// Kept out of the JSONL so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct ServerState {
    pub theta_g: MlpModel,
    pub round: usize,
    pub rng_seed: u64,
    pub history: Vec<RoundLog>,
}

impl ServerState {
    pub fn new(theta_g: MlpModel, rng_seed: u64) -> Self {
        Self {
            theta_g,
            round: 0,
            rng_seed,
            history: Vec::new(),
        }
    }
}

/// Draws `ceil(rate * n)` distinct clients (ascending ids) and flags each as
/// malicious with probability `epsilon`.
pub fn sample_participants(
    n_clients: usize,
    rate: f64,
    epsilon: f64,
    round: usize,
    seed: u64,
) -> Result<Vec<(usize, bool)>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!(
            "participation rate {rate} outside (0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rate * (n_clients as f64) < 1.0 {
        return Err(Error::Config(format!(
            "rate {rate} selects no client out of {n_clients}"
        )));
    }
    let count = ((rate * n_clients as f64).ceil() as usize).min(n_clients);
    let mut pick_rng = stream(seed, Purpose::Participants, &[round as u64]);
    let mut ids = sample(&mut pick_rng, n_clients, count).into_vec();
    ids.sort_unstable();
    let mut mal_rng = stream(seed, Purpose::Malicious, &[round as u64]);
    Ok(ids
        .into_iter()
        .map(|id| (id, mal_rng.random_bool(epsilon)))
        .collect())
}

/// Per-round settings shared by every participant.
#[derive(Clone, Copy, Debug)]
pub struct RoundContext<'a> {
    pub seed: u64,
    pub optimizer: &'a OptimizerConfig,
    /// Fairness constraint applied during honest local training.
    pub benign_surrogate: Option<&'a SurrogateConfig>,
    pub test: &'a Dataset,
    /// Malicious probability, used for Krum's default Byzantine count.
    pub epsilon: f64,
}

struct LocalResult {
    model: MlpModel,
    diagnostics: Option<AttackDiagnostics>,
}

fn local_job(
    theta_g: &MlpModel,
    client: &ClientSpec,
    role: &ClientRole,
    ctx: &RoundContext,
    round: usize,
) -> Result<LocalResult> {
    let job = ClientJob {
        seed: ctx.seed,
        round,
        client_id: client.id,
        optimizer: ctx.optimizer,
        surrogate: ctx.benign_surrogate,
    };
    match role {
        ClientRole::Benign => Ok(LocalResult {
            model: benign_update(theta_g, &client.data, &job)?,
            diagnostics: None,
        }),
        ClientRole::Malicious(cfg) => {
            let out = malicious_update(theta_g, &client.data, cfg, &job)?;
            Ok(LocalResult {
                model: out.model,
                diagnostics: Some(out.diagnostics),
            })
        }
        ClientRole::Anchoring(cfg) => {
            let mut rng = stream(
                ctx.seed,
                Purpose::Anchoring,
                &[round as u64, client.id as u64],
            );
            let (data, abort_reason) = match anchoring_baseline(
                &client.data,
                cfg.target_group,
                cfg.poison_fraction,
                cfg.perturb_scale,
                &mut rng,
            ) {
                Ok(d) => (d, None),
                Err(Error::AttackAborted(r)) => (client.data.clone(), Some(r)),
                Err(e) => return Err(e),
            };
            Ok(LocalResult {
                model: benign_update(theta_g, &data, &job)?,
                diagnostics: Some(AttackDiagnostics {
                    client_id: client.id,
                    biasing_size: data.len() - client.data.len(),
                    abort_reason,
                    ..Default::default()
                }),
            })
        }
    }
}

fn eod_on<'a>(model: &MlpModel, samples: impl Iterator<Item = &'a Sample>) -> Result<f64> {
    let (mut preds, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        preds.push(hard_prediction(model.forward(&s.features)?));
        labels.push(s.label);
        groups.push(s.group);
    }
    compute_eod(&preds, &labels, &groups)
}

fn rule_weights(
    rule: &AggregationRule,
    theta_g: &MlpModel,
    members: &[&ClientSpec],
    deltas: &mut Vec<ParamVector>,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let sizes: Vec<usize> = members.iter().map(|c| c.data.len()).collect();
    match *rule {
        AggregationRule::Fedavg => aggregate::aggregate_fedavg(&sizes),
        AggregationRule::Krum { f } => {
            let f = f.unwrap_or_else(|| aggregate::default_krum_f(deltas.len(), epsilon));
            aggregate::aggregate_krum(deltas, f)
        }
        AggregationRule::NormThreshold { tau_norm, mode } => {
            let (clipped, w) = aggregate::aggregate_norm_threshold(deltas, &sizes, tau_norm, mode)?;
            *deltas = clipped;
            Ok(w)
        }
        AggregationRule::Qffl { q } => {
            let losses = members
                .iter()
                .map(|c| theta_g.mean_loss(&c.data.samples))
                .collect::<Result<Vec<_>>>()?;
            aggregate::aggregate_qffl(&losses, &sizes, q)
        }
        AggregationRule::Fairfed { beta } => {
            let global = eod_on(theta_g, members.iter().flat_map(|c| c.data.samples.iter()))?;
            let local = members
                .iter()
                .map(|c| match eod_on(theta_g, c.data.samples.iter()) {
                    Ok(e) => Ok(e),
                    Err(Error::UndefinedMetric(_)) => Ok(global),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()?;
            aggregate::aggregate_fairfed(&sizes, &local, global, beta)
        }
    }
}

/// One communication round. Local jobs run in parallel on immutable
/// snapshots; results are combined in ascending participant order.
pub fn run_round(
    server: &mut ServerState,
    clients: &[ClientSpec],
    participants: &[(usize, ClientRole)],
    rule: &AggregationRule,
    ctx: &RoundContext,
) -> Result<RoundLog> {
    let round = server.round;
    let start = Instant::now();
    let wrap = |e: Error| Error::Round {
        round,
        source: Box::new(e),
    };
    if participants.is_empty() {
        return Err(wrap(Error::EmptyInput("round participants")));
    }
    let mut order: Vec<&(usize, ClientRole)> = participants.iter().collect();
    order.sort_by_key(|p| p.0);
    let members = order
        .iter()
        .map(|(id, _)| {
            clients
                .iter()
                .find(|c| c.id == *id)
                .ok_or_else(|| wrap(Error::Config(format!("unknown client id {id}"))))
        })
        .collect::<Result<Vec<&ClientSpec>>>()?;

    let theta_g = &server.theta_g;
    let results = order
        .par_iter()
        .zip(members.par_iter())
        .map(|((_, role), client)| local_job(theta_g, client, role, ctx, round))
        .collect::<Result<Vec<LocalResult>>>()
        .map_err(wrap)?;

    let mut deltas = results
        .iter()
        .map(|r| r.model.params().sub(theta_g.params()))
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    let weights = rule_weights(rule, theta_g, &members, &mut deltas, ctx.epsilon).map_err(wrap)?;

    let mut params = theta_g.params().clone();
    aggregate::apply_deltas(&mut params, &deltas, &weights).map_err(wrap)?;
    if !params.all_finite() {
        return Err(wrap(Error::NonFinite("global model".into())));
    }
    server.theta_g = MlpModel::unflatten(theta_g.layer_dims(), params).map_err(wrap)?;
    let report = evaluate(&server.theta_g, ctx.test).map_err(wrap)?;

    let log = RoundLog {
        schema_version: SCHEMA_VERSION,
        round,
        participants: order.iter().map(|p| p.0).collect(),
        malicious: order
            .iter()
            .filter(|p| p.1.is_adversarial())
            .map(|p| p.0)
            .collect(),
        weights,
        rule: rule.tag().to_string(),
        report,
        attack: results.into_iter().filter_map(|r| r.diagnostics).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    server.history.push(log.clone());
    server.round += 1;
    Ok(log)
}
