//! Declarative experiment configuration (TOML) and the multi-round driver.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{
    run_round, sample_participants, AggregationRule, AnchoringConfig, ClientRole, ClientSpec,
    RoundContext, RoundLog, ServerState,
};
use crate::attack::{AttackConfig, OptimizerConfig};
use crate::data::{
    load_adult_csv, partition_noniid, train_test_split, AdultSchema, Dataset, PartitionPlan,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::fairness::SurrogateConfig;
use crate::nn::MlpModel;
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Adult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Adult CSV; relative paths resolve against the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub has_header: bool,
    pub test_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_test: Option<usize>,
    pub synthetic: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            has_header: false,
            test_fraction: 0.3,
            max_train: None,
            max_test: None,
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub alpha: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            alpha: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    EabFl,
    Anchoring,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// No adversary.
    None,
    /// Every participant is malicious with probability ε in every round.
    #[default]
    Continuous,
    /// Every participant of the given round is malicious; no attack otherwise.
    SingleShot(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub schedule: Schedule,
    pub epsilon: f64,
    pub eab_fl: AttackConfig,
    pub anchoring: AnchoringConfig,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            kind: AttackKind::EabFl,
            schedule: Schedule::Continuous,
            epsilon: 0.0,
            eab_fl: AttackConfig::default(),
            anchoring: AnchoringConfig::default(),
        }
    }
}

/// Axes expanded into a Cartesian product of cells; an empty axis keeps the
/// base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilon_grid: Vec<f64>,
    pub kappa_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub rules: Vec<AggregationRule>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub participation_rate: f64,
    /// Honest clients train under the fairness constraint.
    pub benign_fairness: bool,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub fairness: SurrogateConfig,
    pub aggregation: AggregationRule,
    pub attack: AttackSection,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 40,
            participation_rate: 0.4,
            benign_fairness: true,
            dataset: DatasetConfig::default(),
            partition: PartitionConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            fairness: SurrogateConfig::default(),
            aggregation: AggregationRule::Fedavg,
            attack: AttackSection::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn push_err(problems: &mut Vec<String>, r: Result<()>) {
    if let Err(e) = r {
        problems.push(e.to_string());
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.dataset.path {
            if p.is_relative() {
                self.dataset.path = Some(base.join(p));
            }
        }
    }

    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.participation_rate > 0.0 && self.participation_rate <= 1.0) {
            p.push(format!(
                "participation_rate {} outside (0, 1]",
                self.participation_rate
            ));
        } else if self.participation_rate * (self.partition.n_clients as f64) < 1.0 {
            p.push("participation_rate selects no client".into());
        }
        if self.partition.n_clients < 2 {
            p.push("partition.n_clients must be at least 2".into());
        }
        if !(self.partition.alpha > 0.0) {
            p.push("partition.alpha must be positive".into());
        }
        if self.model.hidden.contains(&0) {
            p.push("model.hidden widths must be positive".into());
        }
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            p.push("dataset.test_fraction must lie in (0, 1)".into());
        }
        if self.dataset.source == DataSource::Adult && self.dataset.path.is_none() {
            p.push("dataset.path is required for the adult source".into());
        }
        push_err(&mut p, self.optimizer.validate());
        push_err(&mut p, self.fairness.validate());
        push_err(&mut p, self.aggregation.validate());
        push_err(&mut p, self.attack.eab_fl.validate());
        if !(0.0..=1.0).contains(&self.attack.epsilon) {
            p.push("attack.epsilon must lie in [0, 1]".into());
        }
        if let Schedule::SingleShot(r) = self.attack.schedule {
            if r >= self.rounds {
                p.push(format!(
                    "single-shot round {r} is not below rounds = {}",
                    self.rounds
                ));
            }
        }
        let a = &self.attack.anchoring;
        if !(0.0..=1.0).contains(&a.poison_fraction)
            || !(a.perturb_scale >= 0.0)
            || a.target_group > 1
        {
            p.push("attack.anchoring needs poison_fraction in [0, 1], perturb_scale >= 0, target_group 0 or 1".into());
        }
        let s = &self.sweep;
        if s.epsilon_grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
            p.push("sweep.epsilon_grid values must lie in [0, 1]".into());
        }
        if s.kappa_grid.iter().any(|k| !(0.0..=1.0).contains(k)) {
            p.push("sweep.kappa_grid values must lie in [0, 1]".into());
        }
        if s.alpha_grid.iter().any(|a| !(*a > 0.0)) {
            p.push("sweep.alpha_grid values must be positive".into());
        }
        for r in &s.rules {
            push_err(&mut p, r.validate());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.model.hidden);
        dims.push(1);
        dims
    }
}

fn subsample(d: Dataset, max: Option<usize>, seed: u64, which: u64) -> Result<Dataset> {
    match max {
        Some(m) if m < d.len() => {
            let mut rng = stream(seed, Purpose::Subsample, &[which]);
            let mut idx = sample(&mut rng, d.len(), m).into_vec();
            idx.sort_unstable();
            d.subset(&idx)
        }
        _ => Ok(d),
    }
}

/// Loads or generates the dataset and returns `(train, test)`.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let full = match cfg.dataset.source {
        DataSource::Synthetic => cfg.dataset.synthetic.generate(cfg.seed)?,
        DataSource::Adult => {
            let path = cfg.dataset.path.as_ref().ok_or_else(|| {
                Error::Config("dataset.path is required for the adult source".into())
            })?;
            load_adult_csv(
                path,
                &AdultSchema {
                    has_header: cfg.dataset.has_header,
                },
            )?
        }
    };
    let (train, test) = train_test_split(&full, cfg.dataset.test_fraction, cfg.seed)?;
    Ok((
        subsample(train, cfg.dataset.max_train, cfg.seed, 0)?,
        subsample(test, cfg.dataset.max_test, cfg.seed, 1)?,
    ))
}

pub fn build_partition(cfg: &ExperimentConfig, train: &Dataset) -> Result<PartitionPlan> {
    partition_noniid(
        train,
        cfg.partition.n_clients,
        cfg.partition.alpha,
        cfg.seed,
    )
}

pub fn build_clients(train: &Dataset, plan: &PartitionPlan) -> Result<Vec<ClientSpec>> {
    plan.clients
        .iter()
        .enumerate()
        .map(|(id, idx)| {
            Ok(ClientSpec {
                id,
                data: train.subset(idx)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub logs: Vec<RoundLog>,
    pub final_model: MlpModel,
}

/// Runs every round of one cell, writing one JSON line per round to `sink`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mut sink: Option<&mut dyn Write>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (train, test) = prepare_data(cfg)?;
    let plan = build_partition(cfg, &train)?;
    let clients = build_clients(&train, &plan)?;
    let mut init_rng = stream(cfg.seed, Purpose::ModelInit, &[]);
    let theta0 = MlpModel::init(&cfg.layer_dims(train.feature_dim), &mut init_rng)?;
    let mut server = ServerState::new(theta0, cfg.seed);

    let adversary = match cfg.attack.kind {
        AttackKind::EabFl => ClientRole::Malicious(cfg.attack.eab_fl.clone()),
        AttackKind::Anchoring => ClientRole::Anchoring(cfg.attack.anchoring.clone()),
    };
    let benign_surrogate = cfg.benign_fairness.then_some(&cfg.fairness);
    let ctx = RoundContext {
        seed: cfg.seed,
        optimizer: &cfg.optimizer,
        benign_surrogate,
        test: &test,
        epsilon: cfg.attack.epsilon,
    };

    for t in 0..cfg.rounds {
        let eps = match cfg.attack.schedule {
            Schedule::Continuous => cfg.attack.epsilon,
            Schedule::None | Schedule::SingleShot(_) => 0.0,
        };
        let drawn = sample_participants(
            cfg.partition.n_clients,
            cfg.participation_rate,
            eps,
            t,
            cfg.seed,
        )?;
        let participants: Vec<(usize, ClientRole)> = drawn
            .into_iter()
            .map(|(id, mal)| {
                let mal = mal || cfg.attack.schedule == Schedule::SingleShot(t);
                (
                    id,
                    if mal {
                        adversary.clone()
                    } else {
                        ClientRole::Benign
                    },
                )
            })
            .collect();
        let log = run_round(&mut server, &clients, &participants, &cfg.aggregation, &ctx)?;
        if let Some(w) = sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, &log)?;
            w.write_all(b"\n")?;
        }
        log::debug!(
            "round {t}: eod {:.4} utility {:.4} malicious {:?}",
            log.report.eod,
            log.report.utility,
            log.malicious
        );
    }
    Ok(ExperimentOutcome {
        logs: server.history,
        final_model: server.theta_g,
    })
}
