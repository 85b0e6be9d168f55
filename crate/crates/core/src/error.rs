//! Error type shared by every module of the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("parameter length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("fairness surrogate undefined: batch lacks group {missing_group}")]
    SurrogateUndefined { missing_group: u8 },

    #[error(
        "zero relevance denominator at layer {layer}, neuron {neuron}; use a positive stabilizer"
    )]
    ZeroDenominator { layer: usize, neuron: usize },

    #[error("split error: {0}")]
    Split(String),

    #[error("attack aborted: {0}")]
    AttackAborted(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("aggregation rule error: {0}")]
    Rule(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
