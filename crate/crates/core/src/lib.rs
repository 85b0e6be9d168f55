//! Federated-learning simulator for fairness-targeted model poisoning.

pub mod attack;
pub mod data;
pub mod error;
pub mod fairness;
pub mod fl;
pub mod harness;
pub mod influence;
pub mod lrp;
pub mod nn;
pub mod rec;
pub mod rng;

pub use error::{Error, Result};
