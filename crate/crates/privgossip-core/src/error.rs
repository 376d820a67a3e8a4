use alloc::string::String;

use crate::node::{NodeId, Step};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid value for {what}: {value}")]
    InvalidValue { what: &'static str, value: f64 },

    #[error("protocol violation at node {node}: {reason}")]
    ProtocolViolation { node: NodeId, reason: &'static str },

    #[error("invalid call: {0}")]
    InvalidCall(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed trace at step {step}: {reason}")]
    MalformedTrace { step: Step, reason: String },

    /// The coalition's equations disagree with each other. The observation
    /// model produced a false equation, so this is a modeling bug rather
    /// than an attack outcome.
    #[error("inconsistent constraint system: equation {equation} leaves residual {residual:e}")]
    Contradiction { equation: usize, residual: f64 },
}
