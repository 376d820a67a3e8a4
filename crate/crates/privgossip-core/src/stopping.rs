//! Flag-based distributed stopping.
//!
//! Every node keeps one flag per peer. When two nodes meet and their values
//! are already closer than `ε`, both raise their mutual flag and leave the
//! values alone; otherwise they average and drop every flag they own. A
//! node with all flags raised is passive: it stops initiating exchanges but
//! still answers when another node picks it.

use crate::error::{Error, Result};
use crate::node::NodeState;

/// Closeness threshold, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Epsilon(f64);

impl Epsilon {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Epsilon(value))
        } else {
            Err(Error::InvalidConfig(alloc::format!("epsilon must be positive and finite, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StoppingAction {
    FlagsSet,
    Averaged,
}

impl StoppingAction {
    pub fn as_str(self) -> &'static str {
        match self {
            StoppingAction::FlagsSet => "flags_set",
            StoppingAction::Averaged => "averaged",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flags_set" => Some(StoppingAction::FlagsSet),
            "averaged" => Some(StoppingAction::Averaged),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingOutcome {
    pub action: StoppingAction,
    pub new_value_i: Option<f64>,
    pub new_value_j: Option<f64>,
}

/// One stopping-protocol exchange between `a` and `b`.
///
/// The closeness test is strict: a difference of exactly `ε` averages.
pub fn stopping_exchange(a: &mut NodeState, b: &mut NodeState, eps: Epsilon) -> Result<StoppingOutcome> {
    if a.id == b.id {
        return Err(Error::InvalidCall("stopping exchange needs two distinct nodes"));
    }
    if (a.x_current - b.x_current).abs() < eps.value() {
        a.flags[b.id] = true;
        b.flags[a.id] = true;
        return Ok(StoppingOutcome { action: StoppingAction::FlagsSet, new_value_i: None, new_value_j: None });
    }
    let (m, _) = crate::node::pairwise_average(a.x_current, b.x_current)?;
    a.x_current = m;
    b.x_current = m;
    a.reset_flags();
    b.reset_flags();
    Ok(StoppingOutcome { action: StoppingAction::Averaged, new_value_i: Some(m), new_value_j: Some(m) })
}

/// True iff every flag towards another node is raised.
pub fn is_passive(state: &NodeState) -> bool {
    state.flags.iter().enumerate().all(|(j, &f)| j == state.id || f)
}

/// Ground-truth check: every value within `ε` (inclusive) of `true_mean`.
/// The protocol never evaluates this; it exists for tests and reports.
pub fn epsilon_consensus_oracle(values: &[f64], true_mean: f64, eps: Epsilon) -> Result<bool> {
    if values.is_empty() {
        return Err(Error::InvalidInput("consensus oracle needs at least one value"));
    }
    Ok(values.iter().all(|v| (v - true_mean).abs() <= eps.value()))
}
