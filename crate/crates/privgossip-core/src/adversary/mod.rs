//! Colluding curious coalition.
//!
//! The pipeline is [`observe`] (what the coalition sees of a run),
//! [`build_constraints`] (the affine equations the protocol structure
//! implies over the hidden quantities), then either [`propagate`] or the
//! full row-space test in [`Elimination`], and finally [`privacy_verdicts`].
//!
//! Observation boundary, by default:
//! - the coalition knows every node's role and the global step counter, so
//!   it knows at which steps none of its members was involved;
//! - it learns the value a non-curious node sends whenever that node
//!   exchanges with a curious node, and whether that exchange raised flags
//!   or averaged;
//! - it learns who exchanged with whom at a hidden step only when that is
//!   implied (exactly two non-curious nodes) or when
//!   [`AttackModel::global_schedule`] grants it;
//! - it is told each private node's cancellation step `L` unless
//!   [`AttackModel::knows_l_steps`] is off.

mod observe;
mod solve;
mod system;
mod verdict;

pub use observe::{observe, ObservationLedger, SkeletonEntry};
pub use solve::{identifiability, propagate, Elimination, Identifiability};
pub use system::{build_constraints, AffineForm, AffineSystem, Equation, EquationKind, GroundTruth, Symbol};
pub use verdict::{privacy_verdicts, verdicts_for_system, Outcome, PrivacyVerdict, MAX_SUM_SET};

/// What the coalition is assumed to know beyond its own exchanges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackModel {
    /// The coalition is told every private node's cancellation step.
    pub knows_l_steps: bool,
    /// The coalition sees who exchanged with whom at every step, but not
    /// the values of exchanges it is not part of.
    pub global_schedule: bool,
    /// The coalition sees the values of every exchange.
    pub eavesdrop: bool,
}

impl Default for AttackModel {
    fn default() -> Self {
        AttackModel { knows_l_steps: true, global_schedule: false, eavesdrop: false }
    }
}
