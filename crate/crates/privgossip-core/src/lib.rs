#![cfg_attr(not(test), no_std)]

//! Privacy-preserving randomized gossip for average consensus.
//!
//! Nodes that want to hide their initial value add a random offset at
//! start-up and a fresh offset at every activation, then cancel the whole
//! accumulated perturbation at the first activation after they have talked
//! to every other node. A flag-based rule lets every node decide locally when
//! to stop initiating exchanges. The [`adversary`] module replays a run from
//! the point of view of a colluding set of curious nodes and decides which
//! initial values (or sums of them) the coalition can pin down.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the CLI
//! live in the `privgossip` companion crate.

extern crate alloc;

pub mod adversary;
pub mod error;
pub mod node;
pub mod sim;
pub mod stopping;

pub use error::{Error, Result};
pub use node::{NodeId, NodeRole, NodeState, OffsetDistribution, Step};
pub use sim::{ExchangeEvent, Mode, SimConfig, SimResult, Trace};
pub use stopping::{Epsilon, StoppingAction, StoppingOutcome};
