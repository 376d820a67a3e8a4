use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use super::AttackModel;
use crate::error::{Error, Result};
use crate::node::{NodeId, NodeRole, Step};
use crate::sim::Trace;
use crate::stopping::StoppingAction;

/// The coalition's view of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonEntry {
    pub step: Step,
    /// `(initiator, responder)` when the coalition knows who exchanged.
    pub pair: Option<(NodeId, NodeId)>,
    /// The coalition saw the exchanged values.
    pub observed: bool,
    /// Outcome of the exchange; only visible on observed steps.
    pub action: Option<StoppingAction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLedger {
    pub roles: Vec<NodeRole>,
    pub model: AttackModel,
    /// `(node, k) -> x'_node[k]`: every value the coalition holds. Curious
    /// nodes appear at every step `0..=steps`.
    pub known_values: BTreeMap<(NodeId, Step), f64>,
    pub event_skeleton: Vec<SkeletonEntry>,
    /// Cancellation steps of private nodes, when granted by the model.
    pub l_steps: BTreeMap<NodeId, Step>,
    pub steps: Step,
}

impl ObservationLedger {
    pub fn n_nodes(&self) -> usize {
        self.roles.len()
    }

    pub fn is_curious(&self, node: NodeId) -> bool {
        self.roles[node] == NodeRole::Curious
    }

    pub fn hidden_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n_nodes()).filter(move |&j| !self.is_curious(j))
    }

    pub fn value(&self, node: NodeId, k: Step) -> Option<f64> {
        self.known_values.get(&(node, k)).copied()
    }
}

fn malformed(step: Step, reason: &str) -> Error {
    Error::MalformedTrace { step, reason: reason.into() }
}

fn check_trace(trace: &Trace, roles: &[NodeRole]) -> Result<()> {
    let n = roles.len();
    if n < 2 {
        return Err(malformed(0, "fewer than two nodes"));
    }
    if trace.start_values.len() != n {
        return Err(Error::MalformedTrace {
            step: 0,
            reason: format!("{} start values for {} roles", trace.start_values.len(), n),
        });
    }
    if trace.start_values.iter().any(|v| !v.is_finite()) {
        return Err(malformed(0, "non-finite start value"));
    }
    for (idx, e) in trace.events.iter().enumerate() {
        let k = idx as Step;
        if e.step != k {
            return Err(Error::MalformedTrace { step: e.step, reason: format!("expected step {k}") });
        }
        if e.initiator >= n || e.responder >= n {
            return Err(malformed(k, "node id out of range"));
        }
        if e.initiator == e.responder {
            return Err(malformed(k, "self exchange"));
        }
        let vals = [e.value_i_before, e.value_j_before, e.value_i_after, e.value_j_after, e.offset_i, e.offset_j];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(malformed(k, "non-finite value"));
        }
    }
    Ok(())
}

/// Cancellation step of every node that reached it, replayed from the
/// contact pattern of the trace.
pub(crate) fn replay_l_steps(trace: &Trace) -> Vec<Option<Step>> {
    let n = trace.n_nodes();
    let mut contacted: Vec<BTreeSet<NodeId>> = (0..n).map(|_| BTreeSet::new()).collect();
    let mut l: Vec<Option<Step>> = (0..n).map(|_| None).collect();
    for e in &trace.events {
        for (me, peer) in [(e.initiator, e.responder), (e.responder, e.initiator)] {
            if l[me].is_none() && contacted[me].len() + 1 == n {
                l[me] = Some(e.step);
            }
            contacted[me].insert(peer);
        }
    }
    l
}

/// Builds the coalition's view of `trace`.
pub fn observe(trace: &Trace, roles: &[NodeRole], model: AttackModel) -> Result<ObservationLedger> {
    check_trace(trace, roles)?;
    let n = roles.len();
    let curious = |j: NodeId| roles[j] == NodeRole::Curious;
    let hidden_count = (0..n).filter(|&j| !curious(j)).count();
    let steps = trace.events.len() as Step;

    let l_steps: BTreeMap<NodeId, Step> = if model.knows_l_steps {
        replay_l_steps(trace)
            .into_iter()
            .enumerate()
            .filter(|&(j, _)| roles[j] == NodeRole::Private)
            .filter_map(|(j, l)| l.map(|l| (j, l)))
            .collect()
    } else {
        BTreeMap::new()
    };
    let post_l = |j: NodeId, k: Step| l_steps.get(&j).is_some_and(|&l| k > l);

    let mut known_values = BTreeMap::new();
    let mut current = trace.start_values.clone();
    let mut event_skeleton = Vec::with_capacity(trace.events.len());
    for (idx, e) in trace.events.iter().enumerate() {
        let k = idx as Step;
        for c in (0..n).filter(|&c| curious(c)) {
            known_values.insert((c, k), current[c]);
        }
        let (a, b) = (e.initiator, e.responder);
        let observed = model.eavesdrop || curious(a) || curious(b);
        if observed {
            for (node, before, after) in
                [(a, e.value_i_before, e.value_i_after), (b, e.value_j_before, e.value_j_after)]
            {
                if curious(node) {
                    continue;
                }
                known_values.insert((node, k), before);
                // The post value is visible when the exchange did not go
                // through an offset the coalition cannot see.
                let plain = match e.stopping_action {
                    Some(_) => true,
                    None => roles[node] == NodeRole::Neutral || post_l(node, k),
                };
                if plain {
                    known_values.insert((node, k + 1), after);
                }
            }
        }
        let pair_known = observed || model.global_schedule || hidden_count == 2;
        event_skeleton.push(SkeletonEntry {
            step: k,
            pair: pair_known.then_some((a, b)),
            observed,
            action: if observed { e.stopping_action } else { None },
        });
        current[a] = e.value_i_after;
        current[b] = e.value_j_after;
    }
    for c in (0..n).filter(|&c| curious(c)) {
        known_values.insert((c, steps), current[c]);
    }

    Ok(ObservationLedger { roles: roles.to_vec(), model, known_values, event_skeleton, l_steps, steps })
}
