//! Node-local protocol logic.
//!
//! A private node starts from `x + u` and, every time it is activated before
//! its cancellation step `L`, averages with its peer and then adds a fresh
//! pseudo-random offset. At step `L` (its first activation after it has
//! exchanged with every other node at least once) it adds the negative of
//! everything it injected so far, and from then on it behaves like a plain
//! gossip node. Neutral and curious nodes never inject anything.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// Node identifier, `0..n_nodes`.
pub type NodeId = usize;

/// Global step index. One step is one pair activation.
pub type Step = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRole {
    /// Runs the offset-injection protocol to hide its initial value.
    Private,
    /// Plain gossip, neither curious nor protected.
    Neutral,
    /// Follows plain gossip honestly but colludes with the other curious
    /// nodes to infer initial values.
    Curious,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Private => "private",
            NodeRole::Neutral => "neutral",
            NodeRole::Curious => "curious",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "private" => Some(NodeRole::Private),
            "neutral" => Some(NodeRole::Neutral),
            "curious" => Some(NodeRole::Curious),
            _ => None,
        }
    }
}

/// Law of the pseudo-random offsets. The same law is used for the initial
/// offset `u_i` and for the per-activation offsets `u_i[k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OffsetDistribution {
    UniformInterval { low: f64, high: f64 },
}

impl OffsetDistribution {
    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        if !low.is_finite() {
            return Err(Error::InvalidValue { what: "offset low bound", value: low });
        }
        if !high.is_finite() || high < low {
            return Err(Error::InvalidValue { what: "offset high bound", value: high });
        }
        Ok(OffsetDistribution::UniformInterval { low, high })
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            OffsetDistribution::UniformInterval { low, high } => (low, high),
        }
    }

    /// Variance of a single draw.
    pub fn variance(&self) -> f64 {
        let (low, high) = self.bounds();
        (high - low) * (high - low) / 12.0
    }

    /// Draws one offset. A degenerate interval consumes no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (low, high) = self.bounds();
        if low == high {
            low
        } else {
            rng.gen_range(low..=high)
        }
    }
}

impl Default for OffsetDistribution {
    fn default() -> Self {
        OffsetDistribution::UniformInterval { low: -1.0, high: 1.0 }
    }
}

/// Where a node stands in the privacy protocol at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// `k < L`: average, then add a fresh offset.
    Injecting,
    /// `k = L`: average, then cancel everything injected so far.
    Cancelling,
    /// Offsets are over; the node runs the stopping protocol.
    Stopping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub role: NodeRole,
    pub x_initial: f64,
    pub u_initial: f64,
    pub x_current: f64,
    /// Running sum of the per-activation offsets applied so far.
    pub offset_sum: f64,
    pub contacted: BTreeSet<NodeId>,
    pub l_step: Option<Step>,
    pub cancellation_done: bool,
    /// `flags[j]` is this node's closeness flag towards peer `j`. The entry
    /// at `id` is unused.
    pub flags: Vec<bool>,
}

/// Averages two values. Both outputs are the same number; their sum equals
/// `a + b` up to the rounding of that one addition.
pub fn pairwise_average(a: f64, b: f64) -> Result<(f64, f64)> {
    if !a.is_finite() {
        return Err(Error::InvalidValue { what: "gossip value", value: a });
    }
    if !b.is_finite() {
        return Err(Error::InvalidValue { what: "gossip value", value: b });
    }
    let m = (a + b) / 2.0;
    if !m.is_finite() {
        return Err(Error::InvalidValue { what: "gossip average", value: m });
    }
    Ok((m, m))
}

/// Offset that brings `u_initial + offset_sum + result` back to zero.
pub fn cancellation_offset(u_initial: f64, offset_sum: f64) -> f64 {
    -offset_sum - u_initial
}

/// One-shot perturbation of the random-offset baseline: the node starts
/// from `x + u` and never corrects it.
pub fn kefayati_transform(x: f64, u: f64) -> f64 {
    x + u
}

/// Creates a node. Private nodes draw `u_initial` from `dist` (exactly one
/// draw); other roles consume no randomness.
pub fn init_node<R: Rng + ?Sized>(
    id: NodeId,
    n_nodes: usize,
    role: NodeRole,
    x: f64,
    dist: &OffsetDistribution,
    rng: &mut R,
) -> Result<NodeState> {
    if n_nodes < 2 || id >= n_nodes {
        return Err(Error::InvalidCall("node id out of range"));
    }
    if !x.is_finite() {
        return Err(Error::InvalidValue { what: "initial value", value: x });
    }
    let u_initial = match role {
        NodeRole::Private => dist.sample(rng),
        NodeRole::Neutral | NodeRole::Curious => 0.0,
    };
    Ok(NodeState {
        id,
        role,
        x_initial: x,
        u_initial,
        x_current: x + u_initial,
        offset_sum: 0.0,
        contacted: BTreeSet::new(),
        l_step: None,
        cancellation_done: false,
        flags: vec![false; n_nodes],
    })
}

impl NodeState {
    pub fn n_nodes(&self) -> usize {
        self.flags.len()
    }

    /// True once the node has exchanged with every other node.
    pub fn has_full_coverage(&self) -> bool {
        self.contacted.len() + 1 == self.n_nodes()
    }

    /// Records that this node is activated with `peer` at step `k`.
    ///
    /// `L` is the first activation *after* coverage was complete, so the
    /// activation that completes the contact set does not set it.
    pub fn record_contact(&mut self, peer: NodeId, k: Step) -> Result<()> {
        if peer == self.id {
            return Err(Error::InvalidCall("a node cannot contact itself"));
        }
        if peer >= self.n_nodes() {
            return Err(Error::InvalidCall("peer id out of range"));
        }
        if self.l_step.is_none() && self.has_full_coverage() {
            self.l_step = Some(k);
        }
        self.contacted.insert(peer);
        Ok(())
    }

    /// Protocol phase at step `k`. Only private nodes ever leave
    /// [`Phase::Stopping`].
    pub fn phase(&self, k: Step) -> Phase {
        if self.role != NodeRole::Private {
            return Phase::Stopping;
        }
        match self.l_step {
            None => Phase::Injecting,
            Some(l) if k < l => Phase::Injecting,
            Some(l) if k == l => Phase::Cancelling,
            Some(_) => Phase::Stopping,
        }
    }

    /// The cancelling offset for this node's current state.
    pub fn cancellation_offset(&self) -> Result<f64> {
        if self.role != NodeRole::Private {
            return Err(Error::ProtocolViolation { node: self.id, reason: "only private nodes cancel offsets" });
        }
        Ok(cancellation_offset(self.u_initial, self.offset_sum))
    }

    /// Update of a private node activated with a peer holding `peer_value`
    /// at step `k`. Returns the new value and the offset applied.
    pub fn private_update<R: Rng + ?Sized>(
        &mut self,
        peer_value: f64,
        k: Step,
        dist: &OffsetDistribution,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if self.role != NodeRole::Private {
            return Err(Error::ProtocolViolation { node: self.id, reason: "offset update on a non-private node" });
        }
        let (avg, _) = pairwise_average(self.x_current, peer_value)?;
        let offset = match self.phase(k) {
            Phase::Injecting => dist.sample(rng),
            Phase::Cancelling => {
                if self.cancellation_done {
                    return Err(Error::ProtocolViolation { node: self.id, reason: "offsets cancelled twice" });
                }
                self.cancellation_done = true;
                self.cancellation_offset()?
            }
            Phase::Stopping => 0.0,
        };
        self.offset_sum += offset;
        self.x_current = avg + offset;
        Ok((self.x_current, offset))
    }

    /// Plain gossip update.
    pub fn plain_update(&mut self, peer_value: f64) -> f64 {
        debug_assert!(
            self.role != NodeRole::Private || self.cancellation_done || self.u_initial == 0.0,
            "plain update on a private node that still carries offsets"
        );
        self.x_current = (self.x_current + peer_value) / 2.0;
        self.x_current
    }

    /// Offset mass this node still carries in the network.
    pub fn outstanding_offset(&self) -> f64 {
        self.u_initial + self.offset_sum
    }

    pub fn reset_flags(&mut self) {
        self.flags.iter_mut().for_each(|f| *f = false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn fixed(u: f64) -> OffsetDistribution {
        OffsetDistribution::uniform(u, u).unwrap()
    }

    fn private(x_current: f64, u_initial: f64, offset_sum: f64, l_step: Option<Step>) -> NodeState {
        let mut s = init_node(0, 3, NodeRole::Private, 0.0, &fixed(u_initial), &mut rng()).unwrap();
        s.x_current = x_current;
        s.offset_sum = offset_sum;
        s.l_step = l_step;
        s
    }

    /// Independent reference for `L`: the first activation index whose
    /// strictly earlier activations already cover every peer.
    fn reference_l(node: NodeId, n: usize, schedule: &[(Step, NodeId, NodeId)]) -> Option<Step> {
        let mine: Vec<(Step, NodeId)> = schedule
            .iter()
            .filter_map(|&(k, a, b)| match (a == node, b == node) {
                (true, _) => Some((k, b)),
                (_, true) => Some((k, a)),
                _ => None,
            })
            .collect();
        for (idx, &(k, _)) in mine.iter().enumerate() {
            let seen: BTreeSet<NodeId> = mine[..idx].iter().map(|&(_, p)| p).collect();
            if seen.len() == n - 1 {
                return Some(k);
            }
        }
        None
    }

    #[test]
    fn pairwise_average_examples() {
        assert_eq!(pairwise_average(4.0, 2.0).unwrap(), (3.0, 3.0));
        assert_eq!(pairwise_average(0.7, 0.7).unwrap(), (0.7, 0.7));
        assert_eq!(pairwise_average(0.2, 0.8).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn pairwise_average_rejects_non_finite() {
        assert!(matches!(pairwise_average(f64::NAN, 1.0), Err(Error::InvalidValue { .. })));
        assert!(matches!(pairwise_average(1.0, f64::INFINITY), Err(Error::InvalidValue { .. })));
        assert!(pairwise_average(f64::MAX, f64::MAX).is_err());
    }

    #[test]
    fn init_node_roles() {
        let d = fixed(0.3);
        let n = init_node(1, 4, NodeRole::Neutral, 5.0, &d, &mut rng()).unwrap();
        assert_eq!((n.x_current, n.u_initial), (5.0, 0.0));
        let p = init_node(1, 4, NodeRole::Private, 5.0, &d, &mut rng()).unwrap();
        assert_eq!((p.x_current, p.u_initial), (5.3, 0.3));
        let c = init_node(1, 4, NodeRole::Curious, 2.0, &d, &mut rng()).unwrap();
        assert_eq!((c.x_current, c.u_initial), (2.0, 0.0));
        assert!(c.contacted.is_empty() && c.l_step.is_none() && c.flags.iter().all(|f| !f));
    }

    #[test]
    fn init_node_rejects_bad_input() {
        let d = OffsetDistribution::default();
        assert!(init_node(4, 4, NodeRole::Neutral, 0.0, &d, &mut rng()).is_err());
        assert!(init_node(0, 1, NodeRole::Neutral, 0.0, &d, &mut rng()).is_err());
        assert!(init_node(0, 4, NodeRole::Neutral, f64::NAN, &d, &mut rng()).is_err());
    }

    #[test]
    fn offset_distribution_validation() {
        assert!(OffsetDistribution::uniform(1.0, -1.0).is_err());
        assert!(OffsetDistribution::uniform(f64::NEG_INFINITY, 1.0).is_err());
        let d = OffsetDistribution::uniform(-1.0, 1.0).unwrap();
        let mut r = rng();
        for _ in 0..1000 {
            let u = d.sample(&mut r);
            assert!((-1.0..=1.0).contains(&u));
        }
        assert!((d.variance() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cancellation_offset_examples() {
        assert!((cancellation_offset(1.0, 0.3) - -1.3).abs() < 1e-15);
        assert_eq!(cancellation_offset(0.0, 0.0), 0.0);
        assert!((cancellation_offset(-0.5, 0.2) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cancellation_offset_requires_private() {
        let n = init_node(0, 3, NodeRole::Neutral, 1.0, &fixed(0.0), &mut rng()).unwrap();
        assert!(matches!(n.cancellation_offset(), Err(Error::ProtocolViolation { .. })));
    }

    #[test]
    fn private_update_before_l_injects() {
        let mut s = private(4.0, 1.0, 0.0, Some(10));
        let (v, u) = s.private_update(2.0, 3, &fixed(0.5), &mut rng()).unwrap();
        assert_eq!((v, u), (3.5, 0.5));
        assert_eq!(s.offset_sum, 0.5);
        // L unknown yet: still injecting.
        let mut s = private(4.0, 1.0, 0.0, None);
        assert_eq!(s.private_update(2.0, 3, &fixed(0.5), &mut rng()).unwrap(), (3.5, 0.5));
    }

    #[test]
    fn private_update_at_l_cancels() {
        let mut s = private(4.0, 1.0, 0.3, Some(7));
        let (v, u) = s.private_update(2.0, 7, &fixed(0.5), &mut rng()).unwrap();
        assert!((v - 1.7).abs() < 1e-15);
        assert!((u - -1.3).abs() < 1e-15);
        assert!(s.cancellation_done);
        assert!(s.outstanding_offset().abs() <= 1e-12);
        // A second cancellation at the same step is refused.
        assert!(matches!(s.private_update(2.0, 7, &fixed(0.5), &mut rng()), Err(Error::ProtocolViolation { .. })));
    }

    #[test]
    fn private_update_after_l_is_plain() {
        let mut s = private(4.0, 1.0, -1.0, Some(7));
        s.cancellation_done = true;
        assert_eq!(s.private_update(2.0, 9, &fixed(0.5), &mut rng()).unwrap(), (3.0, 0.0));
        assert_eq!(s.offset_sum, -1.0);
    }

    #[test]
    fn private_update_requires_private_role() {
        let mut n = init_node(0, 3, NodeRole::Curious, 1.0, &fixed(0.0), &mut rng()).unwrap();
        assert!(n.private_update(1.0, 0, &fixed(0.1), &mut rng()).is_err());
    }

    #[test]
    fn plain_update_examples() {
        let mut n = init_node(0, 3, NodeRole::Neutral, 6.0, &fixed(0.0), &mut rng()).unwrap();
        assert_eq!(n.plain_update(2.0), 4.0);
        n.x_current = 0.25;
        assert_eq!(n.plain_update(0.25), 0.25);
        n.x_current = 0.0;
        assert_eq!(n.plain_update(1.0), 0.5);
        assert_eq!(n.offset_sum, 0.0);
    }

    #[test]
    fn record_contact_three_nodes() {
        // 0-based version of the hand trace: node 0 has met 1, meets 2 at
        // step 7 and is next activated at step 9.
        let schedule = [(2, 0, 1), (5, 1, 2), (7, 2, 0), (8, 1, 2), (9, 0, 1)];
        let mut s = init_node(0, 3, NodeRole::Private, 0.0, &fixed(0.0), &mut rng()).unwrap();
        for &(k, a, b) in &schedule {
            if a == 0 {
                s.record_contact(b, k).unwrap();
            } else if b == 0 {
                s.record_contact(a, k).unwrap();
            }
            if k == 7 {
                assert_eq!(s.contacted.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
                assert_eq!(s.l_step, None);
            }
        }
        assert_eq!(s.l_step, Some(9));
        assert_eq!(reference_l(0, 3, &schedule), Some(9));
    }

    #[test]
    fn record_contact_two_nodes() {
        let mut s = init_node(0, 2, NodeRole::Private, 0.0, &fixed(0.0), &mut rng()).unwrap();
        s.record_contact(1, 0).unwrap();
        assert_eq!(s.l_step, None);
        s.record_contact(1, 3).unwrap();
        assert_eq!(s.l_step, Some(3));
        assert_eq!(reference_l(0, 2, &[(0, 0, 1), (3, 1, 0)]), Some(3));
        // Repeat contacts leave the set and L alone.
        s.record_contact(1, 8).unwrap();
        assert_eq!(s.contacted.len(), 1);
        assert_eq!(s.l_step, Some(3));
    }

    #[test]
    fn record_contact_rejects_self() {
        let mut s = init_node(1, 3, NodeRole::Neutral, 0.0, &fixed(0.0), &mut rng()).unwrap();
        assert!(matches!(s.record_contact(1, 0), Err(Error::InvalidCall(_))));
    }

    #[test]
    fn record_contact_matches_reference_on_random_schedules() {
        use rand::Rng;
        let mut r = rng();
        for _ in 0..200 {
            let n = r.gen_range(2..7);
            let schedule: Vec<(Step, NodeId, NodeId)> = (0..60)
                .map(|k| {
                    let a = r.gen_range(0..n);
                    let b = (a + r.gen_range(1..n)) % n;
                    (k, a, b)
                })
                .collect();
            for node in 0..n {
                let mut s = init_node(node, n, NodeRole::Neutral, 0.0, &fixed(0.0), &mut rng()).unwrap();
                for &(k, a, b) in &schedule {
                    if a == node {
                        s.record_contact(b, k).unwrap();
                    } else if b == node {
                        s.record_contact(a, k).unwrap();
                    }
                }
                assert_eq!(s.l_step, reference_l(node, n, &schedule));
            }
        }
    }

    #[test]
    fn kefayati_transform_examples() {
        assert_eq!(kefayati_transform(5.0, 0.0), 5.0);
        assert!((kefayati_transform(5.0, -0.4) - 4.6).abs() < 1e-15);
    }

    #[test]
    fn kefayati_transform_is_unbiased() {
        // Sample mean of M perturbed copies lands within 3 sigma / sqrt(M).
        let d = OffsetDistribution::default();
        let mut r = rng();
        let m = 10_000;
        let x = 5.0;
        let mean = (0..m).map(|_| kefayati_transform(x, d.sample(&mut r))).sum::<f64>() / m as f64;
        let sigma = d.variance().sqrt();
        assert!((mean - x).abs() < 3.0 * sigma / (m as f64).sqrt());
    }
}
