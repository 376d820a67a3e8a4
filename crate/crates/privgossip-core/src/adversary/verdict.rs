use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::observe::observe;
use super::solve::{Elimination, Identifiability};
use super::system::{build_constraints, AffineSystem, Symbol};
use super::AttackModel;
use crate::error::Result;
use crate::node::{NodeId, NodeRole};
use crate::sim::Trace;

/// Largest group searched for a recoverable sum of initial values.
pub const MAX_SUM_SET: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// The coalition can compute the node's initial value.
    Exact(f64),
    /// The coalition can compute the sum of these nodes' initial values,
    /// but none of them individually.
    SumOnly { members: Vec<NodeId>, sum: f64 },
    /// No functional of size at most [`MAX_SUM_SET`] containing the node is
    /// determined. `larger_group` names a bigger connected group whose sum
    /// is, if there is one.
    Protected { larger_group: Option<(Vec<NodeId>, f64)> },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Exact(_) => "EXACT",
            Outcome::SumOnly { .. } => "SUM_ONLY",
            Outcome::Protected { .. } => "PROTECTED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyVerdict {
    pub node: NodeId,
    pub outcome: Outcome,
}

/// Non-curious nodes linked through at least one shared equation.
fn coupling(system: &AffineSystem) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut graph: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for s in &system.unknowns {
        if let Symbol::InitialValue(j) = s {
            graph.entry(*j).or_default();
        }
    }
    for eq in &system.equations {
        let owners: BTreeSet<NodeId> = eq.terms.iter().filter_map(|&(i, _)| system.unknowns[i].owner()).collect();
        for &a in &owners {
            for &b in &owners {
                if a != b {
                    graph.entry(a).or_default().insert(b);
                }
            }
        }
    }
    graph
}

fn connected(set: &[NodeId], graph: &BTreeMap<NodeId, BTreeSet<NodeId>>) -> bool {
    let Some(&start) = set.first() else { return false };
    let mut seen = vec![start];
    let mut stack = vec![start];
    while let Some(a) = stack.pop() {
        for &b in set {
            if !seen.contains(&b) && graph.get(&a).is_some_and(|n| n.contains(&b)) {
                seen.push(b);
                stack.push(b);
            }
        }
    }
    seen.len() == set.len()
}

/// All `k`-subsets of `items` in lexicographic order.
fn combinations(items: &[NodeId], k: usize) -> Vec<Vec<NodeId>> {
    fn go(items: &[NodeId], k: usize, start: usize, cur: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            go(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, k, 0, &mut Vec::new(), &mut out);
    out
}

fn component(of: NodeId, within: &[NodeId], graph: &BTreeMap<NodeId, BTreeSet<NodeId>>) -> Vec<NodeId> {
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    seen.insert(of);
    let mut stack = vec![of];
    while let Some(a) = stack.pop() {
        for &b in within {
            if !seen.contains(&b) && graph.get(&a).is_some_and(|n| n.contains(&b)) {
                seen.insert(b);
                stack.push(b);
            }
        }
    }
    seen.into_iter().collect()
}

/// Verdict for every non-curious node of `system`, ascending by id.
pub fn verdicts_for_system(system: &AffineSystem, elimination: &Elimination) -> Vec<PrivacyVerdict> {
    let hidden: Vec<NodeId> = system
        .unknowns
        .iter()
        .filter_map(|s| match s {
            Symbol::InitialValue(j) => Some(*j),
            _ => None,
        })
        .collect();
    let sum_of = |set: &[NodeId]| -> Identifiability {
        let symbols: Vec<Symbol> = set.iter().map(|&j| Symbol::InitialValue(j)).collect();
        elimination.query(&system.indicator(&symbols))
    };
    let exact: BTreeMap<NodeId, f64> = hidden.iter().filter_map(|&j| sum_of(&[j]).value().map(|v| (j, v))).collect();
    let undetermined: Vec<NodeId> = hidden.iter().copied().filter(|j| !exact.contains_key(j)).collect();
    let graph = coupling(system);

    hidden
        .iter()
        .map(|&j| {
            if let Some(&v) = exact.get(&j) {
                return PrivacyVerdict { node: j, outcome: Outcome::Exact(v) };
            }
            let others: Vec<NodeId> = undetermined.iter().copied().filter(|&o| o != j).collect();
            for size in 2..=MAX_SUM_SET.min(undetermined.len()) {
                for mut set in combinations(&others, size - 1) {
                    set.push(j);
                    set.sort_unstable();
                    if !connected(&set, &graph) {
                        continue;
                    }
                    if let Some(sum) = sum_of(&set).value() {
                        return PrivacyVerdict { node: j, outcome: Outcome::SumOnly { members: set, sum } };
                    }
                }
            }
            let group = component(j, &undetermined, &graph);
            let larger_group =
                if group.len() > MAX_SUM_SET { sum_of(&group).value().map(|v| (group, v)) } else { None };
            PrivacyVerdict { node: j, outcome: Outcome::Protected { larger_group } }
        })
        .collect()
}

/// Runs the whole attack on a finished run.
pub fn privacy_verdicts(trace: &Trace, roles: &[NodeRole], model: AttackModel) -> Result<Vec<PrivacyVerdict>> {
    let ledger = observe(trace, roles, model)?;
    let system = build_constraints(&ledger)?;
    let elimination = Elimination::new(&system)?;
    Ok(verdicts_for_system(&system, &elimination))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_full, SimConfig};
    use NodeRole::*;

    #[test]
    fn lexicographic_combinations() {
        assert_eq!(combinations(&[1, 3, 5], 2), vec![vec![1, 3], vec![1, 5], vec![3, 5]]);
        assert_eq!(combinations(&[1, 3], 0), vec![Vec::<NodeId>::new()]);
    }

    #[test]
    fn no_coalition_protects_everyone() {
        let out = run_full(SimConfig::new(vec![Private, Neutral, Private]).with_seed(3)).unwrap();
        let v = privacy_verdicts(&out.trace, &[Private, Neutral, Private], AttackModel::default()).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|p| p.outcome == Outcome::Protected { larger_group: None }));
    }

    #[test]
    fn lone_private_node_is_exposed() {
        for seed in 0..10 {
            let roles = vec![Private, Curious, Curious, Curious];
            let out = run_full(SimConfig::new(roles.clone()).with_seed(seed)).unwrap();
            let v = privacy_verdicts(&out.trace, &roles, AttackModel::default()).unwrap();
            match v[0].outcome {
                Outcome::Exact(x) => assert!((x - out.nodes[0].x_initial).abs() < 1e-6),
                ref o => panic!("seed {seed}: {o:?}"),
            }
        }
    }

    #[test]
    fn neutral_first_contact_with_coalition_is_exact() {
        // One curious node among neutrals: a neutral whose first exchange is
        // with the curious node, before any exchange the coalition cannot
        // see, sends its initial value in the clear.
        for seed in 0..30 {
            let roles = vec![Curious, Neutral, Neutral, Neutral, Neutral];
            let out = run_full(SimConfig::new(roles.clone()).with_seed(seed)).unwrap();
            let v = privacy_verdicts(&out.trace, &roles, AttackModel::default()).unwrap();
            let first_hidden = out.trace.events.iter().position(|e| !e.involves(0)).unwrap_or(usize::MAX);
            for j in 1..5 {
                let first = out.trace.events.iter().position(|e| e.involves(j)).unwrap();
                if out.trace.events[first].involves(0) && first < first_hidden {
                    assert_eq!(v[j - 1].outcome, Outcome::Exact(out.nodes[j].x_initial), "seed {seed} node {j}");
                }
            }
        }
    }

    #[test]
    fn neutral_first_contact_with_global_schedule() {
        let model = AttackModel { global_schedule: true, ..AttackModel::default() };
        for seed in 0..30 {
            let roles = vec![Curious, Neutral, Neutral, Neutral, Neutral];
            let out = run_full(SimConfig::new(roles.clone()).with_seed(seed)).unwrap();
            let v = privacy_verdicts(&out.trace, &roles, model).unwrap();
            for j in 1..5 {
                let first = out.trace.events.iter().find(|e| e.involves(j)).unwrap();
                if first.involves(0) {
                    assert_eq!(v[j - 1].outcome, Outcome::Exact(out.nodes[j].x_initial), "seed {seed} node {j}");
                }
            }
        }
    }
}
