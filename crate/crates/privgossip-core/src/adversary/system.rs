use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::observe::ObservationLedger;
use crate::error::{Error, Result};
use crate::node::{NodeId, NodeRole, Step};
use crate::sim::Trace;
use crate::stopping::StoppingAction;

/// A hidden quantity the coalition reasons about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    /// `x_j`, the true initial value.
    InitialValue(NodeId),
    /// `u_j`, the start-up offset (pinned to zero for neutral nodes).
    InitialOffset(NodeId),
    /// `u_j[k]`, the offset applied when `j` is activated at step `k`.
    StepOffset(NodeId, Step),
    /// `x'_j[k]` at a point where the coalition lost track of `j`.
    Value(NodeId, Step),
    /// Total offset injected during a run of steps whose participants the
    /// coalition cannot name.
    HiddenInjection { first: Step, last: Step },
}

impl Symbol {
    pub fn owner(&self) -> Option<NodeId> {
        match *self {
            Symbol::InitialValue(j) | Symbol::InitialOffset(j) | Symbol::StepOffset(j, _) | Symbol::Value(j, _) => {
                Some(j)
            }
            Symbol::HiddenInjection { .. } => None,
        }
    }
}

/// `constant + Σ coef · unknown`, unknowns by index into the system.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineForm {
    pub constant: f64,
    pub terms: BTreeMap<usize, f64>,
}

impl AffineForm {
    pub fn constant(c: f64) -> Self {
        AffineForm { constant: c, terms: BTreeMap::new() }
    }

    pub fn unknown(idx: usize) -> Self {
        let mut f = AffineForm::default();
        f.terms.insert(idx, 1.0);
        f
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) {
        let e = self.terms.entry(idx).or_insert(0.0);
        *e += coef;
        if *e == 0.0 {
            self.terms.remove(&idx);
        }
    }

    pub fn add_scaled(&mut self, other: &AffineForm, factor: f64) {
        self.constant += factor * other.constant;
        for (&i, &c) in &other.terms {
            self.add_term(i, factor * c);
        }
    }

    /// Midpoint of two forms.
    pub fn average(a: &AffineForm, b: &AffineForm) -> AffineForm {
        let mut f = AffineForm::default();
        f.add_scaled(a, 0.5);
        f.add_scaled(b, 0.5);
        f
    }

    pub fn eval(&self, assignment: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&i, &c)| c * assignment[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquationKind {
    /// `x'_j[0] = x_j + u_j`.
    Initialization(NodeId),
    /// `u_j = 0` for a neutral node.
    NeutralOffset(NodeId),
    /// The tracked value of `node` equals what it sent at `step`.
    Observation { node: NodeId, step: Step },
    /// Exchanges the coalition cannot see move value around but only
    /// change the total by the offsets injected.
    Conservation { step: Step },
    /// `u_j + Σ_t u_j[t] = 0` once `j` has cancelled.
    Cancellation(NodeId),
    /// The cancellation identity summed over the private nodes whose
    /// individual offsets are partly hidden.
    AggregateCancellation,
}

/// `Σ coef · unknown = constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
    pub kind: EquationKind,
}

impl Equation {
    pub fn residual(&self, assignment: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * assignment[i]).sum::<f64>() - self.constant
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineSystem {
    pub unknowns: Vec<Symbol>,
    pub equations: Vec<Equation>,
    index: BTreeMap<Symbol, usize>,
}

impl AffineSystem {
    pub fn symbol_index(&self, s: &Symbol) -> Option<usize> {
        self.index.get(s).copied()
    }

    fn intern(&mut self, s: Symbol) -> usize {
        if let Some(&i) = self.index.get(&s) {
            return i;
        }
        let i = self.unknowns.len();
        self.unknowns.push(s);
        self.index.insert(s, i);
        i
    }

    /// Adds `form = value`.
    fn push_form_equation(&mut self, form: &AffineForm, value: f64, kind: EquationKind) {
        let terms: Vec<(usize, f64)> = form.terms.iter().map(|(&i, &c)| (i, c)).collect();
        self.equations.push(Equation { terms, constant: value - form.constant, kind });
    }

    /// Dense coefficient row of one equation.
    pub fn row(&self, eq: &Equation) -> Vec<f64> {
        let mut r = vec![0.0; self.unknowns.len()];
        for &(i, c) in &eq.terms {
            r[i] += c;
        }
        r
    }

    /// Sum of the given symbols as a dense functional. Symbols the system
    /// never mentions are skipped, so check [`Self::symbol_index`] first
    /// when that matters.
    pub fn indicator(&self, symbols: &[Symbol]) -> Vec<f64> {
        let mut t = vec![0.0; self.unknowns.len()];
        for s in symbols {
            if let Some(i) = self.symbol_index(s) {
                t[i] += 1.0;
            }
        }
        t
    }

    pub fn equations_mentioning(&self, idx: usize) -> impl Iterator<Item = &Equation> {
        self.equations.iter().filter(move |e| e.terms.iter().any(|&(i, _)| i == idx))
    }
}

struct Track {
    form: AffineForm,
    offsets: Vec<usize>,
    activations: u64,
    activations_exact: bool,
    accounting_complete: bool,
    seen_stopping: bool,
}

struct Block {
    first: Step,
    last: Step,
    forms_sum: AffineForm,
    may_inject: bool,
}

struct Builder<'a> {
    ledger: &'a ObservationLedger,
    system: AffineSystem,
    tracks: BTreeMap<NodeId, Track>,
    block: Option<Block>,
    injections: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn role(&self, j: NodeId) -> NodeRole {
        self.ledger.roles[j]
    }

    fn known_post_l(&self, j: NodeId, k: Step) -> bool {
        self.tracks[&j].seen_stopping
            || (self.ledger.model.knows_l_steps && self.ledger.l_steps.get(&j).is_some_and(|&l| k > l))
    }

    /// `j` might apply a nonzero offset at step `k`.
    fn maybe_offset(&self, j: NodeId, k: Step) -> bool {
        self.role(j) == NodeRole::Private && !self.known_post_l(j, k)
    }

    /// `j` certainly runs the offset rule (not the stopping rule) at `k`.
    fn certainly_offset_phase(&self, j: NodeId, k: Step) -> bool {
        if self.role(j) != NodeRole::Private {
            return false;
        }
        if self.ledger.model.knows_l_steps {
            return self.ledger.l_steps.get(&j).is_none_or(|&l| k <= l);
        }
        // Cancellation needs n - 1 earlier activations, so the first
        // n - 1 activations are always offset-phase.
        let t = &self.tracks[&j];
        t.activations_exact && t.activations + 2 <= self.ledger.n_nodes() as u64
    }

    fn known_value(&self, j: NodeId, k: Step) -> Result<f64> {
        self.ledger
            .value(j, k)
            .ok_or_else(|| Error::MalformedTrace { step: k, reason: format!("ledger lacks the value of node {j}") })
    }

    fn fresh_value(&mut self, j: NodeId, k: Step) -> AffineForm {
        AffineForm::unknown(self.system.intern(Symbol::Value(j, k)))
    }

    fn step_offset(&mut self, j: NodeId, k: Step) -> usize {
        let idx = self.system.intern(Symbol::StepOffset(j, k));
        self.tracks.get_mut(&j).expect("tracked").offsets.push(idx);
        idx
    }

    fn hidden(&self) -> Vec<NodeId> {
        self.tracks.keys().copied().collect()
    }

    fn close_block(&mut self, at: Step) {
        let Some(block) = self.block.take() else { return };
        let mut total = AffineForm::default();
        for j in self.hidden() {
            let v = self.fresh_value(j, at);
            total.add_scaled(&v, 1.0);
            self.tracks.get_mut(&j).expect("tracked").form = v;
        }
        total.add_scaled(&block.forms_sum, -1.0);
        if block.may_inject {
            let h = self.system.intern(Symbol::HiddenInjection { first: block.first, last: block.last });
            self.injections.push(h);
            total.add_term(h, -1.0);
        }
        self.system.push_form_equation(&total, 0.0, EquationKind::Conservation { step: block.last });
    }

    fn unknown_pair_step(&mut self, k: Step) {
        let hidden = self.hidden();
        let injecting: Vec<NodeId> = hidden.iter().copied().filter(|&j| self.maybe_offset(j, k)).collect();
        if self.block.is_none() {
            let mut forms_sum = AffineForm::default();
            for j in &hidden {
                forms_sum.add_scaled(&self.tracks[j].form, 1.0);
            }
            self.block = Some(Block { first: k, last: k, forms_sum, may_inject: false });
        }
        let block = self.block.as_mut().expect("just opened");
        block.last = k;
        block.may_inject |= !injecting.is_empty();
        for j in hidden {
            let t = self.tracks.get_mut(&j).expect("tracked");
            t.activations_exact = false;
            if injecting.contains(&j) {
                t.accounting_complete = false;
            }
        }
    }

    fn observed_step(&mut self, k: Step, a: NodeId, b: NodeId, action: Option<StoppingAction>) -> Result<()> {
        self.close_block(k);
        let mut sent = [0.0; 2];
        for (slot, &e) in [a, b].iter().enumerate() {
            let v = self.known_value(e, k)?;
            sent[slot] = v;
            if let Some(t) = self.tracks.get(&e) {
                let form = t.form.clone();
                self.system.push_form_equation(&form, v, EquationKind::Observation { node: e, step: k });
            }
        }
        let avg = (sent[0] + sent[1]) / 2.0;
        for (slot, &e) in [a, b].iter().enumerate() {
            if !self.tracks.contains_key(&e) {
                continue;
            }
            let form = match action {
                Some(StoppingAction::FlagsSet) => AffineForm::constant(sent[slot]),
                Some(StoppingAction::Averaged) => AffineForm::constant(avg),
                None => {
                    let mut f = AffineForm::constant(avg);
                    if self.maybe_offset(e, k) {
                        let u = self.step_offset(e, k);
                        f.add_term(u, 1.0);
                    }
                    f
                }
            };
            let t = self.tracks.get_mut(&e).expect("tracked");
            t.form = form;
            t.activations += 1;
            if action.is_some() {
                t.seen_stopping = true;
            }
        }
        Ok(())
    }

    fn known_pair_hidden_step(&mut self, k: Step, a: NodeId, b: NodeId) {
        self.close_block(k);
        let offset_phase = self.certainly_offset_phase(a, k) || self.certainly_offset_phase(b, k);
        let injects = [self.maybe_offset(a, k), self.maybe_offset(b, k)];
        if offset_phase {
            let mid = AffineForm::average(&self.tracks[&a].form, &self.tracks[&b].form);
            for (slot, &e) in [a, b].iter().enumerate() {
                let mut f = mid.clone();
                if injects[slot] {
                    let u = self.step_offset(e, k);
                    f.add_term(u, 1.0);
                }
                self.tracks.get_mut(&e).expect("tracked").form = f;
            }
        } else {
            // Either a stopping exchange with an outcome the coalition does
            // not see, or possibly an offset exchange. The pair's total only
            // moves by whatever offsets may have been applied.
            let mut total = AffineForm::default();
            for (slot, &e) in [a, b].iter().enumerate() {
                total.add_scaled(&self.tracks[&e].form, -1.0);
                if injects[slot] {
                    let u = self.step_offset(e, k);
                    total.add_term(u, -1.0);
                }
                let v = self.fresh_value(e, k + 1);
                total.add_scaled(&v, 1.0);
                self.tracks.get_mut(&e).expect("tracked").form = v;
            }
            self.system.push_form_equation(&total, 0.0, EquationKind::Conservation { step: k });
        }
        for e in [a, b] {
            self.tracks.get_mut(&e).expect("tracked").activations += 1;
        }
    }

    fn cancelled(&self, j: NodeId) -> bool {
        if self.ledger.model.knows_l_steps {
            self.ledger.l_steps.contains_key(&j)
        } else {
            self.tracks[&j].seen_stopping
        }
    }
}

/// Builds the coalition's equations by replaying the ledger's skeleton.
///
/// Each non-curious node carries an affine form for its current value.
/// Observations pin the form to the value sent; updates follow the
/// protocol rule the coalition knows applies; a fresh `Value` unknown
/// replaces the form wherever the coalition cannot follow the update.
pub fn build_constraints(ledger: &ObservationLedger) -> Result<AffineSystem> {
    let mut b = Builder {
        ledger,
        system: AffineSystem::default(),
        tracks: BTreeMap::new(),
        block: None,
        injections: Vec::new(),
    };

    for j in ledger.hidden_nodes().collect::<Vec<_>>() {
        let x = b.system.intern(Symbol::InitialValue(j));
        let u = b.system.intern(Symbol::InitialOffset(j));
        let v0 = b.system.intern(Symbol::Value(j, 0));
        b.system.equations.push(Equation {
            terms: vec![(v0, 1.0), (x, -1.0), (u, -1.0)],
            constant: 0.0,
            kind: EquationKind::Initialization(j),
        });
        if ledger.roles[j] != NodeRole::Private {
            b.system.equations.push(Equation {
                terms: vec![(u, 1.0)],
                constant: 0.0,
                kind: EquationKind::NeutralOffset(j),
            });
        }
        b.tracks.insert(
            j,
            Track {
                form: AffineForm::unknown(v0),
                offsets: Vec::new(),
                activations: 0,
                activations_exact: true,
                accounting_complete: true,
                seen_stopping: false,
            },
        );
    }

    for entry in &ledger.event_skeleton {
        let k = entry.step;
        match (entry.pair, entry.observed) {
            (Some((i, j)), true) => b.observed_step(k, i, j, entry.action)?,
            (Some((i, j)), false) => b.known_pair_hidden_step(k, i, j),
            (None, _) => b.unknown_pair_step(k),
        }
    }
    b.close_block(ledger.steps);

    let privates: Vec<NodeId> = b.tracks.keys().copied().filter(|&j| ledger.roles[j] == NodeRole::Private).collect();
    let mut partial: Vec<NodeId> = Vec::new();
    for &j in &privates {
        if !b.cancelled(j) {
            continue;
        }
        let t = &b.tracks[&j];
        if !t.accounting_complete {
            partial.push(j);
            continue;
        }
        let mut terms = vec![(b.system.symbol_index(&Symbol::InitialOffset(j)).expect("interned"), 1.0)];
        terms.extend(t.offsets.iter().map(|&i| (i, 1.0)));
        b.system.equations.push(Equation { terms, constant: 0.0, kind: EquationKind::Cancellation(j) });
    }
    let all_partial_cancelled =
        privates.iter().filter(|&&j| !b.tracks[&j].accounting_complete).all(|&j| b.cancelled(j));
    if !partial.is_empty() && all_partial_cancelled {
        let mut terms: Vec<(usize, f64)> = Vec::new();
        for &j in &partial {
            terms.push((b.system.symbol_index(&Symbol::InitialOffset(j)).expect("interned"), 1.0));
            terms.extend(b.tracks[&j].offsets.iter().map(|&i| (i, 1.0)));
        }
        terms.extend(b.injections.iter().map(|&i| (i, 1.0)));
        b.system.equations.push(Equation { terms, constant: 0.0, kind: EquationKind::AggregateCancellation });
    }
    Ok(b.system)
}

/// True value of every unknown, read off the full run.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub values: Vec<f64>,
}

impl GroundTruth {
    pub fn new(system: &AffineSystem, trace: &Trace, initial_values: &[f64], initial_offsets: &[f64]) -> Result<Self> {
        let n = trace.n_nodes();
        if initial_values.len() != n || initial_offsets.len() != n {
            return Err(Error::InvalidInput("ground truth needs one initial value and offset per node"));
        }
        // history[j] = (step, value after) for every activation of j.
        let mut history: Vec<Vec<(Step, f64)>> = vec![Vec::new(); n];
        for e in &trace.events {
            history[e.initiator].push((e.step, e.value_i_after));
            history[e.responder].push((e.step, e.value_j_after));
        }
        let value_at = |j: NodeId, k: Step| -> f64 {
            let h = &history[j];
            let before = h.partition_point(|&(s, _)| s < k);
            if before == 0 {
                trace.start_values[j]
            } else {
                h[before - 1].1
            }
        };
        let offset_at = |j: NodeId, k: Step| -> f64 {
            trace.events.get(k as usize).and_then(|e| e.side(j)).map_or(0.0, |(_, _, u)| u)
        };
        let values = system
            .unknowns
            .iter()
            .map(|s| match *s {
                Symbol::InitialValue(j) => initial_values[j],
                Symbol::InitialOffset(j) => initial_offsets[j],
                Symbol::StepOffset(j, k) => offset_at(j, k),
                Symbol::Value(j, k) => value_at(j, k),
                Symbol::HiddenInjection { first, last } => {
                    trace.events[first as usize..=last as usize].iter().map(|e| e.offset_i + e.offset_j).sum()
                }
            })
            .collect();
        Ok(GroundTruth { values })
    }

    /// Largest absolute residual of the true assignment over all equations.
    pub fn max_residual(&self, system: &AffineSystem) -> f64 {
        system.equations.iter().map(|e| e.residual(&self.values).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{observe, AttackModel};
    use crate::sim::{run_full, SimConfig};

    fn truth_check(roles: Vec<NodeRole>, seed: u64, model: AttackModel) -> (AffineSystem, GroundTruth) {
        let out = run_full(SimConfig::new(roles.clone()).with_seed(seed)).unwrap();
        let ledger = observe(&out.trace, &roles, model).unwrap();
        let system = build_constraints(&ledger).unwrap();
        let xs: Vec<f64> = out.nodes.iter().map(|s| s.x_initial).collect();
        let us: Vec<f64> = out.nodes.iter().map(|s| s.u_initial).collect();
        let truth = GroundTruth::new(&system, &out.trace, &xs, &us).unwrap();
        (system, truth)
    }

    #[test]
    fn true_assignment_satisfies_every_equation() {
        use NodeRole::*;
        let layouts = [
            vec![Private, Curious, Curious],
            vec![Private, Neutral, Curious, Curious, Curious],
            vec![Private, Private, Curious, Curious],
            vec![Private, Neutral, Neutral, Private, Curious, Curious],
            vec![Neutral, Neutral, Neutral, Curious],
            vec![Private, Private, Private, Neutral, Curious, Curious, Neutral, Curious],
        ];
        let models = [
            AttackModel::default(),
            AttackModel { knows_l_steps: false, ..AttackModel::default() },
            AttackModel { global_schedule: true, ..AttackModel::default() },
            AttackModel { knows_l_steps: false, global_schedule: true, eavesdrop: false },
            AttackModel { eavesdrop: true, ..AttackModel::default() },
        ];
        for roles in &layouts {
            for model in models {
                for seed in 0..5 {
                    let (system, truth) = truth_check(roles.clone(), seed, model);
                    let r = truth.max_residual(&system);
                    assert!(r < 1e-9, "{roles:?} {model:?} seed {seed}: residual {r}");
                }
            }
        }
    }

    #[test]
    fn never_observed_neutral_only_gets_structural_equations() {
        use NodeRole::*;
        // Node 3 never meets the curious node 0.
        let roles = vec![Curious, Private, Private, Neutral];
        let mut t = Trace { start_values: vec![0.1, 0.2, 0.3, 0.4], events: Vec::new() };
        let pairs = [(0, 1), (1, 2), (0, 2), (2, 3), (1, 3)];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            t.events.push(crate::sim::ExchangeEvent {
                step: k as Step,
                initiator: i,
                responder: j,
                value_i_before: 0.0,
                value_j_before: 0.0,
                value_i_after: 0.0,
                value_j_after: 0.0,
                offset_i: 0.0,
                offset_j: 0.0,
                stopping_action: None,
            });
        }
        let ledger = observe(&t, &roles, AttackModel::default()).unwrap();
        let system = build_constraints(&ledger).unwrap();
        let x3 = system.symbol_index(&Symbol::InitialValue(3)).unwrap();
        let u3 = system.symbol_index(&Symbol::InitialOffset(3)).unwrap();
        let kinds: Vec<EquationKind> = system.equations_mentioning(u3).map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EquationKind::Initialization(3), EquationKind::NeutralOffset(3)]);
        assert_eq!(system.equations_mentioning(x3).count(), 1);
    }

    #[test]
    fn single_private_node_offsets_are_chained() {
        use NodeRole::*;
        let (system, _) = truth_check(vec![Private, Curious, Curious], 4, AttackModel::default());
        let kinds: Vec<EquationKind> = system.equations.iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&EquationKind::Cancellation(0)));
        assert!(kinds.iter().filter(|k| matches!(k, EquationKind::Observation { node: 0, .. })).count() >= 3);
        // Every pre-cancellation activation of node 0 has an offset unknown.
        assert!(system.unknowns.iter().any(|s| matches!(s, Symbol::StepOffset(0, _))));
    }

    #[test]
    fn pair_exchange_mixes_two_offsets() {
        use NodeRole::*;
        // Two private nodes: some step pairs them, and both offsets of that
        // step show up only in the forms that follow it.
        let (system, _) = truth_check(vec![Private, Private, Curious, Curious], 1, AttackModel::default());
        let joint = system.unknowns.iter().filter_map(|s| match s {
            Symbol::StepOffset(0, k) => Some(*k),
            _ => None,
        });
        let shared: Vec<Step> = joint.filter(|k| system.symbol_index(&Symbol::StepOffset(1, *k)).is_some()).collect();
        assert!(!shared.is_empty());
        let k = shared[0];
        let u0 = system.symbol_index(&Symbol::StepOffset(0, k)).unwrap();
        let u1 = system.symbol_index(&Symbol::StepOffset(1, k)).unwrap();
        assert!(system.equations.iter().any(|e| {
            let has = |i| e.terms.iter().any(|&(t, _)| t == i);
            matches!(e.kind, EquationKind::Observation { .. }) && (has(u0) || has(u1))
        }));
    }
}
