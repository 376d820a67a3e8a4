//! Seeded discrete-event gossip simulator.
//!
//! One step is one pair activation on the complete graph. Every run owns a
//! single `ChaCha8Rng` seeded with `SimConfig::seed`, and draws from it in
//! this fixed order:
//!
//! 1. initial values, one per node in id order (only for
//!    [`InitialValues::Uniform`]);
//! 2. one initial offset per private node, in id order (full protocol and
//!    baseline modes only);
//! 3. per step: the initiator (uniform over non-passive nodes), then the
//!    responder (uniform over the other `n - 1` nodes), then the
//!    initiator's offset, then the responder's offset, each only if that
//!    endpoint injects at this step. Forced pairs skip the two selection
//!    draws.
//!
//! Identical configs therefore give identical traces.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::node::{init_node, NodeId, NodeRole, NodeState, OffsetDistribution, Phase, Step};
use crate::stopping::{epsilon_consensus_oracle, is_passive, stopping_exchange, Epsilon, StoppingAction};

/// The generator behind every run.
pub type SimRng = ChaCha8Rng;

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Offsets, cancellation and distributed stopping.
    FullProtocol,
    /// Every node behaves as neutral.
    PlainGossip,
    /// Private nodes perturb their start value once and never correct it.
    KefayatiBaseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FullProtocol => "full_protocol",
            Mode::PlainGossip => "plain_gossip",
            Mode::KefayatiBaseline => "kefayati_baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full_protocol" => Some(Mode::FullProtocol),
            "plain_gossip" => Some(Mode::PlainGossip),
            "kefayati_baseline" => Some(Mode::KefayatiBaseline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialValues {
    Explicit(Vec<f64>),
    /// Independent draws, uniform on `[low, high]`.
    Uniform {
        low: f64,
        high: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_nodes: usize,
    pub roles: Vec<NodeRole>,
    pub initial_values: InitialValues,
    pub epsilon: Epsilon,
    pub offset_dist: OffsetDistribution,
    pub seed: u64,
    pub max_steps: u64,
    pub mode: Mode,
    /// Pairs `(initiator, responder)` activated first, in order, before
    /// random scheduling takes over.
    pub forced_first_pairs: Vec<(NodeId, NodeId)>,
}

impl SimConfig {
    /// Full-protocol config with uniform `[0, 1]` start values, offsets
    /// uniform on `[-1, 1]`, `ε = 1e-4` and the default step cap.
    pub fn new(roles: Vec<NodeRole>) -> Self {
        SimConfig {
            n_nodes: roles.len(),
            roles,
            initial_values: InitialValues::Uniform { low: 0.0, high: 1.0 },
            epsilon: Epsilon::new(1e-4).expect("positive literal"),
            offset_dist: OffsetDistribution::default(),
            seed: 0,
            max_steps: DEFAULT_MAX_STEPS,
            mode: Mode::FullProtocol,
            forced_first_pairs: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::InvalidConfig(format!("n_nodes must be at least 2, got {}", self.n_nodes)));
        }
        if self.roles.len() != self.n_nodes {
            return Err(Error::InvalidConfig(format!("{} roles given for {} nodes", self.roles.len(), self.n_nodes)));
        }
        if self.max_steps < 1 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        match &self.initial_values {
            InitialValues::Explicit(v) => {
                if v.len() != self.n_nodes {
                    return Err(Error::InvalidConfig(format!(
                        "{} initial values given for {} nodes",
                        v.len(),
                        self.n_nodes
                    )));
                }
                if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                    return Err(Error::InvalidConfig(format!("initial value {bad} is not finite")));
                }
            }
            InitialValues::Uniform { low, high } => {
                if !low.is_finite() || !high.is_finite() || low > high {
                    return Err(Error::InvalidConfig(format!(
                        "initial value range [{low}, {high}] is not a finite interval"
                    )));
                }
            }
        }
        for &(a, b) in &self.forced_first_pairs {
            if a >= self.n_nodes || b >= self.n_nodes || a == b {
                return Err(Error::InvalidConfig(format!("forced pair ({a}, {b}) is not a valid pair")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeEvent {
    pub step: Step,
    pub initiator: NodeId,
    pub responder: NodeId,
    pub value_i_before: f64,
    pub value_j_before: f64,
    pub value_i_after: f64,
    pub value_j_after: f64,
    pub offset_i: f64,
    pub offset_j: f64,
    /// `None` for offset-phase exchanges, which bypass the stopping rule.
    pub stopping_action: Option<StoppingAction>,
}

impl ExchangeEvent {
    pub fn involves(&self, node: NodeId) -> bool {
        self.initiator == node || self.responder == node
    }

    /// `(value before, value after, offset)` for one endpoint.
    pub fn side(&self, node: NodeId) -> Option<(f64, f64, f64)> {
        if node == self.initiator {
            Some((self.value_i_before, self.value_i_after, self.offset_i))
        } else if node == self.responder {
            Some((self.value_j_before, self.value_j_after, self.offset_j))
        } else {
            None
        }
    }

    pub fn peer_of(&self, node: NodeId) -> Option<NodeId> {
        if node == self.initiator {
            Some(self.responder)
        } else if node == self.responder {
            Some(self.initiator)
        } else {
            None
        }
    }
}

/// Full ordered event log of a run, plus every node's value at step 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub start_values: Vec<f64>,
    pub events: Vec<ExchangeEvent>,
}

impl Trace {
    pub fn n_nodes(&self) -> usize {
        self.start_values.len()
    }

    /// Network-wide sum of values after each step, starting with step 0.
    pub fn value_sums(&self) -> Vec<f64> {
        let mut values = self.start_values.clone();
        let mut sums = Vec::with_capacity(self.events.len() + 1);
        sums.push(values.iter().sum());
        for e in &self.events {
            values[e.initiator] = e.value_i_after;
            values[e.responder] = e.value_j_after;
            sums.push(values.iter().sum());
        }
        sums
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub final_values: Vec<f64>,
    pub steps_executed: u64,
    /// Mean of the true initial values. For analysis only.
    pub true_mean: f64,
    pub max_abs_error: f64,
    /// All nodes passive, as opposed to stopping at the step cap.
    pub terminated: bool,
    pub l_steps: Vec<Option<Step>>,
}

/// Picks an initiator uniformly among non-passive nodes and a responder
/// uniformly among all other nodes. `None` means every node is passive.
pub fn select_pair<R: Rng + ?Sized>(states: &[NodeState], rng: &mut R) -> Option<(NodeId, NodeId)> {
    let active: Vec<NodeId> = states.iter().filter(|s| !is_passive(s)).map(|s| s.id).collect();
    if active.is_empty() {
        return None;
    }
    let initiator = active[rng.gen_range(0..active.len())];
    let offset = rng.gen_range(1..states.len());
    let responder = (initiator + offset) % states.len();
    Some((initiator, responder))
}

/// A run in progress.
#[derive(Debug, Clone)]
pub struct World {
    config: SimConfig,
    nodes: Vec<NodeState>,
    rng: SimRng,
    step: Step,
    forced: VecDeque<(NodeId, NodeId)>,
    /// Non-passive node ids, ascending.
    active: Vec<NodeId>,
}

impl World {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SimRng::seed_from_u64(config.seed);
        let n = config.n_nodes;
        let xs: Vec<f64> = match &config.initial_values {
            InitialValues::Explicit(v) => v.clone(),
            InitialValues::Uniform { low, high } => {
                (0..n).map(|_| if low == high { *low } else { rng.gen_range(*low..=*high) }).collect()
            }
        };
        let mut nodes = Vec::with_capacity(n);
        for (id, (&role, &x)) in config.roles.iter().zip(&xs).enumerate() {
            let node = match config.mode {
                Mode::FullProtocol => init_node(id, n, role, x, &config.offset_dist, &mut rng)?,
                Mode::KefayatiBaseline => {
                    // Same start as the full protocol; the node simply never
                    // cancels its offset.
                    let mut s = init_node(id, n, role, x, &config.offset_dist, &mut rng)?;
                    s.x_current = crate::node::kefayati_transform(x, s.u_initial);
                    s
                }
                Mode::PlainGossip => {
                    let degenerate = OffsetDistribution::uniform(0.0, 0.0)?;
                    init_node(id, n, role, x, &degenerate, &mut rng)?
                }
            };
            nodes.push(node);
        }
        let forced = config.forced_first_pairs.iter().copied().collect();
        let active = nodes.iter().filter(|s| !is_passive(s)).map(|s| s.id).collect();
        Ok(World { config, nodes, rng, step: 0, forced, active })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn steps_executed(&self) -> Step {
        self.step
    }

    pub fn all_passive(&self) -> bool {
        self.active.is_empty()
    }

    /// Same draws as [`select_pair`], from the cached active set.
    fn next_pair(&mut self) -> Option<(NodeId, NodeId)> {
        if self.active.is_empty() {
            return None;
        }
        let n = self.nodes.len();
        let initiator = self.active[self.rng.gen_range(0..self.active.len())];
        let responder = (initiator + self.rng.gen_range(1..n)) % n;
        Some((initiator, responder))
    }

    fn refresh_active(&mut self, node: NodeId) {
        let passive = is_passive(&self.nodes[node]);
        match (self.active.binary_search(&node), passive) {
            (Ok(pos), true) => {
                self.active.remove(pos);
            }
            (Err(pos), false) => self.active.insert(pos, node),
            _ => {}
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.nodes.iter().map(|s| s.x_current).collect()
    }

    /// Whether `node` follows the offset protocol at step `k`.
    fn in_offset_phase(&self, node: NodeId, k: Step) -> bool {
        self.config.mode == Mode::FullProtocol && self.nodes[node].phase(k) != Phase::Stopping
    }

    /// Executes one activation. `None` when every node is passive.
    pub fn step(&mut self) -> Result<Option<ExchangeEvent>> {
        let pair = match self.forced.pop_front() {
            Some(p) => Some(p),
            None => self.next_pair(),
        };
        let Some((i, j)) = pair else {
            return Ok(None);
        };
        let k = self.step;
        self.nodes[i].record_contact(j, k)?;
        self.nodes[j].record_contact(i, k)?;

        let (vi, vj) = (self.nodes[i].x_current, self.nodes[j].x_current);
        let event = if self.in_offset_phase(i, k) || self.in_offset_phase(j, k) {
            // Offset-phase exchange: each endpoint applies its own update
            // rule to the pre-exchange values. Flags are not raised here,
            // and any flags held by an endpoint are stale once its value
            // moves.
            let (ai, oi) = self.offset_phase_update(i, vj, k)?;
            let (aj, oj) = self.offset_phase_update(j, vi, k)?;
            self.nodes[i].reset_flags();
            self.nodes[j].reset_flags();
            ExchangeEvent {
                step: k,
                initiator: i,
                responder: j,
                value_i_before: vi,
                value_j_before: vj,
                value_i_after: ai,
                value_j_after: aj,
                offset_i: oi,
                offset_j: oj,
                stopping_action: None,
            }
        } else {
            let (a, b) = pair_mut(&mut self.nodes, i, j);
            let outcome = stopping_exchange(a, b, self.config.epsilon)?;
            ExchangeEvent {
                step: k,
                initiator: i,
                responder: j,
                value_i_before: vi,
                value_j_before: vj,
                value_i_after: self.nodes[i].x_current,
                value_j_after: self.nodes[j].x_current,
                offset_i: 0.0,
                offset_j: 0.0,
                stopping_action: Some(outcome.action),
            }
        };
        self.refresh_active(i);
        self.refresh_active(j);
        self.step += 1;
        Ok(Some(event))
    }

    fn offset_phase_update(&mut self, node: NodeId, peer_value: f64, k: Step) -> Result<(f64, f64)> {
        if self.in_offset_phase(node, k) {
            let dist = self.config.offset_dist;
            self.nodes[node].private_update(peer_value, k, &dist, &mut self.rng)
        } else {
            Ok((self.nodes[node].plain_update(peer_value), 0.0))
        }
    }

    /// Steps until every node is passive or the cap is reached.
    /// `on_event` sees every event in order.
    pub fn run_with<F: FnMut(&ExchangeEvent)>(&mut self, mut on_event: F) -> Result<SimResult> {
        while !self.all_passive() && self.step < self.config.max_steps {
            match self.step()? {
                Some(e) => on_event(&e),
                None => break,
            }
        }
        Ok(self.result())
    }

    pub fn result(&self) -> SimResult {
        let n = self.nodes.len() as f64;
        let true_mean = self.nodes.iter().map(|s| s.x_initial).sum::<f64>() / n;
        let final_values = self.values();
        let max_abs_error = final_values.iter().map(|v| (v - true_mean).abs()).fold(0.0, f64::max);
        SimResult {
            final_values,
            steps_executed: self.step,
            true_mean,
            max_abs_error,
            terminated: self.all_passive(),
            l_steps: self.nodes.iter().map(|s| s.l_step).collect(),
        }
    }
}

fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert!(i != j);
    if i < j {
        let (lo, hi) = v.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

/// Everything a run produces: summary, trace and final node states.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: SimResult,
    pub trace: Trace,
    pub nodes: Vec<NodeState>,
}

pub fn run_full(config: SimConfig) -> Result<RunOutput> {
    let mut world = World::new(config)?;
    let start_values = world.values();
    let mut events = Vec::new();
    let result = world.run_with(|e| events.push(e.clone()))?;
    Ok(RunOutput { result, trace: Trace { start_values, events }, nodes: world.nodes })
}

pub fn run(config: SimConfig) -> Result<(SimResult, Trace)> {
    let out = run_full(config)?;
    Ok((out.result, out.trace))
}

/// Runs without keeping the trace.
pub fn run_untraced(config: SimConfig) -> Result<SimResult> {
    World::new(config)?.run_with(|_| {})
}

/// Outcome of one run, as reported by a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub max_abs_error: f64,
    pub terminated: bool,
    /// Mean of the final values minus the true mean: where the network
    /// actually settled.
    pub consensus_error: f64,
    /// Definition-level check on the final values.
    pub within_epsilon: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub n_nodes: usize,
    pub mode: Mode,
    pub epsilon: f64,
    pub outcome: Result<RunSummary>,
}

/// Aggregates over the rows sharing `(n_nodes, mode)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub n_nodes: usize,
    pub mode: Mode,
    pub runs: usize,
    pub failed: usize,
    pub terminated: usize,
    pub median_steps: u64,
    pub mean_consensus_error: f64,
    /// Mean squared consensus error, i.e. the spread of the consensus value
    /// around the true mean.
    pub mean_square_consensus_error: f64,
    /// Sample variance of the consensus error around its own mean.
    pub consensus_error_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub groups: Vec<GroupSummary>,
}

pub fn sweep_row(config: SimConfig) -> SweepRow {
    let (seed, n_nodes, mode, epsilon) = (config.seed, config.n_nodes, config.mode, config.epsilon.value());
    let eps = config.epsilon;
    let outcome = run_untraced(config).and_then(|r| {
        let mean = r.final_values.iter().sum::<f64>() / r.final_values.len() as f64;
        Ok(RunSummary {
            steps: r.steps_executed,
            max_abs_error: r.max_abs_error,
            terminated: r.terminated,
            consensus_error: mean - r.true_mean,
            within_epsilon: epsilon_consensus_oracle(&r.final_values, r.true_mean, eps)?,
        })
    });
    SweepRow { seed, n_nodes, mode, epsilon, outcome }
}

/// Groups rows by `(n_nodes, mode)` in first-seen order.
pub fn summarize(rows: Vec<SweepRow>) -> SweepSummary {
    let mut keys: Vec<(usize, Mode)> = Vec::new();
    for r in &rows {
        if !keys.contains(&(r.n_nodes, r.mode)) {
            keys.push((r.n_nodes, r.mode));
        }
    }
    let groups = keys
        .into_iter()
        .map(|(n_nodes, mode)| {
            let members: Vec<&SweepRow> = rows.iter().filter(|r| r.n_nodes == n_nodes && r.mode == mode).collect();
            let ok: Vec<&RunSummary> = members.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let mut steps: Vec<u64> = ok.iter().map(|s| s.steps).collect();
            steps.sort_unstable();
            let m = ok.len().max(1) as f64;
            let mean = ok.iter().map(|s| s.consensus_error).sum::<f64>() / m;
            let mean_sq = ok.iter().map(|s| s.consensus_error * s.consensus_error).sum::<f64>() / m;
            let var = if ok.len() > 1 {
                ok.iter().map(|s| (s.consensus_error - mean) * (s.consensus_error - mean)).sum::<f64>()
                    / (ok.len() - 1) as f64
            } else {
                0.0
            };
            GroupSummary {
                n_nodes,
                mode,
                runs: members.len(),
                failed: members.len() - ok.len(),
                terminated: ok.iter().filter(|s| s.terminated).count(),
                median_steps: steps.get(steps.len() / 2).copied().unwrap_or(0),
                mean_consensus_error: mean,
                mean_square_consensus_error: mean_sq,
                consensus_error_variance: var,
            }
        })
        .collect();
    SweepSummary { rows, groups }
}

/// Runs every config independently. Failed runs are recorded in their row
/// and never abort the sweep.
pub fn run_sweep(configs: &[SimConfig]) -> Result<SweepSummary> {
    if configs.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one config"));
    }
    Ok(summarize(configs.iter().cloned().map(sweep_row).collect()))
}
