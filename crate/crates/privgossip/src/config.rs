//! Experiment config files: flat TOML key/value pairs.
//!
//! ```toml
//! n_nodes = 20
//! roles = "private:20"
//! epsilon = 0.0001
//! seed = 7
//! ```
//!
//! Overrides use the same syntax, one `KEY=VALUE` each, and are applied
//! after the file. A value that is not valid TOML is taken as a bare
//! string, so `--set mode=plain_gossip` works unquoted.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use privgossip_core::adversary::AttackModel;
use privgossip_core::sim::{InitialValues, DEFAULT_MAX_STEPS};
use privgossip_core::{Epsilon, Mode, NodeId, NodeRole, OffsetDistribution, SimConfig};
use toml::{Spanned, Value};

/// Where a key was set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(l) => write!(f, "line {l}"),
            Origin::Override => f.write_str("--set"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("malformed override `{0}`, expected KEY=VALUE")]
    BadOverride(String),
    #[error("unknown key `{key}` ({origin})")]
    UnknownKey { key: String, origin: Origin },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}` ({origin}): expected {expected}")]
    Type { key: &'static str, origin: Origin, expected: &'static str },
    #[error("key `{key}` ({origin}): {message}")]
    Invalid { key: &'static str, origin: Origin, message: String },
}

/// How roles are assigned to node ids.
#[derive(Debug, Clone, PartialEq)]
pub enum RoleSpec {
    /// `(role, count)` blocks in id order; a `None` count takes the rest.
    Counts(Vec<(NodeRole, Option<usize>)>),
    PerNode(Vec<NodeRole>),
}

impl RoleSpec {
    pub fn parse(s: &str) -> Option<Self> {
        let mut blocks = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (role, count) = part.split_once(':')?;
            let role = NodeRole::parse(role.trim())?;
            let count = match count.trim() {
                "*" => None,
                c => Some(c.parse().ok()?),
            };
            blocks.push((role, count));
        }
        let wildcards = blocks.iter().filter(|(_, c)| c.is_none()).count();
        (!blocks.is_empty() && wildcards <= 1).then_some(RoleSpec::Counts(blocks))
    }

    pub fn resolve(&self, n_nodes: usize) -> Result<Vec<NodeRole>, String> {
        match self {
            RoleSpec::PerNode(r) if r.len() == n_nodes => Ok(r.clone()),
            RoleSpec::PerNode(r) => Err(format!("{} roles listed for {} nodes", r.len(), n_nodes)),
            RoleSpec::Counts(blocks) => {
                let fixed: usize = blocks.iter().filter_map(|(_, c)| *c).sum();
                let has_rest = blocks.iter().any(|(_, c)| c.is_none());
                if fixed > n_nodes || (!has_rest && fixed != n_nodes) {
                    return Err(format!("role counts add up to {fixed}, not {n_nodes}"));
                }
                let mut roles = Vec::with_capacity(n_nodes);
                for &(role, c) in blocks {
                    roles.extend(std::iter::repeat_n(role, c.unwrap_or(n_nodes - fixed)));
                }
                Ok(roles)
            }
        }
    }

    fn to_toml(&self) -> String {
        match self {
            RoleSpec::Counts(blocks) => {
                let parts: Vec<String> = blocks
                    .iter()
                    .map(|(r, c)| match c {
                        Some(c) => format!("{}:{c}", r.as_str()),
                        None => format!("{}:*", r.as_str()),
                    })
                    .collect();
                format!("\"{}\"", parts.join(","))
            }
            RoleSpec::PerNode(r) => {
                let parts: Vec<String> = r.iter().map(|r| format!("\"{}\"", r.as_str())).collect();
                format!("[{}]", parts.join(", "))
            }
        }
    }
}

/// Everything a config file can say: the simulation itself plus attack
/// and sweep settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub role_spec: RoleSpec,
    pub attack: AttackModel,
    /// Nodes that must not receive an EXACT verdict.
    pub expect_protected: Vec<NodeId>,
    /// Half-open seed range for sweeps.
    pub sweep_seeds: Option<(u64, u64)>,
    /// Network sizes for sweeps; empty means `n_nodes` only.
    pub sweep_n_nodes: Vec<usize>,
}

impl ExperimentConfig {
    /// The simulation at a different size and seed, roles re-resolved.
    pub fn sim_for(&self, n_nodes: usize, seed: u64) -> Result<SimConfig, String> {
        let mut sim = self.sim.clone();
        if n_nodes != sim.n_nodes {
            if matches!(sim.initial_values, InitialValues::Explicit(_)) {
                return Err("explicit initial_values cannot be resized".into());
            }
            sim.roles = self.role_spec.resolve(n_nodes)?;
            sim.n_nodes = n_nodes;
        }
        sim.seed = seed;
        sim.validate().map_err(|e| e.to_string())?;
        Ok(sim)
    }
}

const KEYS: &[&str] = &[
    "n_nodes",
    "roles",
    "initial_values",
    "initial_low",
    "initial_high",
    "epsilon",
    "offset_low",
    "offset_high",
    "seed",
    "max_steps",
    "mode",
    "forced_first_pairs",
    "expect_protected",
    "attack_knows_l_steps",
    "attack_global_schedule",
    "attack_eavesdrop",
    "sweep_seeds",
    "sweep_n_nodes",
];

type Entries = BTreeMap<String, (Value, Origin)>;

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_entries(text: &str, origin_of: impl Fn(usize) -> Origin) -> Result<Entries, ConfigError> {
    let table: BTreeMap<Spanned<String>, Spanned<Value>> = toml::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let mut out = Entries::new();
    for (k, v) in table {
        let origin = origin_of(k.span().start);
        let key = k.into_inner();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key, origin });
        }
        out.insert(key, (v.into_inner(), origin));
    }
    Ok(out)
}

fn parse_override(s: &str) -> Result<Entries, ConfigError> {
    let (key, value) = s.split_once('=').ok_or_else(|| ConfigError::BadOverride(s.into()))?;
    let key = key.trim();
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(ConfigError::BadOverride(s.into()));
    }
    let value = value.trim();
    parse_entries(&format!("{key} = {value}"), |_| Origin::Override).or_else(|e| match e {
        ConfigError::Syntax { .. } => {
            let mut m = Entries::new();
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { key: key.into(), origin: Origin::Override });
            }
            m.insert(key.into(), (Value::String(value.into()), Origin::Override));
            Ok(m)
        }
        e => Err(e),
    })
}

struct Reader {
    entries: Entries,
}

impl Reader {
    fn get(&self, key: &'static str) -> Option<(&Value, Origin)> {
        self.entries.get(key).map(|(v, o)| (v, *o))
    }

    fn origin(&self, key: &'static str) -> Origin {
        self.get(key).map_or(Origin::Line(0), |(_, o)| o)
    }

    fn int(&self, key: &'static str) -> Result<Option<i64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Integer(i), _)) => Ok(Some(*i)),
            Some((_, origin)) => Err(ConfigError::Type { key, origin, expected: "an integer" }),
        }
    }

    fn uint(&self, key: &'static str) -> Result<Option<u64>, ConfigError> {
        match self.int(key)? {
            Some(i) if i < 0 => {
                Err(ConfigError::Type { key, origin: self.origin(key), expected: "a non-negative integer" })
            }
            other => Ok(other.map(|i| i as u64)),
        }
    }

    fn real(&self, key: &'static str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((v, origin)) => as_real(v).map(Some).ok_or(ConfigError::Type { key, origin, expected: "a number" }),
        }
    }

    fn boolean(&self, key: &'static str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Boolean(b), _)) => Ok(Some(*b)),
            Some((_, origin)) => Err(ConfigError::Type { key, origin, expected: "true or false" }),
        }
    }

    fn string(&self, key: &'static str) -> Result<Option<&str>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::String(s), _)) => Ok(Some(s)),
            Some((_, origin)) => Err(ConfigError::Type { key, origin, expected: "a string" }),
        }
    }

    fn array(&self, key: &'static str) -> Result<Option<&Vec<Value>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Array(a), _)) => Ok(Some(a)),
            Some((_, origin)) => Err(ConfigError::Type { key, origin, expected: "an array" }),
        }
    }

    fn uint_array(&self, key: &'static str) -> Result<Option<Vec<u64>>, ConfigError> {
        let Some(a) = self.array(key)? else { return Ok(None) };
        a.iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err(ConfigError::Type {
                    key,
                    origin: self.origin(key),
                    expected: "an array of non-negative integers",
                }),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn invalid(&self, key: &'static str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { key, origin: self.origin(key), message: message.into() }
    }
}

fn as_real(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn build(r: &Reader) -> Result<ExperimentConfig, ConfigError> {
    let n_nodes = r.uint("n_nodes")?.ok_or(ConfigError::Missing("n_nodes"))? as usize;
    if n_nodes < 2 {
        return Err(r.invalid("n_nodes", format!("must be at least 2, got {n_nodes}")));
    }

    let role_spec = match r.get("roles") {
        None => return Err(ConfigError::Missing("roles")),
        Some((Value::String(s), _)) => {
            RoleSpec::parse(s).ok_or_else(|| r.invalid("roles", format!("cannot parse `{s}`")))?
        }
        Some((Value::Array(a), origin)) => RoleSpec::PerNode(
            a.iter()
                .map(|v| v.as_str().and_then(NodeRole::parse))
                .collect::<Option<Vec<_>>>()
                .ok_or(ConfigError::Type { key: "roles", origin, expected: "an array of role names" })?,
        ),
        Some((_, origin)) => {
            return Err(ConfigError::Type { key: "roles", origin, expected: "a role string or array" })
        }
    };
    let roles = role_spec.resolve(n_nodes).map_err(|m| r.invalid("roles", m))?;

    let mut sim = SimConfig::new(roles);
    if let Some(a) = r.array("initial_values")? {
        if r.get("initial_low").is_some() || r.get("initial_high").is_some() {
            return Err(r.invalid("initial_values", "cannot be combined with initial_low/initial_high"));
        }
        let v = a.iter().map(as_real).collect::<Option<Vec<f64>>>().ok_or(ConfigError::Type {
            key: "initial_values",
            origin: r.origin("initial_values"),
            expected: "an array of numbers",
        })?;
        if v.len() != n_nodes {
            return Err(r.invalid("initial_values", format!("{} values for {} nodes", v.len(), n_nodes)));
        }
        sim.initial_values = InitialValues::Explicit(v);
    } else {
        let low = r.real("initial_low")?.unwrap_or(0.0);
        let high = r.real("initial_high")?.unwrap_or(1.0);
        if !(low.is_finite() && high.is_finite() && low <= high) {
            return Err(r.invalid("initial_high", format!("[{low}, {high}] is not a finite interval")));
        }
        sim.initial_values = InitialValues::Uniform { low, high };
    }
    if let Some(e) = r.real("epsilon")? {
        sim.epsilon =
            Epsilon::new(e).map_err(|_| r.invalid("epsilon", format!("must be positive and finite, got {e}")))?;
    }
    let low = r.real("offset_low")?.unwrap_or(-1.0);
    let high = r.real("offset_high")?.unwrap_or(1.0);
    sim.offset_dist = OffsetDistribution::uniform(low, high)
        .map_err(|_| r.invalid("offset_high", format!("[{low}, {high}] is not a finite interval")))?;
    sim.seed = r.uint("seed")?.unwrap_or(0);
    sim.max_steps = r.uint("max_steps")?.unwrap_or(DEFAULT_MAX_STEPS);
    if sim.max_steps == 0 {
        return Err(r.invalid("max_steps", "must be at least 1"));
    }
    if let Some(m) = r.string("mode")? {
        sim.mode = Mode::parse(m).ok_or_else(|| {
            r.invalid("mode", format!("unknown mode `{m}`; use full_protocol, plain_gossip or kefayati_baseline"))
        })?;
    }
    if let Some(a) = r.array("forced_first_pairs")? {
        for p in a {
            let pair =
                p.as_array().filter(|p| p.len() == 2).and_then(|p| Some((p[0].as_integer()?, p[1].as_integer()?)));
            match pair {
                Some((a, b)) if a >= 0 && b >= 0 && a != b && (a as usize) < n_nodes && (b as usize) < n_nodes => {
                    sim.forced_first_pairs.push((a as usize, b as usize))
                }
                _ => return Err(r.invalid("forced_first_pairs", format!("`{p}` is not a pair of distinct node ids"))),
            }
        }
    }

    let expect_protected: Vec<NodeId> =
        r.uint_array("expect_protected")?.unwrap_or_default().into_iter().map(|i| i as usize).collect();
    if let Some(bad) = expect_protected.iter().find(|&&j| j >= n_nodes) {
        return Err(r.invalid("expect_protected", format!("node {bad} out of range")));
    }

    let defaults = AttackModel::default();
    let attack = AttackModel {
        knows_l_steps: r.boolean("attack_knows_l_steps")?.unwrap_or(defaults.knows_l_steps),
        global_schedule: r.boolean("attack_global_schedule")?.unwrap_or(defaults.global_schedule),
        eavesdrop: r.boolean("attack_eavesdrop")?.unwrap_or(defaults.eavesdrop),
    };

    let sweep_seeds = match r.uint_array("sweep_seeds")? {
        None => None,
        Some(v) if v.len() == 2 => Some((v[0], v[1])),
        Some(_) => return Err(r.invalid("sweep_seeds", "expected [start, end]")),
    };
    let sweep_n_nodes: Vec<usize> =
        r.uint_array("sweep_n_nodes")?.unwrap_or_default().into_iter().map(|n| n as usize).collect();
    for &n in &sweep_n_nodes {
        if n < 2 {
            return Err(r.invalid("sweep_n_nodes", format!("network size {n} is below 2")));
        }
        role_spec.resolve(n).map_err(|m| r.invalid("sweep_n_nodes", format!("size {n}: {m}")))?;
    }

    sim.validate().map_err(|e| ConfigError::Invalid {
        key: "n_nodes",
        origin: r.origin("n_nodes"),
        message: e.to_string(),
    })?;
    Ok(ExperimentConfig { sim, role_spec, attack, expect_protected, sweep_seeds, sweep_n_nodes })
}

/// Parses config text, then applies `overrides` in order.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut entries = parse_entries(text, |offset| Origin::Line(line_of(text, offset)))?;
    for o in overrides {
        entries.extend(parse_override(o)?);
    }
    build(&Reader { entries })
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config_str(&text, overrides)
}

fn real(v: f64) -> String {
    // Debug output is the shortest exact representation and always
    // carries a decimal point or exponent, which TOML needs for a float.
    format!("{v:?}")
}

/// Config text that parses back to `config`.
pub fn emit_config(config: &ExperimentConfig) -> String {
    let sim = &config.sim;
    let mut s = String::new();
    let _ = writeln!(s, "n_nodes = {}", sim.n_nodes);
    let _ = writeln!(s, "roles = {}", config.role_spec.to_toml());
    match &sim.initial_values {
        InitialValues::Explicit(v) => {
            let parts: Vec<String> = v.iter().map(|&x| real(x)).collect();
            let _ = writeln!(s, "initial_values = [{}]", parts.join(", "));
        }
        InitialValues::Uniform { low, high } => {
            let _ = writeln!(s, "initial_low = {}", real(*low));
            let _ = writeln!(s, "initial_high = {}", real(*high));
        }
    }
    let _ = writeln!(s, "epsilon = {}", real(sim.epsilon.value()));
    let (low, high) = sim.offset_dist.bounds();
    let _ = writeln!(s, "offset_low = {}", real(low));
    let _ = writeln!(s, "offset_high = {}", real(high));
    let _ = writeln!(s, "seed = {}", sim.seed);
    let _ = writeln!(s, "max_steps = {}", sim.max_steps);
    let _ = writeln!(s, "mode = \"{}\"", sim.mode.as_str());
    if !sim.forced_first_pairs.is_empty() {
        let parts: Vec<String> = sim.forced_first_pairs.iter().map(|(a, b)| format!("[{a}, {b}]")).collect();
        let _ = writeln!(s, "forced_first_pairs = [{}]", parts.join(", "));
    }
    if !config.expect_protected.is_empty() {
        let parts: Vec<String> = config.expect_protected.iter().map(|j| j.to_string()).collect();
        let _ = writeln!(s, "expect_protected = [{}]", parts.join(", "));
    }
    let _ = writeln!(s, "attack_knows_l_steps = {}", config.attack.knows_l_steps);
    let _ = writeln!(s, "attack_global_schedule = {}", config.attack.global_schedule);
    let _ = writeln!(s, "attack_eavesdrop = {}", config.attack.eavesdrop);
    if let Some((a, b)) = config.sweep_seeds {
        let _ = writeln!(s, "sweep_seeds = [{a}, {b}]");
    }
    if !config.sweep_n_nodes.is_empty() {
        let parts: Vec<String> = config.sweep_n_nodes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "sweep_n_nodes = [{}]", parts.join(", "));
    }
    s
}
