use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use privgossip_core::adversary::{privacy_verdicts, Outcome};
use privgossip_core::sim::{summarize, sweep_row, SweepRow, SweepSummary, World};
use privgossip_core::{Error, Mode, SimConfig};

use crate::config::{parse_config, ExperimentConfig};
use crate::formats::{result_json, verdict_table, verdicts_json, write_sweep_csv, write_trace};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
/// Step cap reached, or the command line / config was unusable.
pub const EXIT_INCOMPLETE: u8 = 2;
pub const EXIT_BREACH: u8 = 3;

/// Signature shared by every command: invocation, stdout, stderr.
pub type Handler = fn(&Invocation, &mut dyn Write, &mut dyn Write) -> u8;

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
}

impl Invocation {
    pub fn new(config: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Invocation { config: config.into(), out_dir: out_dir.into(), overrides: Vec::new(), seed: None }
    }

    fn load(&self) -> Result<ExperimentConfig, String> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        parse_config(&self.config, &overrides).map_err(|e| format!("{}: {e}", self.config.display()))
    }
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn io_failure(err: &mut dyn Write, what: &Path, e: io::Error) -> u8 {
    let _ = writeln!(err, "error: {}: {e}", what.display());
    EXIT_FAILURE
}

/// Simulates once, writing `trace.jsonl` and `result.json`.
pub fn cmd_run(inv: &Invocation, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let cfg = match inv.load() {
        Ok(c) => c,
        Err(m) => {
            let _ = writeln!(err, "error: {m}");
            return EXIT_INCOMPLETE;
        }
    };
    let trace_path = inv.out_dir.join("trace.jsonl");
    let mut trace = match create(&inv.out_dir, "trace.jsonl") {
        Ok(w) => w,
        Err(e) => return io_failure(err, &trace_path, e),
    };
    let mut world = match World::new(cfg.sim) {
        Ok(w) => w,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INCOMPLETE;
        }
    };
    let mut write_err = None;
    let result = world.run_with(|e| {
        if write_err.is_none() {
            write_err = write_trace(&mut trace, [e]).err();
        }
    });
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_FAILURE;
        }
    };
    if let Some(e) = write_err.or_else(|| trace.flush().err()) {
        return io_failure(err, &trace_path, e);
    }
    let result_path = inv.out_dir.join("result.json");
    if let Err(e) = fs::write(&result_path, result_json(&result)) {
        return io_failure(err, &result_path, e);
    }
    let _ = writeln!(
        out,
        "steps={} max_err={:e} terminated={}",
        result.steps_executed, result.max_abs_error, result.terminated
    );
    if result.terminated {
        EXIT_OK
    } else {
        EXIT_INCOMPLETE
    }
}

/// Simulates once and runs the coalition analysis on the trace.
pub fn cmd_attack(inv: &Invocation, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let cfg = match inv.load() {
        Ok(c) => c,
        Err(m) => {
            let _ = writeln!(err, "error: {m}");
            return EXIT_INCOMPLETE;
        }
    };
    if cfg.sim.mode != Mode::FullProtocol {
        let _ =
            writeln!(err, "error: attack analysis models the full protocol only (mode = {})", cfg.sim.mode.as_str());
        return EXIT_INCOMPLETE;
    }
    let roles = cfg.sim.roles.clone();
    let run = match privgossip_core::sim::run_full(cfg.sim) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INCOMPLETE;
        }
    };
    let verdicts = match privacy_verdicts(&run.trace, &roles, cfg.attack) {
        Ok(v) => v,
        Err(e @ Error::Contradiction { .. }) => {
            let _ = writeln!(err, "error: inconsistent constraint system, this is a modeling bug: {e}");
            return EXIT_FAILURE;
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_FAILURE;
        }
    };
    let trace_path = inv.out_dir.join("trace.jsonl");
    if let Err(e) = create(&inv.out_dir, "trace.jsonl").and_then(|w| write_trace(w, &run.trace.events)) {
        return io_failure(err, &trace_path, e);
    }
    let verdict_path = inv.out_dir.join("verdicts.json");
    if let Err(e) = fs::write(&verdict_path, verdicts_json(&verdicts)) {
        return io_failure(err, &verdict_path, e);
    }
    let _ = write!(out, "{}", verdict_table(&verdicts));
    let breaches: Vec<usize> = verdicts
        .iter()
        .filter(|v| cfg.expect_protected.contains(&v.node) && matches!(v.outcome, Outcome::Exact(_)))
        .map(|v| v.node)
        .collect();
    if breaches.is_empty() {
        EXIT_OK
    } else {
        let _ = writeln!(err, "privacy breach: nodes {breaches:?} were expected to stay protected");
        EXIT_BREACH
    }
}

/// Runs every config, fanning out over the available cores. Rows come
/// back in config order.
pub fn run_rows(configs: Vec<SimConfig>) -> Vec<SweepRow> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len().max(1));
    if workers <= 1 {
        return configs.into_iter().map(sweep_row).collect();
    }
    let chunk = configs.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = configs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().cloned().map(sweep_row).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

fn sweep_configs(cfg: &ExperimentConfig) -> Result<Vec<SimConfig>, String> {
    let (start, end) = cfg.sweep_seeds.ok_or("sweeps need `sweep_seeds = [start, end]`")?;
    if end <= start {
        return Err(format!("seed range [{start}, {end}) is empty"));
    }
    let sizes = if cfg.sweep_n_nodes.is_empty() { vec![cfg.sim.n_nodes] } else { cfg.sweep_n_nodes.clone() };
    let mut configs = Vec::new();
    for &n in &sizes {
        for seed in start..end {
            configs.push(cfg.sim_for(n, seed)?);
        }
    }
    Ok(configs)
}

fn sweep_with(
    inv: &Invocation,
    out: &mut dyn Write,
    err: &mut dyn Write,
    force_mode: Option<Mode>,
    report: fn(&SweepSummary, &ExperimentConfig, &mut dyn Write),
) -> u8 {
    let configs = match inv.load().and_then(|mut cfg| {
        if let Some(m) = force_mode {
            cfg.sim.mode = m;
        }
        sweep_configs(&cfg).map(|c| (cfg, c))
    }) {
        Ok(c) => c,
        Err(m) => {
            let _ = writeln!(err, "error: {m}");
            return EXIT_INCOMPLETE;
        }
    };
    let (cfg, configs) = configs;
    let summary = summarize(run_rows(configs));
    let csv_path = inv.out_dir.join("sweep.csv");
    if let Err(e) = create(&inv.out_dir, "sweep.csv").and_then(|w| write_sweep_csv(w, &summary.rows)) {
        return io_failure(err, &csv_path, e);
    }
    for row in &summary.rows {
        if let Err(e) = &row.outcome {
            let _ = writeln!(err, "seed {} n_nodes {}: {e}", row.seed, row.n_nodes);
        }
    }
    report(&summary, &cfg, out);
    if summary.rows.iter().all(|r| r.outcome.is_err()) {
        EXIT_FAILURE
    } else {
        EXIT_OK
    }
}

fn sweep_report(summary: &SweepSummary, _: &ExperimentConfig, out: &mut dyn Write) {
    for g in &summary.groups {
        let _ = writeln!(
            out,
            "n_nodes={} mode={} runs={} failed={} terminated={} median_steps={} mean_sq_consensus_error={:e}",
            g.n_nodes,
            g.mode.as_str(),
            g.runs,
            g.failed,
            g.terminated,
            g.median_steps,
            g.mean_square_consensus_error
        );
    }
}

fn baseline_report(summary: &SweepSummary, cfg: &ExperimentConfig, out: &mut dyn Write) {
    let var_u = cfg.sim.offset_dist.variance();
    for g in &summary.groups {
        let predicted = var_u / g.n_nodes as f64;
        let _ = writeln!(
            out,
            "n_nodes={} runs={} empirical_var={:e} predicted_var={:e} ratio={:.4}",
            g.n_nodes,
            g.runs - g.failed,
            g.mean_square_consensus_error,
            predicted,
            g.mean_square_consensus_error / predicted
        );
    }
    for pair in summary.groups.windows(2) {
        let _ = writeln!(
            out,
            "variance_ratio n_nodes={}:{} = {:.4} (predicted {:.4})",
            pair[0].n_nodes,
            pair[1].n_nodes,
            pair[0].mean_square_consensus_error / pair[1].mean_square_consensus_error,
            pair[1].n_nodes as f64 / pair[0].n_nodes as f64
        );
    }
}

/// Runs the seed range at every configured network size and writes
/// `sweep.csv`.
pub fn cmd_sweep(inv: &Invocation, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    sweep_with(inv, out, err, None, sweep_report)
}

/// Sweep in the never-cancelling baseline mode, comparing the spread of
/// the consensus value with the offset variance over `n_nodes`.
pub fn cmd_baseline(inv: &Invocation, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    sweep_with(inv, out, err, Some(Mode::KefayatiBaseline), baseline_report)
}
