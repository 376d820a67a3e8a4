use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use privgossip::commands::{cmd_attack, cmd_baseline, cmd_run, cmd_sweep, Handler, Invocation};
use privgossip::formats::{read_trace, SWEEP_HEADER};
use privgossip::{emit_config, parse_config_str, ExperimentConfig};
use proptest::prelude::*;

struct Ran {
    code: u8,
    stdout: String,
    stderr: String,
}

fn call(cmd: Handler, inv: &Invocation) -> Ran {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cmd(inv, &mut out, &mut err);
    Ran { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn setup(dir: &Path, text: &str) -> Invocation {
    let cfg = dir.join("exp.toml");
    fs::write(&cfg, text).unwrap();
    Invocation::new(cfg, dir.join("out"))
}

const EVALUATION: &str = "n_nodes = 20\nroles = \"private:20\"\nepsilon = 0.0001\nseed = 3\n";

#[test]
fn run_writes_trace_and_result() {
    let dir = tempfile::tempdir().unwrap();
    let inv = setup(dir.path(), EVALUATION);
    let r = call(cmd_run, &inv);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let line = r.stdout.trim();
    assert!(line.starts_with("steps=") && line.ends_with("terminated=true"), "{line}");
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(inv.out_dir.join("result.json")).unwrap()).unwrap();
    assert!(result["max_abs_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(result["final_values"].as_array().unwrap().len(), 20);
    let trace =
        read_trace(fs::File::open(inv.out_dir.join("trace.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(trace.len() as u64, result["steps_executed"].as_u64().unwrap());
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut inv = setup(dir.path(), EVALUATION);
    inv.overrides.push("max_steps=1".into());
    let r = call(cmd_run, &inv);
    assert_eq!(r.code, 2);
    assert!(r.stdout.contains("terminated=false"));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let inv = Invocation { out_dir: blocker.join("out"), ..setup(dir.path(), EVALUATION) };
    let r = call(cmd_run, &inv);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("error"));

    let inv = setup(dir.path(), "n_nodes = 1\nroles = \"private:1\"\n");
    let r = call(cmd_run, &inv);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("n_nodes"), "{}", r.stderr);
}

#[test]
fn seed_flag_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = setup(dir.path(), EVALUATION);
    a.seed = Some(11);
    call(cmd_run, &a);
    let first = fs::read(a.out_dir.join("trace.jsonl")).unwrap();
    let b = Invocation { overrides: vec!["seed=11".into()], seed: None, ..a.clone() };
    call(cmd_run, &b);
    assert_eq!(first, fs::read(b.out_dir.join("trace.jsonl")).unwrap());
    let c = Invocation { seed: None, ..a };
    call(cmd_run, &c);
    assert_ne!(first, fs::read(c.out_dir.join("trace.jsonl")).unwrap());
}

fn verdicts(dir: &Path) -> Vec<serde_json::Value> {
    serde_json::from_str::<serde_json::Value>(&fs::read_to_string(dir.join("verdicts.json")).unwrap())
        .unwrap()
        .as_array()
        .unwrap()
        .clone()
}

#[test]
fn attack_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let inv = setup(dir.path(), "n_nodes = 5\nroles = \"private:1,curious:*\"\nseed = 2\n");
    let r = call(cmd_attack, &inv);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = verdicts(&inv.out_dir);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0]["outcome"], "EXACT");
    assert!(r.stdout.contains("EXACT"));

    let mut guarded = inv.clone();
    guarded.overrides.push("expect_protected=[0]".into());
    assert_eq!(call(cmd_attack, &guarded).code, 3);

    let inv = setup(dir.path(), "n_nodes = 5\nroles = \"private:2,curious:*\"\nseed = 2\nexpect_protected = [0, 1]\n");
    let r = call(cmd_attack, &inv);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = verdicts(&inv.out_dir);
    assert!(v.iter().all(|x| x["outcome"] == "SUM_ONLY" && x["members"] == serde_json::json!([0, 1])));

    let inv = setup(dir.path(), "n_nodes = 5\nroles = \"private:3,neutral:*\"\nseed = 2\n");
    assert_eq!(call(cmd_attack, &inv).code, 0);
    assert!(verdicts(&inv.out_dir).iter().all(|x| x["outcome"] == "PROTECTED"));

    let inv = setup(dir.path(), "n_nodes = 5\nroles = \"neutral:*\"\nmode = \"plain_gossip\"\n");
    assert_eq!(call(cmd_attack, &inv).code, 2);
}

#[test]
fn sweep_evaluation_setup() {
    let dir = tempfile::tempdir().unwrap();
    let inv = setup(dir.path(), &format!("{EVALUATION}sweep_seeds = [0, 100]\n"));
    let r = call(cmd_sweep, &inv);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = fs::read_to_string(inv.out_dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|l| l.ends_with(",true") && l.contains(",full_protocol,")));
    assert!(r.stdout.contains("runs=100 failed=0 terminated=100"), "{}", r.stdout);
}

#[test]
fn sweep_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for extra in ["sweep_seeds = [5, 5]\n", "sweep_seeds = [5, 2]\n", ""] {
        let inv = setup(dir.path(), &format!("{EVALUATION}{extra}"));
        let r = call(cmd_sweep, &inv);
        assert_eq!(r.code, 2, "{extra}");
        assert!(!inv.out_dir.join("sweep.csv").exists());
    }
}

#[test]
fn baseline_reports_variance_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let inv =
        setup(dir.path(), "n_nodes = 10\nroles = \"private:*\"\nsweep_seeds = [0, 200]\nsweep_n_nodes = [10, 40]\n");
    let r = call(cmd_baseline, &inv);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("n_nodes=10 runs=200"));
    assert!(r.stdout.contains("variance_ratio n_nodes=10:40"));
    let csv = fs::read_to_string(inv.out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 401);
    assert!(csv.lines().skip(1).all(|l| l.contains(",kefayati_baseline,")));
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_privgossip")).args(args).output().unwrap()
}

#[test]
fn binary_entry_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "n_nodes = 4\nroles = \"neutral:4\"\n").unwrap();
    let out: PathBuf = dir.path().join("o");
    let o = binary(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "mode=plain_gossip",
        "--seed",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("steps="));
    assert!(out.join("trace.jsonl").exists());
    assert_eq!(binary(&["run"]).status.code(), Some(2));
    assert_eq!(binary(&["fly", "--config", "x"]).status.code(), Some(2));
    assert_eq!(binary(&["run", "--config", "/nonexistent/c.toml"]).status.code(), Some(2));
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    let roles = prop_oneof![
        (0usize..4, 0usize..4).prop_map(|(p, c)| format!("\"private:{p},curious:{c},neutral:*\"")),
        prop::collection::vec(prop_oneof![Just("private"), Just("neutral"), Just("curious")], 2..7)
            .prop_map(|r| format!("[{}]", r.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(","))),
    ];
    (
        roles,
        8usize..12,
        0u64..i64::MAX as u64,
        1e-12f64..10.0,
        prop::option::of(prop::collection::vec(-1e6f64..1e6, 12)),
        (-5.0f64..0.0, 0.0f64..5.0),
        prop_oneof![Just("full_protocol"), Just("plain_gossip"), Just("kefayati_baseline")],
        (any::<bool>(), any::<bool>(), any::<bool>()),
        prop::option::of((0u64..50, 50u64..100)),
    )
        .prop_map(|(roles, n, seed, eps, values, (lo, hi), mode, (k, g, e), seeds)| {
            let n = if roles.starts_with('[') { roles.matches(',').count() + 1 } else { n };
            let mut s = format!(
                "n_nodes = {n}\nroles = {roles}\nseed = {seed}\nepsilon = {eps:?}\noffset_low = {lo:?}\noffset_high = {hi:?}\n\
                 mode = \"{mode}\"\nattack_knows_l_steps = {k}\nattack_global_schedule = {g}\nattack_eavesdrop = {e}\n\
                 forced_first_pairs = [[0, 1]]\nexpect_protected = [1]\n"
            );
            if let Some(v) = values {
                let v: Vec<String> = v[..n].iter().map(|x| format!("{x:?}")).collect();
                s.push_str(&format!("initial_values = [{}]\n", v.join(", ")));
            }
            if let Some((a, b)) = seeds {
                s.push_str(&format!("sweep_seeds = [{a}, {b}]\n"));
            }
            parse_config_str(&s, &[]).unwrap()
        })
}

proptest! {
    #[test]
    fn config_round_trip(cfg in arb_config()) {
        let text = emit_config(&cfg);
        prop_assert_eq!(parse_config_str(&text, &[]).unwrap(), cfg);
    }
}
