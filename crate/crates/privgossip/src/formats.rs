//! Output files: JSONL traces, JSON results and verdicts, sweep CSV.
//!
//! Reals are written with 17 significant digits in scientific notation,
//! independent of locale, so every value reads back bit-exact.

use std::io::{self, BufRead, Write};

use privgossip_core::adversary::{Outcome, PrivacyVerdict};
use privgossip_core::sim::SweepRow;
use privgossip_core::{ExchangeEvent, SimResult, Step, StoppingAction};
use serde::Deserialize;

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_reals(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt_real(x)).collect();
    format!("[{}]", parts.join(","))
}

fn fmt_ids(v: &[usize]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(","))
}

pub fn event_line(e: &ExchangeEvent) -> String {
    let action = match e.stopping_action {
        Some(a) => format!("\"{}\"", a.as_str()),
        None => "null".into(),
    };
    format!(
        "{{\"step\":{},\"initiator\":{},\"responder\":{},\"value_i_before\":{},\"value_j_before\":{},\
         \"value_i_after\":{},\"value_j_after\":{},\"offset_i\":{},\"offset_j\":{},\"stopping_action\":{}}}",
        e.step,
        e.initiator,
        e.responder,
        fmt_real(e.value_i_before),
        fmt_real(e.value_j_before),
        fmt_real(e.value_i_after),
        fmt_real(e.value_j_after),
        fmt_real(e.offset_i),
        fmt_real(e.offset_j),
        action,
    )
}

pub fn write_trace<'a, W: Write>(mut w: W, events: impl IntoIterator<Item = &'a ExchangeEvent>) -> io::Result<()> {
    for e in events {
        writeln!(w, "{}", event_line(e))?;
    }
    w.flush()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    step: Step,
    initiator: usize,
    responder: usize,
    value_i_before: f64,
    value_j_before: f64,
    value_i_after: f64,
    value_j_after: f64,
    offset_i: f64,
    offset_j: f64,
    stopping_action: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<ExchangeEvent>, TraceReadError> {
    let mut events = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| TraceReadError::Parse { line: idx + 1, message };
        let rec: EventRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let stopping_action = match rec.stopping_action.as_deref() {
            None => None,
            Some(s) => Some(StoppingAction::parse(s).ok_or_else(|| bad(format!("unknown stopping action `{s}`")))?),
        };
        events.push(ExchangeEvent {
            step: rec.step,
            initiator: rec.initiator,
            responder: rec.responder,
            value_i_before: rec.value_i_before,
            value_j_before: rec.value_j_before,
            value_i_after: rec.value_i_after,
            value_j_after: rec.value_j_after,
            offset_i: rec.offset_i,
            offset_j: rec.offset_j,
            stopping_action,
        });
    }
    Ok(events)
}

pub fn result_json(r: &SimResult) -> String {
    let l: Vec<String> = r.l_steps.iter().map(|l| l.map_or("null".into(), |l| l.to_string())).collect();
    format!(
        "{{\"final_values\":{},\"steps_executed\":{},\"true_mean\":{},\"max_abs_error\":{},\"terminated\":{},\"l_steps\":[{}]}}\n",
        fmt_reals(&r.final_values),
        r.steps_executed,
        fmt_real(r.true_mean),
        fmt_real(r.max_abs_error),
        r.terminated,
        l.join(","),
    )
}

pub fn verdicts_json(verdicts: &[PrivacyVerdict]) -> String {
    let items: Vec<String> = verdicts
        .iter()
        .map(|v| {
            let label = v.outcome.label();
            match &v.outcome {
                Outcome::Exact(x) => {
                    format!("{{\"node\":{},\"outcome\":\"{label}\",\"value\":{}}}", v.node, fmt_real(*x))
                }
                Outcome::SumOnly { members, sum } | Outcome::Protected { larger_group: Some((members, sum)) } => {
                    format!(
                        "{{\"node\":{},\"outcome\":\"{label}\",\"value\":{},\"members\":{}}}",
                        v.node,
                        fmt_real(*sum),
                        fmt_ids(members)
                    )
                }
                Outcome::Protected { larger_group: None } => format!("{{\"node\":{},\"outcome\":\"{label}\"}}", v.node),
            }
        })
        .collect();
    format!("[{}]\n", items.join(",\n "))
}

pub fn verdict_table(verdicts: &[PrivacyVerdict]) -> String {
    let mut out = format!("{:>6}  {:<10}  {}\n", "node", "outcome", "detail");
    for v in verdicts {
        let detail = match &v.outcome {
            Outcome::Exact(x) => format!("x = {}", fmt_real(*x)),
            Outcome::SumOnly { members, sum } => format!("sum over {members:?} = {}", fmt_real(*sum)),
            Outcome::Protected { larger_group: Some((members, sum)) } => {
                format!("only the group sum over {members:?} = {} is known", fmt_real(*sum))
            }
            Outcome::Protected { larger_group: None } => String::new(),
        };
        out.push_str(format!("{:>6}  {:<10}  {}", v.node, v.outcome.label(), detail).trim_end());
        out.push('\n');
    }
    out
}

pub const SWEEP_HEADER: &str = "seed,n_nodes,mode,epsilon,steps,max_abs_error,terminated";

/// One CSV line per row. A failed run leaves `steps` and `max_abs_error`
/// empty and reports `error` as its termination status.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        let head = format!("{},{},{},{}", r.seed, r.n_nodes, r.mode.as_str(), fmt_real(r.epsilon));
        match &r.outcome {
            Ok(s) => writeln!(w, "{head},{},{},{}", s.steps, fmt_real(s.max_abs_error), s.terminated)?,
            Err(_) => writeln!(w, "{head},,,error")?,
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use privgossip_core::sim::{run, SimConfig};
    use privgossip_core::NodeRole;

    #[test]
    fn trace_round_trips_bit_exact() {
        let roles = vec![NodeRole::Private, NodeRole::Neutral, NodeRole::Curious, NodeRole::Private];
        let (_, trace) = run(SimConfig::new(roles).with_seed(4)).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace.events).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, trace.events);
        for line in String::from_utf8(buf).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
            assert_eq!(keys.len(), 10);
            assert!(line.starts_with("{\"step\":"));
        }
    }

    #[test]
    fn extreme_reals_round_trip() {
        for v in [0.0, -0.0, 1e-300, f64::MAX, f64::MIN_POSITIVE, 0.1 + 0.2, -123456.789e-7] {
            let s = fmt_real(v);
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn malformed_trace_lines() {
        assert!(matches!(read_trace("{\"step\":0}\n".as_bytes()), Err(TraceReadError::Parse { line: 1, .. })));
        let mut e = String::from(
            "{\"step\":0,\"initiator\":0,\"responder\":1,\"value_i_before\":1,\"value_j_before\":1,\
             \"value_i_after\":1,\"value_j_after\":1,\"offset_i\":0,\"offset_j\":0,\"stopping_action\":\"maybe\"}",
        );
        assert!(read_trace(e.as_bytes()).is_err());
        e = e.replace("\"maybe\"", "null");
        assert_eq!(read_trace(format!("\n{e}\n").as_bytes()).unwrap().len(), 1);
    }

    #[test]
    fn verdict_report() {
        let v = vec![
            PrivacyVerdict { node: 0, outcome: Outcome::Exact(0.5) },
            PrivacyVerdict { node: 1, outcome: Outcome::SumOnly { members: vec![1, 2], sum: 1.25 } },
            PrivacyVerdict { node: 2, outcome: Outcome::Protected { larger_group: None } },
        ];
        let parsed: serde_json::Value = serde_json::from_str(&verdicts_json(&v)).unwrap();
        assert_eq!(parsed[0]["outcome"], "EXACT");
        assert_eq!(parsed[0]["value"], 0.5);
        assert_eq!(parsed[1]["members"], serde_json::json!([1, 2]));
        assert!(parsed[2].get("value").is_none());
        let table = verdict_table(&v);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("SUM_ONLY"));
    }
}
