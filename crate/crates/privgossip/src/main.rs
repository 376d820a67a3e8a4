use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use privgossip::commands::{cmd_attack, cmd_baseline, cmd_run, cmd_sweep, Handler, Invocation};

#[derive(Parser)]
#[command(name = "privgossip", version, about = "Privacy-preserving gossip average consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate once; writes trace.jsonl and result.json.
    Run(Args),
    /// Simulate once and analyze what the curious coalition learns; writes
    /// trace.jsonl and verdicts.json.
    Attack(Args),
    /// Run a seed range at one or more network sizes; writes sweep.csv.
    Sweep(Args),
    /// Sweep in baseline mode and compare the consensus spread to the
    /// offset variance over N; writes sweep.csv.
    Baseline(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long = "out", value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Override a config key; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (f, args): (Handler, Args) = match cli.command {
        Command::Run(a) => (cmd_run, a),
        Command::Attack(a) => (cmd_attack, a),
        Command::Sweep(a) => (cmd_sweep, a),
        Command::Baseline(a) => (cmd_baseline, a),
    };
    let inv = Invocation { config: args.config, out_dir: args.out, overrides: args.set, seed: args.seed };
    ExitCode::from(f(&inv, &mut io::stdout().lock(), &mut io::stderr().lock()))
}
