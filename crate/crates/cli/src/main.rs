//! `hefl`: key generation, training, attacks, reports and benchmarks for
//! selectively encrypted federated learning.

mod attack;
mod bench;
mod config;
mod keygen;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hefl_core::{CoreError, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "hefl", version, about = "Federated learning with selective CKKS encryption")]
struct Cli {
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a CKKS keypair and print the parameter fingerprint
    Keygen(keygen::KeygenArgs),
    /// Run federated training (one run, or one per ratio with --ratios)
    Train(train::TrainArgs),
    /// Run the gradient-inversion attack on a captured update or as a sweep
    Attack(attack::AttackArgs),
    /// Compute metrics over finished runs and write CSV/JSON reports
    Report(report::ReportArgs),
    /// Time the CKKS primitives
    Bench(bench::BenchArgs),
}

/// Flags that override keys of the experiment configuration.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of update coordinates to encrypt, in [0, 1]
    #[arg(long, value_name = "R")]
    encryption_ratio: Option<f64>,
    /// Sensitivity scores used to pick encrypted coordinates
    #[arg(long, value_name = "METHOD", value_parser = ["magnitude", "jacobian"])]
    sensitivity_method: Option<String>,
    /// CKKS parameter set
    #[arg(long, value_name = "PROFILE", value_parser = ["paper-128", "test-small"])]
    ckks_profile: Option<String>,
    /// Clients send one minibatch gradient instead of a multi-epoch delta
    #[arg(long)]
    single_step: bool,
    /// Set any configuration key, e.g. --set rounds=3 (value parsed as JSON when possible)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Config => 3,
        ErrorClass::Crypto => 4,
        ErrorClass::Numeric => 5,
        ErrorClass::Io => 6,
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("HEFL_THREADS")
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = thread_cap() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not cap worker threads: {e}");
        }
    }

    let result = match cli.command {
        Command::Keygen(a) => keygen::run(a),
        Command::Train(a) => train::run(a),
        Command::Attack(a) => attack::run(a),
        Command::Report(a) => report::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(exit_code(e.class()))
        }
    }
}

fn report_error(e: &CoreError) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> hefl_core::Result<()> {
    hefl_core::checkpoint::write_atomic(path, bytes)
}

pub(crate) fn pretty_json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("value serializes");
    out.push(b'\n');
    out
}

pub(crate) fn require_dir(path: &std::path::Path) -> hefl_core::Result<PathBuf> {
    std::fs::create_dir_all(path).map_err(|e| CoreError::io(path, e))?;
    Ok(path.to_path_buf())
}
