//! Command-line front end for the `corespect` library.
//!
//! Each subcommand writes plain CSV and JSON files into `--output-dir`.
//! Everything except the optional timings.json is a deterministic function
//! of the flags and the input file, independent of the thread count.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::Path;

pub use config::{Cli, Command, RunArgs, RunConfig};
pub use error::{CliError, CliResult};

/// Runs a parsed command line. `eval` output is returned for printing.
pub fn run(cli: Cli) -> CliResult<Option<String>> {
    if let Some(path) = &cli.config {
        let mut cfg = load_config(path)?;
        cfg.args.output_dir = cli.output_dir;
        run_config(&cfg)?;
        return Ok(None);
    }
    let Some(cmd) = cli.command else {
        return Err(CliError::Config("no command given (see --help)".into()));
    };
    let name = cmd.name().to_owned();
    match cmd {
        Command::Synth(a) => commands::synth(&a).map(|_| None),
        Command::Eval(a) => commands::eval(&a).map(Some),
        Command::Cluster(args)
        | Command::Rank(args)
        | Command::NoiseSweep(args)
        | Command::FractionCurve(args)
        | Command::Diagnose(args) => run_config(&RunConfig { command: name, args }).map(|_| None),
    }
}

/// Dispatches a (possibly replayed) pipeline command.
pub fn run_config(cfg: &RunConfig) -> CliResult<()> {
    match cfg.command.as_str() {
        "cluster" => commands::cluster(&cfg.args),
        "rank" => commands::rank(&cfg.args),
        "noise-sweep" => commands::noise_sweep(&cfg.args),
        "fraction-curve" => commands::fraction_curve(&cfg.args),
        "diagnose" => commands::diagnose(&cfg.args),
        other => Err(CliError::Config(format!("cannot replay command {other:?}"))),
    }
}

/// Reads the `config` object of a report.json.
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg = value
        .get("config")
        .ok_or_else(|| CliError::Config(format!("{}: no \"config\" object", path.display())))?;
    serde_json::from_value(cfg.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Builds the global thread pool from `CORESPECT_THREADS`, if set.
pub fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("CORESPECT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Config(format!("CORESPECT_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Invariant(format!("thread pool: {e}")))
}
