use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iqsched_cli::{parse_delta_list, run_command, Command, Overrides, RunConfig};
use iqsched_core::arrival::{parse_fraction, parse_ms};
use iqsched_core::workload::RateKind;
use iqsched_core::{Duration, Fraction, Policy};

#[derive(Parser)]
#[command(
    name = "iqsched",
    version,
    about = "Deadline-aware batch scheduling for intermittent queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimal batch plan per query, computed analytically
    Single,
    /// Minimum-batch plan per query from the linear constraint system
    Constraint,
    /// One multi-query run of the dynamic scheduler
    Dynamic,
    /// Dynamic runs over every policy and delta
    Sweep,
    /// Fit a piecewise-linear cost curve to measured samples
    Fit {
        /// CSV with header `tuples,cost_us`
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 2)]
        segments: usize,
    },
    /// Compare single-query plans with an exhaustive search
    OracleCheck {
        #[arg(long, default_value_t = 10)]
        max_tuples: u64,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// Scenario config file
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, global = true, default_value = "iqsched-out")]
    out: PathBuf,
    #[arg(long, global = true, value_parser = parse_policy)]
    policy: Option<Policy>,
    /// Allowed cost inflation, e.g. 0.5 or 1/2
    #[arg(long, global = true, value_parser = parse_rsf)]
    rsf: Option<Fraction>,
    #[arg(long, global = true, value_parser = parse_cmax)]
    cmax_ms: Option<Duration>,
    /// Comma-separated deadline tightness values
    #[arg(long, global = true, value_parser = parse_deltas)]
    delta: Option<DeltaList>,
    #[arg(long, global = true, value_parser = parse_rate)]
    rate: Option<RateKind>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    greedy_batch: Option<Switch>,
    #[arg(long, global = true)]
    strict_polling: bool,
}

#[derive(Clone)]
struct DeltaList(Vec<Fraction>);

fn parse_deltas(s: &str) -> Result<DeltaList, String> {
    parse_delta_list(s).map(DeltaList)
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e: iqsched_core::Error| e.to_string())
}

fn parse_rate(s: &str) -> Result<RateKind, String> {
    s.parse().map_err(|e: iqsched_core::Error| e.to_string())
}

fn parse_rsf(s: &str) -> Result<Fraction, String> {
    let f = parse_fraction(s).map_err(|e| e.to_string())?;
    if f < Fraction::from_integer(0) {
        return Err("rsf must be non-negative".into());
    }
    Ok(f)
}

fn parse_cmax(s: &str) -> Result<Duration, String> {
    let us = parse_ms(s).map_err(|e| e.to_string())?;
    if us <= 0 {
        return Err("cmax must be positive".into());
    }
    Ok(Duration(us))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("IQPS_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad arguments are configuration errors; help and version are not.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let command = match cli.command {
        Cmd::Single => Command::Single,
        Cmd::Constraint => Command::Constraint,
        Cmd::Dynamic => Command::Dynamic,
        Cmd::Sweep => Command::Sweep,
        Cmd::Fit { samples, segments } => Command::Fit { samples, segments },
        Cmd::OracleCheck {
            max_tuples,
            instances,
            seed,
        } => Command::OracleCheck {
            max_tuples,
            instances,
            seed,
        },
    };
    let c = cli.common;
    let cfg = RunConfig {
        command,
        scenario: c.scenario,
        out: c.out,
        overrides: Overrides {
            policy: c.policy,
            rsf: c.rsf,
            cmax: c.cmax_ms,
            deltas: c.delta.map(|d| d.0),
            rate: c.rate,
            seed: c.seed,
            greedy_batch: c.greedy_batch.map(|s| matches!(s, Switch::On)),
            strict_polling: c.strict_polling,
        },
    };
    match run_command(&cfg) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
