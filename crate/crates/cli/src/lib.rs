//! Front end for the `iqsched` binary: scenario loading, the six commands
//! and their CSV outputs. [`run_command`] is the single entry point; the
//! binary only maps clap arguments onto a [`RunConfig`].

pub mod config;
pub mod output;

use std::cmp::Reverse;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use iqsched_core::arrival::format_fraction;
use iqsched_core::constraint_sched::solve_min_batches;
use iqsched_core::rational::scale_round;
use iqsched_core::simulator::{validate_plan, Metrics};
use iqsched_core::single_query::{ORACLE_MAX_GRID_POINTS, ORACLE_MAX_TUPLES};
use iqsched_core::workload::{
    make_rate_profile, scale_deadline, small_instance_corpus, stagger_deadlines,
    staggered_scenario, RateKind, ScenarioQuery,
};
use iqsched_core::{
    brute_force_optimal_plan, compute_metrics, execute_plan, fit_piecewise_linear, run_dynamic,
    schedule_single_query, ArrivalProfile, BatchPlan, Duration, DynamicEvent, Fraction, Policy,
    Query, SchedulerConfig, SimTrace, Time,
};
use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{
    load_scenario, parse_scenario, ConfigError, DeadlineSpec, QuerySpec, ScenarioFile,
};
use output::{
    cost_vs_batches, format_ratio, metrics_rows, write_rows, write_rows_with_header, write_trace,
    MetricsRow, NormalizedCostRow, BATCHES_PLOT_FILE, METRICS_FILE, NORMALIZED_PLOT_FILE,
};

/// δ values swept when `--delta` is not given.
pub const DEFAULT_DELTAS: [(i64, i64); 6] = [(1, 1), (4, 5), (3, 5), (2, 5), (1, 5), (1, 10)];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] iqsched_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Single,
    Constraint,
    Dynamic,
    Sweep,
    /// Fits a piecewise-linear cost curve to a `tuples,cost_us` CSV.
    Fit {
        samples: PathBuf,
        segments: usize,
    },
    /// Compares single-query plans with the exhaustive oracle on a random corpus.
    OracleCheck {
        max_tuples: u64,
        instances: usize,
        seed: u64,
    },
}

/// Values given on the command line win over the scenario file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub policy: Option<Policy>,
    pub rsf: Option<Fraction>,
    pub cmax: Option<Duration>,
    pub deltas: Option<Vec<Fraction>>,
    pub rate: Option<RateKind>,
    pub seed: Option<u64>,
    pub greedy_batch: Option<bool>,
    pub strict_polling: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    DeadlineMissed,
    /// Only from `oracle-check`.
    Disagreement,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Completed => 0,
            Outcome::DeadlineMissed => 2,
            Outcome::Disagreement => 1,
        }
    }
}

/// Parses `--delta 1,0.8,1/2`.
pub fn parse_delta_list(text: &str) -> Result<Vec<Fraction>, String> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let f = iqsched_core::arrival::parse_fraction(part.trim()).map_err(|e| e.to_string())?;
        if f < Fraction::from_integer(0) {
            return Err(format!("delta {part} is negative"));
        }
        out.push(f);
    }
    Ok(out)
}

pub fn run_command(cfg: &RunConfig) -> Result<Outcome, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|source| CliError::Io {
        path: cfg.out.display().to_string(),
        source,
    })?;
    match &cfg.command {
        Command::Fit { samples, segments } => return run_fit(samples, *segments, &cfg.out),
        Command::OracleCheck {
            max_tuples,
            instances,
            seed,
        } => return run_oracle_check(*max_tuples, *instances, *seed, &cfg.out),
        _ => {}
    }
    let path = cfg
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::Usage("--scenario is required for this command".into()))?;
    let file = load_scenario(path)?;
    let scheduler = apply_overrides(&file, &cfg.overrides)?;
    info!("scenario {} with {:?}", file.label, scheduler);
    match cfg.command {
        Command::Single => run_static(&file, &scheduler, &cfg.overrides, &cfg.out, false),
        Command::Constraint => run_static(&file, &scheduler, &cfg.overrides, &cfg.out, true),
        Command::Dynamic => run_single_dynamic(&file, &scheduler, &cfg.overrides, &cfg.out),
        Command::Sweep => run_sweep(&file, &scheduler, &cfg.overrides, &cfg.out),
        Command::Fit { .. } | Command::OracleCheck { .. } => unreachable!("handled above"),
    }
}

fn apply_overrides(file: &ScenarioFile, o: &Overrides) -> Result<SchedulerConfig, CliError> {
    let mut c = file.scheduler.clone();
    if let Some(p) = o.policy {
        c.policy = p;
    }
    if let Some(r) = o.rsf {
        c.rsf = r;
    }
    if let Some(m) = o.cmax {
        c.cmax = m;
    }
    if let Some(g) = o.greedy_batch {
        c.greedy_batch = g;
    }
    c.strict_polling |= o.strict_polling;
    c.validate()?;
    if o.seed.is_some() && file.workload.is_none() {
        return Err(CliError::Usage(
            "--seed needs a scenario with a [workload] section".into(),
        ));
    }
    Ok(c)
}

/// A scenario with concrete deadlines, ready to run.
struct Prepared {
    label: String,
    queries: Vec<ScenarioQuery>,
    removals: Vec<(Time, String)>,
}

impl Prepared {
    fn plain(&self) -> Vec<Query> {
        self.queries.iter().map(|q| q.query.clone()).collect()
    }

    fn events(&self) -> Vec<DynamicEvent> {
        let mut ev: Vec<DynamicEvent> = self
            .queries
            .iter()
            .map(|q| DynamicEvent::Add {
                time: q.arrival,
                query: q.query.clone(),
                expected: q.expected.clone(),
            })
            .chain(self.removals.iter().map(|(t, id)| DynamicEvent::Remove {
                time: *t,
                query_id: id.clone(),
            }))
            .collect();
        ev.sort_by_key(|e| e.time());
        ev
    }
}

/// Swaps a fixed-rate profile for the `kind`-shaped profile over the same
/// nominal horizon, keeping the original as the expectation.
fn reshape(profile: &ArrivalProfile, kind: RateKind, id: &str) -> Result<ArrivalProfile, CliError> {
    match profile {
        ArrivalProfile::FixedRate { start, rate, total } => {
            let horizon = Duration(scale_round(*total as i64 * 1_000_000, rate.recip()));
            Ok(make_rate_profile(kind, *total, horizon, *start)?)
        }
        ArrivalProfile::Trace { .. } => Err(CliError::Usage(format!(
            "--rate only reshapes fixed-rate profiles; query {id} uses a trace"
        ))),
    }
}

fn prepare(
    file: &ScenarioFile,
    scheduler: &SchedulerConfig,
    o: &Overrides,
    delta: Option<Fraction>,
) -> Result<Prepared, CliError> {
    if let Some(spec) = &file.workload {
        let mut spec = spec.clone();
        if let Some(d) = delta {
            spec.delta = d;
        }
        if let Some(r) = o.rate {
            spec.rate = r;
        }
        if let Some(s) = o.seed {
            spec.seed = s;
        }
        let s = staggered_scenario(&spec, scheduler.clone())?;
        return Ok(Prepared {
            label: file.label.clone(),
            queries: s.queries,
            removals: Vec::new(),
        });
    }

    // Deadlines are set against what the scheduler expects to see.
    let mut planned = Vec::with_capacity(file.queries.len());
    for spec in &file.queries {
        let (actual, expected) = match o.rate {
            Some(kind) if kind != RateKind::Fr => {
                let nominal = spec.expected.clone().unwrap_or_else(|| spec.actual.clone());
                (reshape(&spec.actual, kind, &spec.id)?, Some(nominal))
            }
            _ => (spec.actual.clone(), spec.expected.clone()),
        };
        let basis = expected.clone().unwrap_or_else(|| actual.clone());
        let placeholder = match spec.deadline {
            Some(DeadlineSpec::At(t)) => t,
            _ => basis.window_end() + Duration(1),
        };
        let q = Query::new(
            spec.id.clone(),
            basis,
            placeholder,
            spec.cost.clone(),
            spec.agg.clone(),
        )?;
        let q = match (delta, &spec.deadline) {
            (Some(_), _) | (None, Some(DeadlineSpec::At(_))) => q,
            (None, Some(DeadlineSpec::Factor(f))) => scale_deadline(&q, *f)?,
            (None, None) => {
                return Err(CliError::Usage(format!(
                    "query {} has no deadline; set deadline_ms or deadline_factor, or pass --delta",
                    spec.id
                )))
            }
        };
        planned.push((q, actual, expected, spec));
    }
    if let Some(d) = delta {
        let staggered = stagger_deadlines(
            planned.iter().map(|p| p.0.clone()).collect(),
            d,
            scheduler.cmax,
        )?;
        for q in staggered {
            let slot = planned
                .iter_mut()
                .find(|p| p.0.id == q.id)
                .expect("same ids");
            slot.0.deadline = q.deadline;
        }
    }
    let mut queries = Vec::with_capacity(planned.len());
    let mut removals = Vec::new();
    for (mut q, actual, expected, spec) in planned {
        q.profile = actual;
        if let Some(t) = spec.remove {
            removals.push((t, q.id.clone()));
        }
        queries.push(ScenarioQuery {
            arrival: spec.arrival.unwrap_or_else(|| q.profile.start()),
            query: q,
            expected,
        });
    }
    Ok(Prepared {
        label: file.label.clone(),
        queries,
        removals,
    })
}

fn single_delta(o: &Overrides) -> Result<Option<Fraction>, CliError> {
    match o.deltas.as_deref() {
        None => Ok(None),
        Some([d]) => Ok(Some(*d)),
        Some(_) => Err(CliError::Usage(
            "this command takes a single --delta value".into(),
        )),
    }
}

fn outcome_of(missed: bool) -> Outcome {
    if missed {
        Outcome::DeadlineMissed
    } else {
        Outcome::Completed
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// `single` and `constraint`: one plan per query, each on its own processor.
fn run_static(
    file: &ScenarioFile,
    scheduler: &SchedulerConfig,
    o: &Overrides,
    out: &Path,
    constraint: bool,
) -> Result<Outcome, CliError> {
    let delta = single_delta(o)?;
    let prep = prepare(file, scheduler, o, delta)?;
    let name = if constraint { "constraint" } else { "single" };
    let mut rows = Vec::new();
    let mut missed = false;
    for sq in &prep.queries {
        let q = &sq.query;
        let plan: BatchPlan = if constraint {
            solve_min_batches(q, q.total_tuples() as usize)?
        } else {
            schedule_single_query(q)?
        };
        debug!("{}: sizes {:?}", q.id, plan.sizes());
        let trace = execute_plan(&plan, q)?;
        write_trace(&out.join(format!("trace_{}.csv", sanitize(&q.id))), &trace)?;
        let m = compute_metrics(&trace, std::slice::from_ref(q), file.baseline);
        missed |= !m.all_deadlines_met();
        rows.extend(metrics_rows(&prep.label, name, delta, None, &m.per_query));
    }
    write_metrics(out, &rows)?;
    write_rows_with_header(
        out.join(BATCHES_PLOT_FILE).as_path(),
        &BATCH_HEADER,
        &cost_vs_batches(&prep.plain()),
    )?;
    Ok(outcome_of(missed))
}

const METRICS_HEADER: [&str; 11] = [
    "scenario",
    "policy",
    "delta",
    "rsf",
    "query_id",
    "total_cost_us",
    "num_batches",
    "deadline_met",
    "tardiness_us",
    "normalized_cost",
    "removed",
];
const BATCH_HEADER: [&str; 5] = [
    "query_id",
    "num_batches",
    "batch_size",
    "total_cost_us",
    "normalized_cost",
];

fn write_metrics(out: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    write_rows_with_header(&out.join(METRICS_FILE), &METRICS_HEADER, rows)
}

struct CellResult {
    policy: Policy,
    delta: Option<Fraction>,
    trace: SimTrace,
    metrics: Metrics,
    label: String,
}

fn run_cell(
    file: &ScenarioFile,
    scheduler: &SchedulerConfig,
    o: &Overrides,
    policy: Policy,
    delta: Option<Fraction>,
) -> Result<(CellResult, Vec<Query>), CliError> {
    let mut config = scheduler.clone();
    config.policy = policy;
    let prep = prepare(file, &config, o, delta)?;
    let run = run_dynamic(&prep.events(), &config)?;
    let queries = prep.plain();
    let metrics = compute_metrics(&run.trace, &queries, file.baseline);
    info!(
        "{policy} delta={}: cost {} misses {}",
        output::opt_fraction(delta),
        format_ratio(metrics.normalized_cost),
        metrics.deadline_miss_count
    );
    Ok((
        CellResult {
            policy,
            delta,
            trace: run.trace,
            metrics,
            label: prep.label,
        },
        queries,
    ))
}

fn normalized_row(c: &CellResult, rsf: Fraction) -> NormalizedCostRow {
    NormalizedCostRow {
        scenario: c.label.clone(),
        policy: c.policy.to_string(),
        delta: output::opt_fraction(c.delta),
        rsf: format_fraction(rsf),
        normalized_cost: format_ratio(c.metrics.normalized_cost),
        total_cost_us: c.metrics.total_cost.0,
        baseline_us: c.metrics.baseline.0,
        deadline_misses: c.metrics.deadline_miss_count,
        queries: c.metrics.per_query.len(),
    }
}

fn run_single_dynamic(
    file: &ScenarioFile,
    scheduler: &SchedulerConfig,
    o: &Overrides,
    out: &Path,
) -> Result<Outcome, CliError> {
    let delta = single_delta(o)?;
    let (cell, queries) = run_cell(file, scheduler, o, scheduler.policy, delta)?;
    write_trace(&out.join("trace.csv"), &cell.trace)?;
    let rows = metrics_rows(
        &cell.label,
        &cell.policy.to_string(),
        delta,
        Some(scheduler.rsf),
        &cell.metrics.per_query,
    );
    write_metrics(out, &rows)?;
    write_rows(
        &out.join(NORMALIZED_PLOT_FILE),
        &[normalized_row(&cell, scheduler.rsf)],
    )?;
    write_rows_with_header(
        &out.join(BATCHES_PLOT_FILE),
        &BATCH_HEADER,
        &cost_vs_batches(&queries),
    )?;
    Ok(outcome_of(!cell.metrics.all_deadlines_met()))
}

fn run_sweep(
    file: &ScenarioFile,
    scheduler: &SchedulerConfig,
    o: &Overrides,
    out: &Path,
) -> Result<Outcome, CliError> {
    let deltas: Vec<Fraction> = o.deltas.clone().unwrap_or_else(|| {
        DEFAULT_DELTAS
            .iter()
            .map(|&(n, d)| Fraction::new(n, d))
            .collect()
    });
    let policies: Vec<Policy> = match o.policy {
        Some(p) => vec![p],
        None => Policy::ALL.to_vec(),
    };
    let mut cells: Vec<(Policy, Fraction)> = policies
        .iter()
        .flat_map(|&p| deltas.iter().map(move |&d| (p, d)))
        .collect();
    cells.sort_by_key(|&(p, d)| (policy_rank(p), Reverse(d)));
    cells.dedup();

    let results: Vec<Result<(CellResult, Vec<Query>), CliError>> = cells
        .par_iter()
        .map(|&(p, d)| run_cell(file, scheduler, o, p, Some(d)))
        .collect();

    let mut metrics = Vec::new();
    let mut plot = Vec::new();
    let mut batches_plot = None;
    let mut missed = false;
    for r in results {
        let (cell, queries) = r?;
        let delta = cell.delta.expect("sweep cells carry a delta");
        let key = format!(
            "{}_d{}",
            cell.policy,
            format_fraction(delta).replace('/', "over")
        );
        write_trace(&out.join(format!("trace_{key}.csv")), &cell.trace)?;
        metrics.extend(metrics_rows(
            &cell.label,
            &cell.policy.to_string(),
            Some(delta),
            Some(scheduler.rsf),
            &cell.metrics.per_query,
        ));
        plot.push(normalized_row(&cell, scheduler.rsf));
        missed |= !cell.metrics.all_deadlines_met();
        batches_plot.get_or_insert_with(|| cost_vs_batches(&queries));
    }
    write_metrics(out, &metrics)?;
    write_rows(&out.join(NORMALIZED_PLOT_FILE), &plot)?;
    write_rows_with_header(
        &out.join(BATCHES_PLOT_FILE),
        &BATCH_HEADER,
        &batches_plot.unwrap_or_default(),
    )?;
    Ok(outcome_of(missed))
}

fn policy_rank(p: Policy) -> usize {
    Policy::ALL.iter().position(|&q| q == p).expect("listed")
}

fn run_fit(samples: &Path, segments: usize, out: &Path) -> Result<Outcome, CliError> {
    #[derive(serde::Deserialize)]
    struct Sample {
        tuples: u64,
        cost_us: i64,
    }
    let mut reader = csv::Reader::from_path(samples)?;
    let mut points = Vec::new();
    for row in reader.deserialize() {
        let s: Sample = row?;
        points.push((s.tuples, Duration(s.cost_us)));
    }
    let fit = fit_piecewise_linear(&points, segments)?;
    let report = format!("model = {}\nsse = {:.6}\n", fit.model, fit.sse);
    print!("{report}");
    let path = out.join("fit.txt");
    fs::write(&path, report).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Outcome::Completed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleRow {
    pub instance: String,
    pub algorithm_cost_us: Option<i64>,
    pub oracle_cost_us: Option<i64>,
    pub algorithm_batches: Option<usize>,
    pub oracle_batches: Option<usize>,
    pub agree: bool,
}

/// Algorithm and oracle agree when both find nothing, or both find plans of
/// equal cost and the algorithm's plan is valid and uses no more batches.
pub fn oracle_compare(q: &Query) -> Result<OracleRow, CliError> {
    let algo = match schedule_single_query(q) {
        Ok(p) => Some(p),
        Err(iqsched_core::Error::Infeasible { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let oracle = match brute_force_optimal_plan(q, Duration::from_secs(1)) {
        Ok(p) => Some(p),
        Err(iqsched_core::Error::Infeasible { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let agree = match (&algo, &oracle) {
        (None, None) => true,
        (Some(a), Some(b)) => {
            a.total_cost == b.total_cost
                && a.num_batches() <= b.num_batches()
                && validate_plan(a, q).is_empty()
        }
        _ => false,
    };
    Ok(OracleRow {
        instance: q.id.clone(),
        algorithm_cost_us: algo.as_ref().map(|p| p.total_cost.0),
        oracle_cost_us: oracle.as_ref().map(|p| p.total_cost.0),
        algorithm_batches: algo.as_ref().map(BatchPlan::num_batches),
        oracle_batches: oracle.as_ref().map(BatchPlan::num_batches),
        agree,
    })
}

fn run_oracle_check(
    max_tuples: u64,
    instances: usize,
    seed: u64,
    out: &Path,
) -> Result<Outcome, CliError> {
    if max_tuples == 0 || max_tuples > ORACLE_MAX_TUPLES {
        return Err(CliError::Usage(format!(
            "--max-tuples must be between 1 and {ORACLE_MAX_TUPLES} (oracle grid limit {ORACLE_MAX_GRID_POINTS} points)"
        )));
    }
    let corpus = small_instance_corpus(seed, instances, max_tuples);
    let rows = corpus
        .par_iter()
        .map(oracle_compare)
        .collect::<Result<Vec<_>, _>>()?;
    let agree = rows.iter().filter(|r| r.agree).count();
    let feasible = rows.iter().filter(|r| r.oracle_cost_us.is_some()).count();
    println!(
        "oracle-check: {agree}/{} instances agree ({feasible} feasible, seed {seed}, max {max_tuples} tuples)",
        rows.len()
    );
    for r in rows.iter().filter(|r| !r.agree) {
        println!(
            "  mismatch {}: algorithm {:?} us in {:?} batches, oracle {:?} us in {:?} batches",
            r.instance,
            r.algorithm_cost_us,
            r.algorithm_batches,
            r.oracle_cost_us,
            r.oracle_batches
        );
    }
    write_rows(&out.join("oracle_check.csv"), &rows)?;
    Ok(if agree == rows.len() {
        Outcome::Completed
    } else {
        Outcome::Disagreement
    })
}

/// Reads a trace CSV written by any command.
pub fn read_trace_file(path: &Path) -> Result<SimTrace, CliError> {
    let f = fs::File::open(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader: Box<dyn BufRead> = Box::new(std::io::BufReader::new(f));
    Ok(SimTrace::read_csv(reader)?)
}
