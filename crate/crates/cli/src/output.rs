//! CSV writers for metrics, traces and plot data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use iqsched_core::arrival::format_fraction;
use iqsched_core::dynamic_sched::total_batched_cost;
use iqsched_core::simulator::QueryMetrics;
use iqsched_core::{Fraction, Query, SimTrace};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const NORMALIZED_PLOT_FILE: &str = "plotdata_normalized_cost.csv";
pub const BATCHES_PLOT_FILE: &str = "plotdata_cost_vs_batches.csv";

/// Largest batch count listed per query in the cost-vs-batches plot data.
pub const PLOT_MAX_BATCHES: u64 = 20;

/// One line of `metrics.csv`. Columns that do not apply to a command are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub policy: String,
    pub delta: String,
    pub rsf: String,
    pub query_id: String,
    pub total_cost_us: i64,
    pub num_batches: usize,
    pub deadline_met: bool,
    pub tardiness_us: i64,
    pub normalized_cost: String,
    pub removed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCostRow {
    pub scenario: String,
    pub policy: String,
    pub delta: String,
    pub rsf: String,
    pub normalized_cost: String,
    pub total_cost_us: i64,
    pub baseline_us: i64,
    pub deadline_misses: usize,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVsBatchesRow {
    pub query_id: String,
    pub num_batches: u64,
    pub batch_size: u64,
    pub total_cost_us: i64,
    pub normalized_cost: String,
}

/// Fixed six-decimal rendering so reruns produce identical bytes.
pub fn format_ratio(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "inf".into()
    }
}

pub fn opt_fraction(f: Option<Fraction>) -> String {
    f.map(format_fraction).unwrap_or_default()
}

pub fn metrics_rows(
    scenario: &str,
    policy: &str,
    delta: Option<Fraction>,
    rsf: Option<Fraction>,
    per_query: &[QueryMetrics],
) -> Vec<MetricsRow> {
    per_query
        .iter()
        .map(|m| MetricsRow {
            scenario: scenario.to_string(),
            policy: policy.to_string(),
            delta: opt_fraction(delta),
            rsf: opt_fraction(rsf),
            query_id: m.query_id.clone(),
            total_cost_us: m.total_cost.0,
            num_batches: m.num_batches,
            deadline_met: m.deadline_met,
            tardiness_us: m.tardiness.0,
            normalized_cost: format_ratio(m.normalized_cost),
            removed: m.removed,
        })
        .collect()
}

/// Total cost of splitting each query's window into 1, 2, … equal batches.
pub fn cost_vs_batches(queries: &[Query]) -> Vec<CostVsBatchesRow> {
    let mut rows = Vec::new();
    for q in queries {
        let total = q.total_tuples();
        let single = q.min_comp_cost();
        let mut last = 0;
        for b in 1..=PLOT_MAX_BATCHES.min(total) {
            let size = total.div_ceil(b);
            let batches = total.div_ceil(size);
            if batches == last {
                continue;
            }
            last = batches;
            let cost = total_batched_cost(q, total, size);
            let ratio = if single.0 == 0 {
                1.0
            } else {
                cost.0 as f64 / single.0 as f64
            };
            rows.push(CostVsBatchesRow {
                query_id: q.id.clone(),
                num_batches: batches,
                batch_size: size,
                total_cost_us: cost.0,
                normalized_cost: format_ratio(ratio),
            });
        }
    }
    rows
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the header even when there are no rows.
pub fn write_rows_with_header<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: &[T],
) -> Result<(), CliError> {
    if rows.is_empty() {
        let mut w = create(path)?;
        writeln!(w, "{}", header.join(",")).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        return Ok(());
    }
    write_rows(path, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(CliError::from))
        .collect()
}

pub fn write_trace(path: &Path, trace: &SimTrace) -> Result<(), CliError> {
    let mut w = create(path)?;
    trace
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
}
