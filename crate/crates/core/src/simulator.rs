//! Virtual-time execution traces, plan validation and cost metrics.
//!
//! There is a single processor. A trace is the ordered list of everything it
//! did: batch and aggregation intervals plus bookkeeping marks (query
//! arrival/removal, window end, deadline misses).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::single_query::{BatchPlan, Query};
use crate::time::{Duration, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    /// The last tuple of the query's window has arrived.
    ArrivalMark,
    BatchStart,
    BatchEnd,
    AggStart,
    AggEnd,
    QueryAdd,
    QueryRemove,
    DeadlineMiss,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ArrivalMark => "arrival_mark",
            EventKind::BatchStart => "batch_start",
            EventKind::BatchEnd => "batch_end",
            EventKind::AggStart => "agg_start",
            EventKind::AggEnd => "agg_end",
            EventKind::QueryAdd => "query_add",
            EventKind::QueryRemove => "query_remove",
            EventKind::DeadlineMiss => "deadline_miss",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "arrival_mark" => EventKind::ArrivalMark,
            "batch_start" => EventKind::BatchStart,
            "batch_end" => EventKind::BatchEnd,
            "agg_start" => EventKind::AggStart,
            "agg_end" => EventKind::AggEnd,
            "query_add" => EventKind::QueryAdd,
            "query_remove" => EventKind::QueryRemove,
            "deadline_miss" => EventKind::DeadlineMiss,
            other => return Err(Error::BadNumber(format!("unknown event kind {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub time: Time,
    pub kind: EventKind,
    pub query_id: String,
    pub tuples: u64,
    pub duration: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_CSV_HEADER: &str = "time_us,event,query_id,tuples,duration_us";

impl SimTrace {
    pub fn push(
        &mut self,
        time: Time,
        kind: EventKind,
        query_id: &str,
        tuples: u64,
        duration: Duration,
    ) {
        self.rows.push(TraceRow {
            time,
            kind,
            query_id: query_id.to_string(),
            tuples,
            duration,
        });
    }

    pub fn rows_of<'a>(&'a self, kind: EventKind) -> impl Iterator<Item = &'a TraceRow> + 'a {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// Busy intervals `(start, end, kind, query)` in trace order.
    pub fn busy_intervals(&self) -> Vec<(Time, Time, EventKind, &str)> {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, EventKind::BatchStart | EventKind::AggStart))
            .map(|r| (r.time, r.time + r.duration, r.kind, r.query_id.as_str()))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{TRACE_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.time.0, r.kind, r.query_id, r.tuples, r.duration.0
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<SimTrace> {
        let mut trace = SimTrace::default();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::BadNumber(e.to_string()))?;
            if i == 0 {
                if line.trim() != TRACE_CSV_HEADER {
                    return Err(Error::BadNumber(format!(
                        "unexpected trace header {line:?}"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::BadNumber(format!(
                    "line {}: expected 5 fields",
                    i + 1
                )));
            }
            let num = |s: &str| {
                s.parse::<i64>()
                    .map_err(|_| Error::BadNumber(s.to_string()))
            };
            trace.rows.push(TraceRow {
                time: Time(num(f[0])?),
                kind: f[1].parse()?,
                query_id: f[2].to_string(),
                tuples: f[3]
                    .parse()
                    .map_err(|_| Error::BadNumber(f[3].to_string()))?,
                duration: Duration(num(f[4])?),
            });
        }
        Ok(trace)
    }
}

/// A broken plan invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Batch sizes do not add up to the window's tuple count, or a batch is empty.
    Constraint1 {
        expected: u64,
        got: u64,
        empty_batches: usize,
    },
    /// Batch `index` overlaps its successor, or the last batch overlaps the aggregation.
    Constraint2 { index: usize },
    /// Batch `index` starts before its cumulative tuples have arrived.
    Constraint3 {
        index: usize,
        available: u64,
        needed: u64,
    },
    /// Aggregation finishes after the deadline.
    AggDeadline { completion: Time, deadline: Time },
    /// Recorded durations or total disagree with the query's cost models.
    Duration { index: Option<usize> },
}

impl Violation {
    pub fn constraint(&self) -> &'static str {
        match self {
            Violation::Constraint1 { .. } => "constraint-1",
            Violation::Constraint2 { .. } => "constraint-2",
            Violation::Constraint3 { .. } => "constraint-3",
            Violation::AggDeadline { .. } => "agg-deadline",
            Violation::Duration { .. } => "duration",
        }
    }
}

pub fn validate_plan(plan: &BatchPlan, query: &Query) -> Vec<Violation> {
    let mut out = Vec::new();
    let got: u64 = plan.batches.iter().map(|b| b.size).sum();
    let empty_batches = plan.batches.iter().filter(|b| b.size == 0).count();
    if got != query.total_tuples() || empty_batches > 0 {
        out.push(Violation::Constraint1 {
            expected: query.total_tuples(),
            got,
            empty_batches,
        });
    }
    let n = plan.batches.len();
    let mut cumulative = 0;
    for (i, b) in plan.batches.iter().enumerate() {
        let next_start = if i + 1 < n {
            plan.batches[i + 1].start
        } else {
            plan.final_agg_start
        };
        if b.end() > next_start {
            out.push(Violation::Constraint2 { index: i });
        }
        cumulative += b.size;
        let available = query.profile.tuples_available_at(b.start);
        if available < cumulative {
            out.push(Violation::Constraint3 {
                index: i,
                available,
                needed: cumulative,
            });
        }
        if b.duration != query.cost.eval(b.size) {
            out.push(Violation::Duration { index: Some(i) });
        }
    }
    let batch_cost: Duration = plan.batches.iter().map(|b| b.duration).sum();
    if plan.final_agg_duration != query.agg.eval(n as u64)
        || plan.total_cost != batch_cost + plan.final_agg_duration
    {
        out.push(Violation::Duration { index: None });
    }
    if plan.completion() > query.deadline {
        out.push(Violation::AggDeadline {
            completion: plan.completion(),
            deadline: query.deadline,
        });
    }
    out
}

/// Replays a valid plan on the virtual processor.
pub fn execute_plan(plan: &BatchPlan, query: &Query) -> Result<SimTrace> {
    let violations = validate_plan(plan, query);
    if !violations.is_empty() {
        let names: Vec<&str> = violations.iter().map(Violation::constraint).collect();
        return Err(Error::InvalidPlan {
            query: query.id.clone(),
            violations: names.join(", "),
        });
    }
    let mut trace = SimTrace::default();
    for b in &plan.batches {
        trace.push(
            b.start,
            EventKind::BatchStart,
            &query.id,
            b.size,
            b.duration,
        );
        trace.push(b.end(), EventKind::BatchEnd, &query.id, b.size, b.duration);
    }
    let n = plan.batches.len() as u64;
    trace.push(
        plan.final_agg_start,
        EventKind::AggStart,
        &query.id,
        n,
        plan.final_agg_duration,
    );
    trace.push(
        plan.completion(),
        EventKind::AggEnd,
        &query.id,
        n,
        plan.final_agg_duration,
    );
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Each query against its own single-batch cost; the global figure is the mean ratio.
    SingleBatchMin,
    /// Total cost against the sum of all single-batch costs.
    SumSingleBatchMin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub query_id: String,
    pub total_cost: Duration,
    pub num_batches: usize,
    pub completion: Option<Time>,
    pub deadline: Time,
    pub deadline_met: bool,
    pub tardiness: Duration,
    pub removed: bool,
    /// Cost of processing the window in one batch.
    pub baseline: Duration,
    pub normalized_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub per_query: Vec<QueryMetrics>,
    pub total_cost: Duration,
    pub baseline: Duration,
    pub normalized_cost: f64,
    pub deadline_miss_count: usize,
}

impl Metrics {
    pub fn all_deadlines_met(&self) -> bool {
        self.deadline_miss_count == 0
    }
}

fn ratio(cost: Duration, baseline: Duration) -> f64 {
    if baseline.0 == 0 {
        if cost.0 == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        cost.0 as f64 / baseline.0 as f64
    }
}

pub fn compute_metrics(trace: &SimTrace, queries: &[Query], mode: BaselineMode) -> Metrics {
    #[derive(Default)]
    struct Acc {
        cost: Duration,
        batches: usize,
        completion: Option<Time>,
        removed: bool,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in &trace.rows {
        let a = acc.entry(r.query_id.as_str()).or_default();
        match r.kind {
            EventKind::BatchEnd => {
                a.cost += r.duration;
                a.batches += 1;
            }
            EventKind::AggEnd => {
                a.cost += r.duration;
                a.completion = Some(r.time);
            }
            EventKind::QueryRemove if a.completion.is_none() => a.removed = true,
            _ => {}
        }
    }

    let per_query: Vec<QueryMetrics> = queries
        .iter()
        .map(|q| {
            let a = acc.remove(q.id.as_str()).unwrap_or_default();
            let baseline = q.min_comp_cost();
            let deadline_met = a.completion.is_some_and(|c| c <= q.deadline);
            let tardiness = a
                .completion
                .map_or(Duration::ZERO, |c| (c - q.deadline).max(Duration::ZERO));
            QueryMetrics {
                query_id: q.id.clone(),
                total_cost: a.cost,
                num_batches: a.batches,
                completion: a.completion,
                deadline: q.deadline,
                deadline_met,
                tardiness,
                removed: a.removed,
                baseline,
                normalized_cost: ratio(a.cost, baseline),
            }
        })
        .collect();

    let total_cost: Duration = per_query.iter().map(|m| m.total_cost).sum();
    let baseline: Duration = per_query.iter().map(|m| m.baseline).sum();
    let normalized_cost = match mode {
        BaselineMode::SumSingleBatchMin => ratio(total_cost, baseline),
        BaselineMode::SingleBatchMin if per_query.is_empty() => 1.0,
        BaselineMode::SingleBatchMin => {
            per_query.iter().map(|m| m.normalized_cost).sum::<f64>() / per_query.len() as f64
        }
    };
    let deadline_miss_count = per_query
        .iter()
        .filter(|m| !m.removed && !m.deadline_met)
        .count();
    Metrics {
        per_query,
        total_cost,
        baseline,
        normalized_cost,
        deadline_miss_count,
    }
}

/// Structural problems in a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceViolation {
    Unsorted {
        row: usize,
    },
    /// A start row without its end, an end without a start, or a mismatched pair.
    Unmatched {
        row: usize,
    },
    Overlap {
        row: usize,
    },
    CmaxExceeded {
        row: usize,
        duration: Duration,
    },
}

/// Checks ordering, start/end pairing, single-processor exclusivity and, if
/// given, the per-batch `cmax` bound. Aggregation intervals are exempt from
/// `cmax`.
pub fn validate_trace(trace: &SimTrace, cmax: Option<Duration>) -> Vec<TraceViolation> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &TraceRow)> = None;
    let mut busy_until = Time(i64::MIN);
    for (i, r) in trace.rows.iter().enumerate() {
        if i > 0 && r.time < trace.rows[i - 1].time {
            out.push(TraceViolation::Unsorted { row: i });
        }
        match r.kind {
            EventKind::BatchStart | EventKind::AggStart => {
                if open.is_some() {
                    out.push(TraceViolation::Unmatched { row: i });
                }
                if r.time < busy_until {
                    out.push(TraceViolation::Overlap { row: i });
                }
                if r.kind == EventKind::BatchStart {
                    if let Some(limit) = cmax {
                        if r.duration > limit {
                            out.push(TraceViolation::CmaxExceeded {
                                row: i,
                                duration: r.duration,
                            });
                        }
                    }
                }
                open = Some((i, r));
            }
            EventKind::BatchEnd | EventKind::AggEnd => {
                let expected = if r.kind == EventKind::BatchEnd {
                    EventKind::BatchStart
                } else {
                    EventKind::AggStart
                };
                match open.take() {
                    Some((_, s))
                        if s.kind == expected
                            && s.query_id == r.query_id
                            && s.tuples == r.tuples
                            && s.duration == r.duration
                            && s.time + s.duration == r.time =>
                    {
                        busy_until = r.time;
                    }
                    _ => out.push(TraceViolation::Unmatched { row: i }),
                }
            }
            _ => {}
        }
    }
    if let Some((i, _)) = open {
        out.push(TraceViolation::Unmatched { row: i });
    }
    out
}
