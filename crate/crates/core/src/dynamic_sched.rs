//! Non-preemptive multi-query scheduling on one processor.
//!
//! Each admitted query gets a minimum batch size: the smallest batch whose
//! implied total cost stays within `(1 + rsf)` of its single-batch cost and
//! whose own cost fits in `cmax`. A query becomes ready once that many
//! unprocessed tuples are available (or its stream has ended, or, for
//! variable-rate streams, once the expected arrival of the next minimum batch
//! has passed). Whenever the processor is free, one ready query is picked by
//! the configured policy and one batch of it runs to completion. The final
//! aggregation follows a query's last batch immediately.
//!
//! The simulation is driven by exact wakeup times rather than by polling:
//! the next decision happens at a batch end, an external event, or the
//! earliest instant at which some query becomes ready.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::arrival::{estimate_total_tuples, ArrivalProfile};
use crate::error::{Error, Result};
use crate::rational::Fraction;
use crate::simulator::{EventKind, SimTrace};
use crate::single_query::Query;
use crate::time::{Duration, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Edf,
    Llf,
    Sjf,
    Rr,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Edf, Policy::Llf, Policy::Sjf, Policy::Rr];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Edf => "edf",
            Policy::Llf => "llf",
            Policy::Sjf => "sjf",
            Policy::Rr => "rr",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edf" => Ok(Policy::Edf),
            "llf" => Ok(Policy::Llf),
            "sjf" => Ok(Policy::Sjf),
            "rr" => Ok(Policy::Rr),
            other => Err(Error::InvalidConfig(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateMode {
    FixedKnownTotal,
    VariableKnownTotal,
    VariableEstimatedTotal,
}

impl RateMode {
    fn is_variable(self) -> bool {
        !matches!(self, RateMode::FixedKnownTotal)
    }
}

impl fmt::Display for RateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateMode::FixedKnownTotal => "fixed",
            RateMode::VariableKnownTotal => "variable-known",
            RateMode::VariableEstimatedTotal => "variable-estimated",
        })
    }
}

impl FromStr for RateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(RateMode::FixedKnownTotal),
            "variable-known" => Ok(RateMode::VariableKnownTotal),
            "variable-estimated" => Ok(RateMode::VariableEstimatedTotal),
            other => Err(Error::InvalidConfig(format!("unknown rate mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerConfig {
    /// Allowed fractional cost inflation over the single-batch minimum.
    pub rsf: Fraction,
    /// Upper bound on the cost of any one batch.
    pub cmax: Duration,
    pub policy: Policy,
    pub rate_mode: RateMode,
    /// Take every available tuple (up to `cmax`) instead of exactly the minimum batch.
    pub greedy_batch: bool,
    /// Only decide at multiples of `cmax` after the first event.
    pub strict_polling: bool,
}

impl SchedulerConfig {
    pub fn new(rsf: Fraction, cmax: Duration, policy: Policy) -> Self {
        SchedulerConfig {
            rsf,
            cmax,
            policy,
            rate_mode: RateMode::FixedKnownTotal,
            greedy_batch: true,
            strict_polling: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cmax <= Duration::ZERO {
            return Err(Error::InvalidConfig("cmax must be positive".into()));
        }
        if self.rsf < Fraction::from_integer(0) {
            return Err(Error::InvalidConfig("rsf must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinBatch {
    pub size: u64,
    /// No size satisfied the cost budget; `size` is the largest batch under `cmax`.
    pub budget_exceeded: bool,
}

/// Cost of processing `total` tuples in batches of `x` plus the final aggregation.
pub fn total_batched_cost(query: &Query, total: u64, x: u64) -> Duration {
    if total == 0 {
        return Duration::ZERO;
    }
    let full = total / x;
    let rem = total % x;
    let batches = full + u64::from(rem > 0);
    query.cost.eval(x) * full as i64 + query.cost.eval(rem) + query.agg.eval(batches)
}

pub fn find_min_batch_size(
    query: &Query,
    total: u64,
    rsf: Fraction,
    cmax: Duration,
) -> Result<MinBatch> {
    if query.cost.eval(1) > cmax {
        return Err(Error::CmaxTooSmall {
            query: query.id.clone(),
        });
    }
    if total == 0 {
        return Ok(MinBatch {
            size: 1,
            budget_exceeded: false,
        });
    }
    // budget = (1 + rsf)·cost(total), compared exactly as den·batched ≤ (num + den)·cost.
    let (num, den) = (*rsf.numer() as i128, *rsf.denom() as i128);
    let budget = (num + den) * query.cost.eval(total).0 as i128;
    let floor = (2 * query.agg.num_groups).clamp(1, total);
    let cap = query.cost.estimate_tuples_processed(cmax).min(total);
    for x in floor..=cap {
        if den * total_batched_cost(query, total, x).0 as i128 <= budget {
            return Ok(MinBatch {
                size: x,
                budget_exceeded: false,
            });
        }
    }
    Ok(MinBatch {
        size: cap,
        budget_exceeded: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryStatus {
    Waiting,
    Ready,
    Done,
}

#[derive(Debug, Clone)]
pub struct DynamicQueryState {
    pub query: Query,
    /// What the scheduler believes about arrivals; the query's own profile is the truth.
    pub expected: ArrivalProfile,
    pub arrival_time: Time,
    pub min_batch_size: u64,
    pub budget_exceeded: bool,
    pub processed: u64,
    pub batches_done: u64,
    /// Known total, or the current estimate of it.
    pub projected_total: u64,
    pub est_maturity: Option<Time>,
    pub status: QueryStatus,
    batch_cap: u64,
}

impl DynamicQueryState {
    pub fn new(
        query: Query,
        expected: Option<ArrivalProfile>,
        arrival_time: Time,
        config: &SchedulerConfig,
    ) -> Result<Self> {
        let total = query.total_tuples();
        let mb = find_min_batch_size(&query, total, config.rsf, config.cmax)?;
        let batch_cap = query.cost.estimate_tuples_processed(config.cmax);
        let expected = expected.unwrap_or_else(|| query.profile.clone());
        Ok(DynamicQueryState {
            query,
            expected,
            arrival_time,
            min_batch_size: mb.size,
            budget_exceeded: mb.budget_exceeded,
            processed: 0,
            batches_done: 0,
            projected_total: total,
            est_maturity: None,
            status: QueryStatus::Waiting,
            batch_cap,
        })
    }

    pub fn id(&self) -> &str {
        &self.query.id
    }

    pub fn deadline(&self) -> Time {
        self.query.deadline
    }

    fn available(&self, now: Time) -> u64 {
        self.query.profile.tuples_available_at(now)
    }

    /// Cost of the pending tuples in minimum-size batches plus the final aggregation.
    pub fn remaining_cost(&self) -> Duration {
        let pending = self.projected_total.saturating_sub(self.processed);
        let mbs = self.min_batch_size;
        let full = pending / mbs;
        let rem = pending % mbs;
        let future = full + u64::from(rem > 0);
        self.query.cost.eval(mbs) * full as i64
            + self.query.cost.eval(rem)
            + self.query.agg.eval(self.batches_done + future)
    }

    pub fn laxity(&self, now: Time) -> Duration {
        self.query.deadline - now - self.remaining_cost()
    }

    /// Size of the batch this query would run if picked at `now`.
    pub fn next_batch_size(&self, now: Time, greedy: bool) -> u64 {
        let unprocessed = self.available(now) - self.processed;
        if greedy {
            unprocessed.min(self.batch_cap)
        } else {
            unprocessed.min(self.min_batch_size)
        }
    }

    /// Re-evaluates estimates and readiness at `now`.
    pub fn refresh(&mut self, now: Time, config: &SchedulerConfig) -> Result<()> {
        if self.status == QueryStatus::Done {
            return Ok(());
        }
        let total = self.query.total_tuples();
        let available = self.available(now);
        if config.rate_mode == RateMode::VariableEstimatedTotal {
            let projected = if available == total {
                total
            } else {
                estimate_total_tuples(&self.expected, available, now).max(available)
            };
            if projected != self.projected_total {
                self.projected_total = projected;
                let mb = find_min_batch_size(&self.query, projected, config.rsf, config.cmax)?;
                self.min_batch_size = mb.size;
                self.budget_exceeded = mb.budget_exceeded;
            }
        }
        self.est_maturity = if config.rate_mode.is_variable() {
            let target = (self.processed + self.min_batch_size).min(self.expected.total());
            self.expected.input_time(target).ok()
        } else {
            None
        };
        let unprocessed = available - self.processed;
        let all_arrived = available == total;
        let matured = self.est_maturity.is_some_and(|m| now >= m) && unprocessed >= 1;
        let ready = unprocessed >= self.min_batch_size
            || (all_arrived && (unprocessed > 0 || self.processed == total))
            || matured;
        self.status = if ready {
            QueryStatus::Ready
        } else {
            QueryStatus::Waiting
        };
        Ok(())
    }

    /// Earliest instant after `now` at which this (waiting) query might become ready.
    fn next_wakeup(&self, now: Time, config: &SchedulerConfig) -> Option<Time> {
        let profile = &self.query.profile;
        let total = self.query.total_tuples();
        let at = |n: u64| {
            if n <= total {
                profile.input_time(n).ok()
            } else {
                None
            }
        };
        let mut candidates = vec![
            at(self.processed + self.min_batch_size),
            Some(self.query.window_end()),
        ];
        if let Some(m) = self.est_maturity {
            candidates.push(at(self.processed + 1).map(|t| t.max(m)));
        }
        if config.rate_mode == RateMode::VariableEstimatedTotal {
            // The estimate moves with both the real and the expected curve.
            candidates.push(at(self.available(now) + 1));
            let on_curve = self.expected.tuples_available_at(now);
            candidates.push(self.expected.input_time(on_curve + 1).ok());
        }
        candidates.into_iter().flatten().filter(|&t| t > now).min()
    }
}

/// Picks among ready queries; keeps the round-robin cursor between calls.
#[derive(Debug, Clone, Default)]
pub struct Selector {
    rr_cursor: Option<String>,
}

impl Selector {
    pub fn select<'a>(
        &mut self,
        ready: &[&'a DynamicQueryState],
        policy: Policy,
        now: Time,
        greedy: bool,
    ) -> Option<&'a DynamicQueryState> {
        let tie = |s: &DynamicQueryState| (s.deadline(), s.id().to_string());
        let picked = match policy {
            Policy::Edf => ready.iter().min_by_key(|s| tie(s)),
            Policy::Llf => ready.iter().min_by_key(|s| (s.laxity(now), tie(s))),
            Policy::Sjf => ready.iter().min_by_key(|s| {
                let size = s.next_batch_size(now, greedy);
                (s.query.cost.eval(size), tie(s))
            }),
            Policy::Rr => {
                let mut by_id: Vec<&&DynamicQueryState> = ready.iter().collect();
                by_id.sort_by(|a, b| a.id().cmp(b.id()));
                let after = self
                    .rr_cursor
                    .as_deref()
                    .and_then(|c| by_id.iter().find(|s| s.id() > c).copied());
                after.or_else(|| by_id.first().copied())
            }
        }
        .copied();
        if let Some(s) = picked {
            self.rr_cursor = Some(s.id().to_string());
        }
        picked
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DynamicEvent {
    /// Query admission; `expected` is the arrival profile the scheduler plans with.
    Add {
        time: Time,
        query: Query,
        expected: Option<ArrivalProfile>,
    },
    Remove {
        time: Time,
        query_id: String,
    },
}

impl DynamicEvent {
    pub fn time(&self) -> Time {
        match self {
            DynamicEvent::Add { time, .. } | DynamicEvent::Remove { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryReport {
    pub query_id: String,
    pub min_batch_size: u64,
    pub budget_exceeded: bool,
    pub added: Time,
    pub removed: Option<Time>,
    pub completion: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicRun {
    pub trace: SimTrace,
    /// In admission order.
    pub reports: Vec<QueryReport>,
}

fn check_events(events: &[DynamicEvent], config: &SchedulerConfig) -> Result<()> {
    config.validate()?;
    let mut seen = HashSet::new();
    for (i, e) in events.iter().enumerate() {
        if i > 0 && e.time() < events[i - 1].time() {
            return Err(Error::UnorderedEvents(e.time()));
        }
        match e {
            DynamicEvent::Add { query, .. } => {
                if !seen.insert(query.id.as_str()) {
                    return Err(Error::DuplicateQuery(query.id.clone()));
                }
                if query.cost.eval(1) > config.cmax {
                    return Err(Error::CmaxTooSmall {
                        query: query.id.clone(),
                    });
                }
            }
            DynamicEvent::Remove { query_id, .. } => {
                if !seen.contains(query_id.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "removal of query {query_id} before it was added"
                    )));
                }
            }
        }
    }
    Ok(())
}

struct Engine<'c> {
    config: &'c SchedulerConfig,
    active: Vec<DynamicQueryState>,
    reports: BTreeMap<String, (usize, QueryReport, Query)>,
    trace: SimTrace,
    selector: Selector,
    free_at: Time,
    // Query id and end of the most recent busy interval.
    last_run: Option<(String, Time)>,
}

impl Engine<'_> {
    fn apply(&mut self, event: &DynamicEvent) -> Result<()> {
        match event {
            DynamicEvent::Add {
                time,
                query,
                expected,
            } => {
                let state =
                    DynamicQueryState::new(query.clone(), expected.clone(), *time, self.config)?;
                self.trace.push(
                    *time,
                    EventKind::QueryAdd,
                    &query.id,
                    query.total_tuples(),
                    Duration::ZERO,
                );
                let order = self.reports.len();
                self.reports.insert(
                    query.id.clone(),
                    (
                        order,
                        QueryReport {
                            query_id: query.id.clone(),
                            min_batch_size: state.min_batch_size,
                            budget_exceeded: state.budget_exceeded,
                            added: *time,
                            removed: None,
                            completion: None,
                        },
                        query.clone(),
                    ),
                );
                self.active.push(state);
            }
            DynamicEvent::Remove { time, query_id } => {
                // A running batch (and any aggregation folded into it) finishes first.
                let effective = match &self.last_run {
                    Some((id, end)) if id == query_id && *end > *time => *end,
                    _ => *time,
                };
                self.active.retain(|s| s.id() != query_id);
                self.trace.push(
                    effective,
                    EventKind::QueryRemove,
                    query_id,
                    0,
                    Duration::ZERO,
                );
                if let Some((_, report, _)) = self.reports.get_mut(query_id) {
                    report.removed.get_or_insert(effective);
                }
            }
        }
        Ok(())
    }

    /// Starts one batch if any query is ready. Returns whether one was started.
    fn decide(&mut self, now: Time) -> Result<bool> {
        for s in &mut self.active {
            s.refresh(now, self.config)?;
        }
        let ready: Vec<&DynamicQueryState> = self
            .active
            .iter()
            .filter(|s| s.status == QueryStatus::Ready)
            .collect();
        let Some(pick) =
            self.selector
                .select(&ready, self.config.policy, now, self.config.greedy_batch)
        else {
            return Ok(false);
        };
        let id = pick.id().to_string();
        let idx = self
            .active
            .iter()
            .position(|s| s.id() == id)
            .expect("picked from active");
        let state = &mut self.active[idx];
        let size = state.next_batch_size(now, self.config.greedy_batch);
        let mut end = now;
        if size > 0 {
            let d = state.query.cost.eval(size);
            end = now + d;
            self.trace.push(now, EventKind::BatchStart, &id, size, d);
            self.trace.push(end, EventKind::BatchEnd, &id, size, d);
            state.processed += size;
            state.batches_done += 1;
        }
        log::trace!("{now:?}: {id} runs {size} tuples");
        if state.processed == state.query.total_tuples() {
            let n = state.batches_done;
            let agg = state.query.agg.eval(n);
            self.trace.push(end, EventKind::AggStart, &id, n, agg);
            end += agg;
            self.trace.push(end, EventKind::AggEnd, &id, n, agg);
            state.status = QueryStatus::Done;
            if let Some((_, report, _)) = self.reports.get_mut(&id) {
                report.completion = Some(end);
            }
            self.active.remove(idx);
        }
        self.free_at = end;
        self.last_run = Some((id, end));
        Ok(true)
    }

    fn next_wakeup(&self, now: Time) -> Option<Time> {
        self.active
            .iter()
            .filter_map(|s| s.next_wakeup(now, self.config))
            .min()
    }

    // Window-end marks and deadline misses, derived once the run is over.
    fn finish(mut self) -> DynamicRun {
        let mut reports: Vec<(usize, QueryReport, Query)> = self.reports.into_values().collect();
        reports.sort_by_key(|r| r.0);
        for (_, r, q) in &reports {
            let alive_at = |t: Time| r.removed.is_none_or(|rm| rm > t);
            let mark = q.window_end().max(r.added);
            if alive_at(mark) {
                self.trace.push(
                    mark,
                    EventKind::ArrivalMark,
                    &q.id,
                    q.total_tuples(),
                    Duration::ZERO,
                );
            }
            let late = r.completion.is_none_or(|c| c > q.deadline);
            if late && alive_at(q.deadline) && q.deadline >= r.added {
                self.trace.push(
                    q.deadline,
                    EventKind::DeadlineMiss,
                    &q.id,
                    0,
                    Duration::ZERO,
                );
            }
        }
        self.trace.rows.sort_by_key(|r| r.time);
        DynamicRun {
            trace: self.trace,
            reports: reports.into_iter().map(|r| r.1).collect(),
        }
    }
}

fn align_to_poll(t: Time, origin: Time, period: Duration) -> Time {
    let off = (t - origin).0;
    let rem = off.rem_euclid(period.0);
    if rem == 0 {
        t
    } else {
        t + Duration(period.0 - rem)
    }
}

/// Simulates the scheduler over a sequence of admissions and removals.
pub fn run_dynamic(events: &[DynamicEvent], config: &SchedulerConfig) -> Result<DynamicRun> {
    check_events(events, config)?;
    let mut engine = Engine {
        config,
        active: Vec::new(),
        reports: BTreeMap::new(),
        trace: SimTrace::default(),
        selector: Selector::default(),
        free_at: Time(i64::MIN),
        last_run: None,
    };
    let Some(first) = events.first() else {
        return Ok(engine.finish());
    };
    let origin = first.time();
    let mut now = origin;
    let mut next_event = 0;
    loop {
        while next_event < events.len() && events[next_event].time() <= now {
            engine.apply(&events[next_event])?;
            next_event += 1;
        }
        if engine.decide(now)? {
            now = engine.free_at;
            if config.strict_polling {
                now = align_to_poll(now, origin, config.cmax);
            }
            continue;
        }
        let external = events.get(next_event).map(DynamicEvent::time);
        let next = [external, engine.next_wakeup(now)]
            .into_iter()
            .flatten()
            .min();
        match next {
            Some(t) if config.strict_polling => now = align_to_poll(t, origin, config.cmax),
            Some(t) => now = t,
            None => break,
        }
    }
    Ok(engine.finish())
}

/// An instant at which the processor sat idle although a query was ready.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdleViolation {
    pub time: Time,
    pub query_id: String,
}

/// Replays readiness from the trace alone and reports idle gaps during which
/// some query was ready. Each gap is probed at its first instant and at its
/// last microsecond. Strict-polling runs are not work-conserving and will
/// generally report violations.
pub fn check_non_idling(
    events: &[DynamicEvent],
    config: &SchedulerConfig,
    trace: &SimTrace,
) -> Vec<IdleViolation> {
    struct Life<'a> {
        query: &'a Query,
        expected: &'a ArrivalProfile,
        added: Time,
        gone: Option<Time>,
    }
    let mut lives: Vec<Life> = Vec::new();
    for e in events {
        if let DynamicEvent::Add {
            time,
            query,
            expected,
        } = e
        {
            lives.push(Life {
                query,
                expected: expected.as_ref().unwrap_or(&query.profile),
                added: *time,
                gone: None,
            });
        }
    }
    for row in &trace.rows {
        if matches!(row.kind, EventKind::QueryRemove | EventKind::AggEnd) {
            if let Some(l) = lives.iter_mut().find(|l| l.query.id == row.query_id) {
                l.gone = Some(l.gone.map_or(row.time, |g| g.min(row.time)));
            }
        }
    }

    let mut busy: Vec<(Time, Time)> = trace
        .busy_intervals()
        .into_iter()
        .map(|(s, e, _, _)| (s, e))
        .collect();
    busy.sort();
    let Some(origin) = events.first().map(DynamicEvent::time) else {
        return Vec::new();
    };
    let mut gaps = Vec::new();
    let mut cursor = origin;
    for &(s, e) in &busy {
        if s > cursor {
            gaps.push((cursor, s));
        }
        cursor = cursor.max(e);
    }
    let horizon = lives.iter().filter_map(|l| l.gone).max().unwrap_or(cursor);
    if horizon > cursor {
        gaps.push((cursor, horizon));
    }

    let processed_by = |id: &str, t: Time| -> (u64, u64) {
        trace
            .rows
            .iter()
            .filter(|r| r.kind == EventKind::BatchEnd && r.query_id == id && r.time <= t)
            .fold((0, 0), |(n, b), r| (n + r.tuples, b + 1))
    };
    let ready_at = |l: &Life, t: Time| -> bool {
        if t < l.added || l.gone.is_some_and(|g| g <= t) {
            return false;
        }
        let total = l.query.total_tuples();
        let available = l.query.profile.tuples_available_at(t);
        let (processed, _) = processed_by(&l.query.id, t);
        let believed_total = match config.rate_mode {
            RateMode::VariableEstimatedTotal if available < total => {
                estimate_total_tuples(l.expected, available, t).max(available)
            }
            _ => total,
        };
        let Ok(mb) = find_min_batch_size(l.query, believed_total, config.rsf, config.cmax) else {
            return false;
        };
        let unprocessed = available - processed;
        if unprocessed >= mb.size || (available == total && (unprocessed > 0 || processed == total))
        {
            return true;
        }
        if config.rate_mode.is_variable() && unprocessed >= 1 {
            let target = (processed + mb.size).min(l.expected.total());
            if let Ok(m) = l.expected.input_time(target) {
                return t >= m;
            }
        }
        false
    };

    let mut out = Vec::new();
    for (a, b) in gaps {
        let last = Time(b.0 - 1);
        for t in [a, last] {
            if t < a {
                continue;
            }
            for l in &lives {
                if ready_at(l, t) {
                    out.push(IdleViolation {
                        time: t,
                        query_id: l.query.id.clone(),
                    });
                }
            }
        }
    }
    out.dedup();
    out
}
