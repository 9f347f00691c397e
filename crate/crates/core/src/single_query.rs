//! Static scheduling of one query whose arrivals and costs are known upfront.
//!
//! The planner works backwards from the deadline. The last batch has to wait
//! for the final tuple, so it takes as many tuples as fit between the window
//! end and the last-batch deadline, and starts as late as possible. Whatever
//! is left must finish before that start; each earlier batch again takes as
//! many tuples as fit between their availability and the start of its
//! successor.
//!
//! Final aggregation cost depends on the batch count, which is not known until
//! the batches are sized. [`schedule_single_query`] therefore assumes a batch
//! count, reserves its aggregation time, sizes the batches and retries with a
//! larger assumption until the sized plan fits the reservation.

use crate::arrival::ArrivalProfile;
use crate::cost_model::{AggCostModel, CostModel};
use crate::error::{Error, Result};
use crate::time::{Duration, Time};

mod oracle;

pub use oracle::{brute_force_optimal_plan, ORACLE_MAX_GRID_POINTS, ORACLE_MAX_TUPLES};

/// One recurring deadline-bound query over a single input stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub profile: ArrivalProfile,
    pub deadline: Time,
    pub cost: CostModel,
    pub agg: AggCostModel,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        profile: ArrivalProfile,
        deadline: Time,
        cost: CostModel,
        agg: AggCostModel,
    ) -> Result<Self> {
        let id = id.into();
        if deadline <= profile.start() {
            return Err(Error::InvalidQuery {
                query: id,
                reason: format!(
                    "deadline {} is not after the window start {}",
                    deadline,
                    profile.start()
                ),
            });
        }
        Ok(Query {
            id,
            profile,
            deadline,
            cost,
            agg,
        })
    }

    pub fn total_tuples(&self) -> u64 {
        self.profile.total()
    }

    pub fn window_end(&self) -> Time {
        self.profile.window_end()
    }

    /// Cost of processing the whole window in one batch.
    pub fn min_comp_cost(&self) -> Duration {
        self.cost.eval(self.total_tuples())
    }

    pub(crate) fn infeasible(&self) -> Error {
        Error::Infeasible {
            query: self.id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Batch {
    pub start: Time,
    pub size: u64,
    pub duration: Duration,
}

impl Batch {
    pub fn end(&self) -> Time {
        self.start + self.duration
    }
}

/// Timed, sized batches of one query followed by its final aggregation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub query_id: String,
    pub batches: Vec<Batch>,
    pub final_agg_start: Time,
    pub final_agg_duration: Duration,
    pub total_cost: Duration,
}

impl BatchPlan {
    /// Builds a plan from `(start, size)` pairs in execution order, deriving
    /// durations from the query's cost models. Aggregation starts as soon as the
    /// last batch ends.
    pub fn assemble(query: &Query, timed_sizes: &[(Time, u64)]) -> BatchPlan {
        let batches: Vec<Batch> = timed_sizes
            .iter()
            .map(|&(start, size)| Batch {
                start,
                size,
                duration: query.cost.eval(size),
            })
            .collect();
        let final_agg_start = batches.last().map_or(query.window_end(), Batch::end);
        let final_agg_duration = query.agg.eval(batches.len() as u64);
        let total_cost = batches.iter().map(|b| b.duration).sum::<Duration>() + final_agg_duration;
        BatchPlan {
            query_id: query.id.clone(),
            batches,
            final_agg_start,
            final_agg_duration,
            total_cost,
        }
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn completion(&self) -> Time {
        self.final_agg_start + self.final_agg_duration
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.batches.iter().map(|b| b.size).collect()
    }
}

/// Time left at the window end after reserving one full-window batch.
/// Negative slack means processing has to start before the window closes.
pub fn compute_slack(query: &Query) -> Duration {
    query.deadline - query.window_end() - query.min_comp_cost()
}

/// Sizes the batches backwards from `last_batch_deadline`, last batch first.
pub fn schedule_without_agg_cost(query: &Query, last_batch_deadline: Time) -> Result<Vec<u64>> {
    Ok(size_backwards(query, last_batch_deadline)?
        .into_iter()
        .map(|s| s.size)
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct SizedBatch {
    size: u64,
    /// Time by which this batch has to be finished.
    due: Time,
}

fn size_backwards(query: &Query, last_batch_deadline: Time) -> Result<Vec<SizedBatch>> {
    let total = query.total_tuples();
    let window_end = query.window_end();
    if total == 0 {
        return Ok(Vec::new());
    }
    if last_batch_deadline < window_end {
        return Err(query.infeasible());
    }

    let last = query
        .cost
        .estimate_tuples_processed(last_batch_deadline - window_end)
        .min(total);
    let mut out = vec![SizedBatch {
        size: last,
        due: last_batch_deadline,
    }];
    if last == 0 {
        // Nothing fits after the window end, so the last tuple can never be processed.
        return Err(query.infeasible());
    }
    let mut pending = total - last;
    // Latest start of the batch sized most recently; earlier batches must end by it.
    let mut time_pt = last_batch_deadline - query.cost.eval(last);
    while pending > 0 {
        let available_at = query.profile.input_time(pending)?;
        let room = time_pt - available_at;
        let size = query.cost.estimate_tuples_processed(room).min(pending);
        if size == 0 {
            return Err(query.infeasible());
        }
        out.push(SizedBatch { size, due: time_pt });
        time_pt -= query.cost.eval(size);
        pending -= size;
    }
    Ok(out)
}

/// Cheapest deadline-meeting plan for a single query.
pub fn schedule_single_query(query: &Query) -> Result<BatchPlan> {
    let total = query.total_tuples();
    let window_end = query.window_end();
    if total == 0 {
        return Ok(BatchPlan::assemble(query, &[]));
    }

    if compute_slack(query) >= query.agg.eval(1) {
        let start = (query.deadline - query.min_comp_cost()).max(window_end);
        return Ok(BatchPlan::assemble(query, &[(start, total)]));
    }

    for assumed in 2..=total {
        let reserved = query.agg.eval(assumed);
        let last_deadline = query.deadline - reserved;
        let sized = size_backwards(query, last_deadline)?;
        if query.agg.eval(sized.len() as u64) <= reserved {
            let plan = place_batches(query, &sized)?;
            log::debug!(
                "query {}: {} batches after assuming {assumed}",
                query.id,
                plan.num_batches()
            );
            return Ok(plan);
        }
    }
    Err(query.infeasible())
}

// Turns backward-sized batches (last first) into a timed plan. Each batch
// starts as late as its deadline allows, which is also when the most tuples
// are available to it.
fn place_batches(query: &Query, sized: &[SizedBatch]) -> Result<BatchPlan> {
    let mut timed: Vec<(Time, u64)> = sized
        .iter()
        .map(|b| (b.due - query.cost.eval(b.size), b.size))
        .collect();
    timed.reverse();
    Ok(BatchPlan::assemble(query, &timed))
}
