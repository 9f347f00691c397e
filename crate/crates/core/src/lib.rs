//! Deadline-aware batch scheduling for intermittent query processing.
//!
//! Queries aggregate over a window of arriving tuples and must deliver their
//! result by an absolute deadline. Processing everything in one batch after
//! the window closes is cheapest; tighter deadlines force earlier, smaller
//! batches plus a final aggregation step. This crate computes such batch
//! plans for a single query, schedules many queries on one processor, and
//! simulates the outcome in virtual time.

pub mod arrival;
pub mod constraint_sched;
pub mod cost_model;
pub mod dynamic_sched;
pub mod error;
pub mod rational;
pub mod simulator;
pub mod single_query;
pub mod time;
pub mod workload;

pub use arrival::{estimate_total_tuples, ArrivalProfile};
pub use constraint_sched::{build_constraints, solve_min_batches, ConstraintSystem};
pub use cost_model::{fit_piecewise_linear, AggCostModel, CostModel, PiecewiseFit};
pub use dynamic_sched::{
    check_non_idling, find_min_batch_size, run_dynamic, DynamicEvent, DynamicRun, Policy, RateMode,
    SchedulerConfig,
};
pub use error::{Error, Result};
pub use rational::Fraction;
pub use simulator::{
    compute_metrics, execute_plan, validate_plan, validate_trace, BaselineMode, EventKind, Metrics,
    SimTrace, TraceRow,
};
pub use single_query::{
    brute_force_optimal_plan, compute_slack, schedule_single_query, schedule_without_agg_cost,
    Batch, BatchPlan, Query,
};
pub use time::{Duration, Time};
