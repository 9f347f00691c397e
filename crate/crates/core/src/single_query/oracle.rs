//! Exhaustive reference planner for small instances.
//!
//! Every ordered split of the window into non-empty batches is tried. Batch
//! starts are restricted to multiples of a time grid; for a fixed split the
//! earliest valid grid start of each batch dominates every later choice (it
//! only moves later batches and the aggregation earlier), so each split is
//! checked with its earliest grid-aligned placement.

use super::{BatchPlan, Query};
use crate::error::{Error, Result};
use crate::time::{Duration, Time};

pub const ORACLE_MAX_TUPLES: u64 = 15;
pub const ORACLE_MAX_GRID_POINTS: i64 = 64;

pub fn brute_force_optimal_plan(query: &Query, grid: Duration) -> Result<BatchPlan> {
    let total = query.total_tuples();
    if grid.0 <= 0 {
        return Err(Error::TooLarge("grid step must be positive".into()));
    }
    if total > ORACLE_MAX_TUPLES {
        return Err(Error::TooLarge(format!(
            "{total} tuples exceeds the {ORACLE_MAX_TUPLES}-tuple limit"
        )));
    }
    let horizon = query.deadline - query.profile.start();
    if horizon.0 / grid.0 > ORACLE_MAX_GRID_POINTS {
        return Err(Error::TooLarge(format!(
            "horizon spans {} grid points (limit {ORACLE_MAX_GRID_POINTS})",
            horizon.0 / grid.0
        )));
    }
    if total == 0 {
        return Ok(BatchPlan::assemble(query, &[]));
    }

    // (cost, batches, completion, timed sizes)
    type Candidate = (Duration, usize, Time, Vec<(Time, u64)>);
    let mut best: Option<Candidate> = None;
    let cuts = total - 1;
    for mask in 0u32..(1u32 << cuts) {
        let sizes = split(total, mask);
        let Some(timed) = earliest_grid_placement(query, &sizes, grid) else {
            continue;
        };
        let batch_cost: Duration = sizes.iter().map(|&s| query.cost.eval(s)).sum();
        let agg = query.agg.eval(sizes.len() as u64);
        let last = timed.last().expect("non-empty split");
        let completion = last.0 + query.cost.eval(last.1) + agg;
        if completion > query.deadline {
            continue;
        }
        let key = (batch_cost + agg, sizes.len(), completion);
        if best.as_ref().is_none_or(|b| key < (b.0, b.1, b.2)) {
            best = Some((key.0, key.1, key.2, timed));
        }
    }
    best.map(|(_, _, _, timed)| BatchPlan::assemble(query, &timed))
        .ok_or_else(|| Error::Infeasible {
            query: query.id.clone(),
        })
}

// Bit i set means a batch boundary after tuple i + 1.
fn split(total: u64, mask: u32) -> Vec<u64> {
    let mut sizes = Vec::new();
    let mut run = 0;
    for i in 0..total {
        run += 1;
        if i + 1 == total || mask & (1 << i) != 0 {
            sizes.push(run);
            run = 0;
        }
    }
    sizes
}

fn earliest_grid_placement(
    query: &Query,
    sizes: &[u64],
    grid: Duration,
) -> Option<Vec<(Time, u64)>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut free_at = Time(i64::MIN);
    let mut cumulative = 0;
    for &size in sizes {
        cumulative += size;
        let ready = query.profile.input_time(cumulative).ok()?;
        let start = align_up(ready.max(free_at), grid);
        if start > query.deadline {
            return None;
        }
        free_at = start + query.cost.eval(size);
        out.push((start, size));
    }
    Some(out)
}

fn align_up(t: Time, grid: Duration) -> Time {
    let rem = t.0.rem_euclid(grid.0);
    if rem == 0 {
        t
    } else {
        Time(t.0 - rem + grid.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::single_query::tests::worked_case;

    #[test]
    fn splits_enumerate_compositions() {
        assert_eq!(split(3, 0b00), vec![3]);
        assert_eq!(split(3, 0b01), vec![1, 2]);
        assert_eq!(split(3, 0b10), vec![2, 1]);
        assert_eq!(split(3, 0b11), vec![1, 1, 1]);
    }

    #[test]
    fn grid_alignment() {
        let g = Duration::from_secs(1);
        assert_eq!(align_up(Time(1), g), Time::from_secs(1));
        assert_eq!(align_up(Time::from_secs(2), g), Time::from_secs(2));
        assert_eq!(align_up(Time(-1), g), Time::ZERO);
    }

    #[test]
    fn worked_cases() {
        let grid = Duration::from_millis(500);
        let c3 = brute_force_optimal_plan(&worked_case(12), grid).unwrap();
        assert_eq!(c3.total_cost, Duration::from_secs(5));
        assert_eq!(c3.num_batches(), 2);
        let c1 = brute_force_optimal_plan(&worked_case(16), grid).unwrap();
        assert_eq!(c1.num_batches(), 1);
        assert_eq!(c1.total_cost, Duration::from_secs(5));
    }

    #[test]
    fn no_room_after_window_end() {
        let err = brute_force_optimal_plan(&worked_case(10), Duration::from_secs(1));
        assert!(matches!(err, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn rejects_large_instances() {
        assert!(matches!(
            brute_force_optimal_plan(&worked_case(100), Duration::from_secs(1)),
            Err(Error::TooLarge(_))
        ));
    }
}
