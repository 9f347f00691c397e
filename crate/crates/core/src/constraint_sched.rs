//! Batch planning as a small integer feasibility problem.
//!
//! For a fixed batch count `n` the unknowns are the batch sizes `x_i` (whole
//! tuples) and start times `s_i` (µs). Only linear cost models and fixed-rate
//! streams fit the linear constraint form. The system is solved by a
//! depth-first search over sizes; start times never need branching because,
//! for fixed sizes, starting every batch as early as possible is optimal.

use std::collections::HashMap;
use std::fmt;

use crate::arrival::ArrivalProfile;
use crate::cost_model::CostModel;
use crate::error::{Error, Result};
use crate::single_query::{BatchPlan, Query};
use crate::time::{Duration, Time, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// Tuples in batch `i` (0-based).
    Size(usize),
    /// Start of batch `i` in µs.
    Start(usize),
}

/// `Σ coeff·var ≤ rhs`, or `=` for the tuple-count equality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearConstraint {
    pub label: &'static str,
    pub terms: Vec<(Var, i128)>,
    pub rhs: i128,
}

impl LinearConstraint {
    fn lhs(&self, sizes: &[u64], starts: &[Time]) -> i128 {
        self.terms
            .iter()
            .map(|&(v, c)| {
                c * match v {
                    Var::Size(i) => sizes[i] as i128,
                    Var::Start(i) => starts[i].0 as i128,
                }
            })
            .sum()
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] ", self.label)?;
        for (k, (v, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                f.write_str(" + ")?;
            }
            match v {
                Var::Size(i) => write!(f, "{c}*x{}", i + 1)?,
                Var::Start(i) => write!(f, "{c}*s{}", i + 1)?,
            }
        }
        write!(f, " <= {}", self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSystem {
    pub n: usize,
    pub total: u64,
    pub per_tuple: Duration,
    pub overhead: Duration,
    pub last_batch_deadline: Time,
    /// Tuple-count equality `Σ x_i = total`.
    pub equality: LinearConstraint,
    /// Sequencing, last-batch deadline, availability and `x_i ≥ 1`.
    pub inequalities: Vec<LinearConstraint>,
    profile: ArrivalProfile,
}

impl ConstraintSystem {
    pub fn num_variables(&self) -> usize {
        2 * self.n
    }

    /// Whether the given assignment satisfies every constraint.
    pub fn is_satisfied(&self, sizes: &[u64], starts: &[Time]) -> bool {
        sizes.len() == self.n
            && starts.len() == self.n
            && self.equality.lhs(sizes, starts) == self.equality.rhs
            && self
                .inequalities
                .iter()
                .all(|c| c.lhs(sizes, starts) <= c.rhs)
    }

    fn duration(&self, size: u64) -> Duration {
        self.per_tuple * size as i64 + self.overhead
    }

    /// Finds sizes and earliest starts satisfying the system, preferring the
    /// lexicographically smallest size vector. Worst case O(n·total²)
    /// availability evaluations.
    pub fn solve(&self) -> Option<Vec<(Time, u64)>> {
        if self.n == 0 || (self.n as u64) > self.total {
            return None;
        }
        let mut search = Search {
            sys: self,
            failed: HashMap::new(),
            path: Vec::with_capacity(self.n),
        };
        search.dfs(0, 0, Time(i64::MIN)).then_some(search.path)
    }
}

struct Search<'a> {
    sys: &'a ConstraintSystem,
    // (batch index, tuples already assigned) -> earliest free time known to fail.
    failed: HashMap<(usize, u64), Time>,
    path: Vec<(Time, u64)>,
}

impl Search<'_> {
    fn dfs(&mut self, k: usize, assigned: u64, free_at: Time) -> bool {
        let sys = self.sys;
        if k == sys.n {
            return assigned == sys.total;
        }
        // A later free time can never help the remaining batches.
        if let Some(&bad) = self.failed.get(&(k, assigned)) {
            if free_at >= bad {
                return false;
            }
        }
        let remaining = sys.total - assigned;
        let later = (sys.n - k - 1) as u64;
        for size in 1..=remaining - later {
            let cum = assigned + size;
            let Ok(ready) = sys.profile.input_time(cum) else {
                break;
            };
            let start = ready.max(free_at);
            let end = start + sys.duration(size);
            // Remaining batches need at least their work and overheads.
            let rest = sys.per_tuple * (remaining - size) as i64 + sys.overhead * later as i64;
            if end + rest > sys.last_batch_deadline {
                // Larger sizes start no earlier and end no earlier.
                break;
            }
            self.path.push((start, size));
            if self.dfs(k + 1, cum, end) {
                return true;
            }
            self.path.pop();
        }
        let entry = self.failed.entry((k, assigned)).or_insert(free_at);
        *entry = (*entry).min(free_at);
        false
    }
}

fn linear_parts(query: &Query) -> Result<(Duration, Duration)> {
    match query.cost {
        CostModel::Linear {
            per_tuple,
            overhead,
        } => Ok((per_tuple, overhead)),
        _ => Err(Error::UnsupportedModel(format!(
            "query {} has a non-linear cost model",
            query.id
        ))),
    }
}

pub fn build_constraints(
    query: &Query,
    n: usize,
    last_batch_deadline: Time,
) -> Result<ConstraintSystem> {
    let (per_tuple, overhead) = linear_parts(query)?;
    let ArrivalProfile::FixedRate { start, rate, .. } = &query.profile else {
        return Err(Error::UnsupportedModel(format!(
            "query {} does not have a fixed-rate stream",
            query.id
        )));
    };
    if n == 0 {
        return Err(Error::InvalidConfig("batch count must be positive".into()));
    }
    let total = query.total_tuples();
    let (p, o) = (per_tuple.0 as i128, overhead.0 as i128);
    let (num, den) = (*rate.numer() as i128, *rate.denom() as i128);
    let us = MICROS_PER_SEC as i128;

    let equality = LinearConstraint {
        label: "tuple-count",
        terms: (0..n).map(|i| (Var::Size(i), 1)).collect(),
        rhs: total as i128,
    };
    let mut inequalities = Vec::with_capacity(3 * n);
    for i in 0..n.saturating_sub(1) {
        inequalities.push(LinearConstraint {
            label: "sequence",
            terms: vec![
                (Var::Start(i), 1),
                (Var::Size(i), p),
                (Var::Start(i + 1), -1),
            ],
            rhs: -o,
        });
    }
    inequalities.push(LinearConstraint {
        label: "last-deadline",
        terms: vec![(Var::Start(n - 1), 1), (Var::Size(n - 1), p)],
        rhs: last_batch_deadline.0 as i128 - o,
    });
    // Tuple k arrives at start + (k-1)/rate, so batch i needs
    // rate·(s_i − start) ≥ Σ_{j≤i} x_j − 1.
    for i in 0..n {
        let mut terms: Vec<(Var, i128)> = (0..=i).map(|j| (Var::Size(j), us * den)).collect();
        terms.push((Var::Start(i), -num));
        inequalities.push(LinearConstraint {
            label: "availability",
            terms,
            rhs: us * den - num * start.0 as i128,
        });
    }
    for i in 0..n {
        inequalities.push(LinearConstraint {
            label: "non-empty",
            terms: vec![(Var::Size(i), -1)],
            rhs: -1,
        });
    }
    Ok(ConstraintSystem {
        n,
        total,
        per_tuple,
        overhead,
        last_batch_deadline,
        equality,
        inequalities,
        profile: query.profile.clone(),
    })
}

/// The plan with exactly `n` batches, if one exists. The final aggregation
/// for `n` batches is reserved before the deadline.
pub fn solve_with_batches(query: &Query, n: usize) -> Result<Option<BatchPlan>> {
    let last_deadline = query.deadline - query.agg.eval(n as u64);
    let sys = build_constraints(query, n, last_deadline)?;
    Ok(sys.solve().map(|timed| BatchPlan::assemble(query, &timed)))
}

/// Smallest feasible batch count up to `n_max`, returned as a plan.
pub fn solve_min_batches(query: &Query, n_max: usize) -> Result<BatchPlan> {
    linear_parts(query)?;
    if !matches!(query.profile, ArrivalProfile::FixedRate { .. }) {
        return Err(Error::UnsupportedModel(format!(
            "query {} does not have a fixed-rate stream",
            query.id
        )));
    }
    let total = query.total_tuples();
    if total == 0 {
        return Ok(BatchPlan::assemble(query, &[]));
    }
    let n_max = n_max.min(total as usize);
    for n in 1..=n_max {
        if let Some(plan) = solve_with_batches(query, n)? {
            log::debug!("query {}: feasible with {n} batches", query.id);
            return Ok(plan);
        }
    }
    Err(query.infeasible())
}
