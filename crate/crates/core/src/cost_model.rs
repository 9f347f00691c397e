//! Time-cost models for batch processing and final aggregation.
//!
//! A [`CostModel`] maps the number of tuples in one batch to the time needed
//! to process it. An [`AggCostModel`] maps the number of batches a query was
//! split into to the time needed to merge their partial aggregates.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::time::Duration;

mod fit;

pub use fit::{fit_piecewise_linear, PiecewiseFit};

/// Upper bound reported by [`CostModel::estimate_tuples_processed`] when the
/// model has zero marginal cost and the budget covers the fixed part.
pub const TUPLE_CAP: u64 = 1 << 40;

/// Ordered `(x, cost)` breakpoints of a continuous, non-decreasing
/// piecewise-linear function. Beyond the last knot the final segment's slope
/// is extended; a single knot describes a constant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Knots {
    points: Vec<(u64, Duration)>,
}

impl Knots {
    pub fn new(points: Vec<(u64, Duration)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidCostModel("no knots".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidCostModel(format!(
                    "knot x-values must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidCostModel(format!(
                    "cost decreases between x={} and x={}",
                    w[0].0, w[1].0
                )));
            }
        }
        if points[0].1.is_negative() {
            return Err(Error::InvalidCostModel("negative cost".into()));
        }
        Ok(Knots { points })
    }

    pub fn points(&self) -> &[(u64, Duration)] {
        &self.points
    }

    fn last_segment(&self) -> Option<((u64, Duration), (u64, Duration))> {
        let n = self.points.len();
        (n >= 2).then(|| (self.points[n - 2], self.points[n - 1]))
    }

    /// Value of the curve at `x`, floored to whole microseconds.
    pub fn value_at(&self, x: u64) -> Duration {
        let pts = &self.points;
        if x <= pts[0].0 || pts.len() == 1 {
            if pts.len() == 1 || x == pts[0].0 {
                return pts[0].1;
            }
            // Left of the first knot: extend the first segment, never below zero.
            let (x0, y0) = pts[0];
            let (x1, y1) = pts[1];
            let drop = (y1.0 - y0.0) as i128 * (x0 - x) as i128 / (x1 - x0) as i128;
            return Duration((y0.0 as i128 - drop).max(0) as i64);
        }
        let idx = pts.partition_point(|&(kx, _)| kx <= x);
        let (lo, hi) = if idx >= pts.len() {
            self.last_segment().expect("at least two knots")
        } else {
            (pts[idx - 1], pts[idx])
        };
        interpolate(lo, hi, x)
    }
}

fn interpolate((x0, y0): (u64, Duration), (x1, y1): (u64, Duration), x: u64) -> Duration {
    let dy = (y1.0 - y0.0) as i128;
    let dx = (x1 - x0) as i128;
    let off = x as i128 - x0 as i128;
    Duration((y0.0 as i128 + (dy * off).div_euclid(dx)) as i64)
}

/// Batch computation cost as a function of tuple count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CostModel {
    /// `per_tuple * n + overhead` for a non-empty batch.
    Linear {
        per_tuple: Duration,
        overhead: Duration,
    },
    /// First knot sits at zero tuples; its cost acts as the per-batch intercept.
    PiecewiseLinear(Knots),
}

impl CostModel {
    pub fn linear(per_tuple: Duration, overhead: Duration) -> Result<Self> {
        if per_tuple.is_negative() || overhead.is_negative() {
            return Err(Error::InvalidCostModel(
                "linear costs must be non-negative".into(),
            ));
        }
        Ok(CostModel::Linear {
            per_tuple,
            overhead,
        })
    }

    pub fn piecewise(points: Vec<(u64, Duration)>) -> Result<Self> {
        let knots = Knots::new(points)?;
        if knots.points()[0].0 != 0 {
            return Err(Error::InvalidCostModel(
                "first knot must be at zero tuples".into(),
            ));
        }
        Ok(CostModel::PiecewiseLinear(knots))
    }

    /// Cost of one batch of `n` tuples. An empty batch costs nothing.
    pub fn eval(&self, n: u64) -> Duration {
        if n == 0 {
            return Duration::ZERO;
        }
        match self {
            CostModel::Linear {
                per_tuple,
                overhead,
            } => Duration((per_tuple.0 as i128 * n as i128 + overhead.0 as i128) as i64),
            CostModel::PiecewiseLinear(knots) => knots.value_at(n),
        }
    }

    /// Largest `n` whose batch cost fits within `budget` (capped at [`TUPLE_CAP`]).
    pub fn estimate_tuples_processed(&self, budget: Duration) -> u64 {
        if budget.is_negative() {
            return 0;
        }
        let hi = self.search_bound(budget).min(TUPLE_CAP);
        // Largest n in [0, hi] with eval(n) <= budget; eval(0) = 0 always fits.
        let (mut lo, mut hi) = (0u64, hi);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if self.eval(mid) <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    // Inverts the last (or only) linear piece to bound the binary search.
    fn search_bound(&self, budget: Duration) -> u64 {
        match self {
            CostModel::Linear {
                per_tuple,
                overhead,
            } => {
                if budget < *overhead {
                    0
                } else if per_tuple.0 == 0 {
                    TUPLE_CAP
                } else {
                    ((budget.0 - overhead.0) / per_tuple.0) as u64
                }
            }
            CostModel::PiecewiseLinear(knots) => {
                let (lx, ly) = *knots.points().last().expect("non-empty knots");
                if budget < ly {
                    return lx;
                }
                match knots.last_segment() {
                    Some(((x0, y0), (x1, y1))) if y1 > y0 => {
                        let extra =
                            (budget.0 - ly.0) as i128 * (x1 - x0) as i128 / (y1.0 - y0.0) as i128;
                        (lx as i128 + extra + 1).min(TUPLE_CAP as i128) as u64
                    }
                    _ => TUPLE_CAP,
                }
            }
        }
    }
}

impl fmt::Display for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostModel::Linear {
                per_tuple,
                overhead,
            } => write!(f, "linear{{{}, {}}}", per_tuple.0, overhead.0),
            CostModel::PiecewiseLinear(knots) => write!(f, "pwl{{{}}}", format_knots(knots)),
        }
    }
}

impl FromStr for CostModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(body) = strip_call(s, "linear") {
            let nums = parse_int_list(body)?;
            if nums.len() != 2 {
                return Err(Error::InvalidCostModel(format!(
                    "linear{{per_tuple_us, overhead_us}} expects 2 values, got {}",
                    nums.len()
                )));
            }
            CostModel::linear(Duration(nums[0]), Duration(nums[1]))
        } else if let Some(body) = strip_call(s, "pwl") {
            CostModel::piecewise(parse_knot_list(body)?)
        } else {
            Err(Error::InvalidCostModel(format!(
                "unrecognised cost model {s:?}"
            )))
        }
    }
}

/// Final-aggregation cost as a function of the number of batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggCostModel {
    knots: Knots,
    /// Group count of the query; only used to floor the minimum batch size.
    pub num_groups: u64,
}

impl AggCostModel {
    pub fn new(points: Vec<(u64, Duration)>, num_groups: u64) -> Result<Self> {
        let knots = Knots::new(points)?;
        match knots.points()[0] {
            (1, Duration(0)) => Ok(AggCostModel { knots, num_groups }),
            _ => Err(Error::InvalidCostModel(
                "aggregation knots must start at (1 batch, 0 cost)".into(),
            )),
        }
    }

    /// No aggregation cost at any batch count.
    pub fn free(num_groups: u64) -> Self {
        AggCostModel {
            knots: Knots {
                points: vec![(1, Duration::ZERO)],
            },
            num_groups,
        }
    }

    /// Constant marginal cost per additional batch.
    pub fn per_extra_batch(cost: Duration, num_groups: u64) -> Result<Self> {
        AggCostModel::new(vec![(1, Duration::ZERO), (2, cost)], num_groups)
    }

    pub fn knots(&self) -> &Knots {
        &self.knots
    }

    /// Aggregation cost after `num_batches` batches; zero for one (or zero) batches.
    pub fn eval(&self, num_batches: u64) -> Duration {
        if num_batches <= 1 {
            return Duration::ZERO;
        }
        self.knots.value_at(num_batches)
    }

    /// Parses the `pwl{[(batches, cost_us)…]}` syntax.
    pub fn parse(text: &str, num_groups: u64) -> Result<Self> {
        let s = text.trim();
        match strip_call(s, "pwl") {
            Some(body) => AggCostModel::new(parse_knot_list(body)?, num_groups),
            None if s == "none" => Ok(AggCostModel::free(num_groups)),
            None => Err(Error::InvalidCostModel(format!(
                "unrecognised aggregation model {s:?}"
            ))),
        }
    }
}

impl fmt::Display for AggCostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pwl{{{}}}", format_knots(&self.knots))
    }
}

fn format_knots(knots: &Knots) -> String {
    let body: Vec<String> = knots
        .points()
        .iter()
        .map(|(x, y)| format!("({x}, {})", y.0))
        .collect();
    format!("[{}]", body.join(", "))
}

pub(crate) fn strip_call<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?
        .trim_start()
        .strip_prefix('{')?
        .strip_suffix('}')
}

pub(crate) fn parse_int_list(body: &str) -> Result<Vec<i64>> {
    body.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<i64>()
                .map_err(|_| Error::BadNumber(t.to_string()))
        })
        .collect()
}

pub(crate) fn parse_knot_list(body: &str) -> Result<Vec<(u64, Duration)>> {
    let inner = body
        .trim()
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| Error::InvalidCostModel(format!("expected [(x, y), …], got {body:?}")))?;
    let mut out = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        let open = rest
            .strip_prefix('(')
            .ok_or_else(|| Error::InvalidCostModel(format!("expected '(' in {rest:?}")))?;
        let close = open
            .find(')')
            .ok_or_else(|| Error::InvalidCostModel("unterminated pair".into()))?;
        let pair = parse_int_list(&open[..close])?;
        if pair.len() != 2 || pair[0] < 0 {
            return Err(Error::InvalidCostModel(format!(
                "bad pair ({})",
                &open[..close]
            )));
        }
        out.push((pair[0] as u64, Duration(pair[1])));
        rest = open[close + 1..].trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn secs(s: i64) -> Duration {
        Duration::from_secs(s)
    }

    fn half_sec_per_tuple() -> CostModel {
        CostModel::linear(Duration::from_millis(500), Duration::ZERO).unwrap()
    }

    #[test]
    fn linear_window_cost() {
        assert_eq!(half_sec_per_tuple().eval(10), secs(5));
    }

    #[test]
    fn empty_batch_is_free() {
        let with_overhead = CostModel::linear(Duration::from_millis(10), secs(5)).unwrap();
        assert_eq!(with_overhead.eval(0), Duration::ZERO);
        let pwl = CostModel::piecewise(vec![(0, secs(3)), (10, secs(4))]).unwrap();
        assert_eq!(pwl.eval(0), Duration::ZERO);
    }

    #[test]
    fn piecewise_midpoint() {
        let m = CostModel::piecewise(vec![(0, secs(0)), (100, secs(10)), (200, secs(15))]).unwrap();
        assert_eq!(m.eval(150), Duration::from_millis(12_500));
        // Extrapolates with the last slope (50 ms per tuple).
        assert_eq!(m.eval(300), secs(20));
    }

    #[test]
    fn estimate_matches_worked_example() {
        assert_eq!(half_sec_per_tuple().estimate_tuples_processed(secs(2)), 4);
        assert_eq!(
            half_sec_per_tuple().estimate_tuples_processed(Duration::ZERO),
            0
        );
    }

    #[test]
    fn estimate_with_overhead_against_scan() {
        let m = CostModel::linear(Duration::from_millis(10), Duration::from_millis(5000)).unwrap();
        assert_eq!(m.estimate_tuples_processed(Duration::from_millis(5009)), 0);
        assert_eq!(m.estimate_tuples_processed(Duration::from_millis(5010)), 1);
        for budget_ms in [0, 4999, 5000, 5010, 5055, 6000, 7777] {
            let budget = Duration::from_millis(budget_ms);
            let scan = (0..1000u64)
                .take_while(|&n| m.eval(n) <= budget)
                .last()
                .unwrap();
            assert_eq!(
                m.estimate_tuples_processed(budget),
                scan,
                "budget {budget_ms}ms"
            );
        }
    }

    #[test]
    fn estimate_unbounded_models_are_capped() {
        let free = CostModel::linear(Duration::ZERO, secs(1)).unwrap();
        assert_eq!(free.estimate_tuples_processed(secs(1)), TUPLE_CAP);
        assert_eq!(
            free.estimate_tuples_processed(Duration::from_millis(999)),
            0
        );
        let flat = CostModel::piecewise(vec![(0, secs(1)), (10, secs(2)), (20, secs(2))]).unwrap();
        assert_eq!(flat.estimate_tuples_processed(secs(2)), TUPLE_CAP);
        assert_eq!(
            flat.estimate_tuples_processed(Duration::from_millis(1500)),
            5
        );
    }

    #[test]
    fn agg_interpolation_and_extrapolation() {
        let agg = AggCostModel::new(vec![(1, secs(0)), (2, secs(4)), (10, secs(20))], 1).unwrap();
        assert_eq!(agg.eval(1), Duration::ZERO);
        assert_eq!(agg.eval(6), secs(12));
        let short = AggCostModel::per_extra_batch(secs(4), 1).unwrap();
        assert_eq!(short.eval(4), secs(12));
        assert_eq!(AggCostModel::free(3).eval(7), Duration::ZERO);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(CostModel::linear(Duration(-1), Duration::ZERO).is_err());
        assert!(CostModel::piecewise(vec![(1, secs(1)), (2, secs(2))]).is_err());
        assert!(CostModel::piecewise(vec![(0, secs(2)), (2, secs(1))]).is_err());
        assert!(CostModel::piecewise(vec![(0, secs(1)), (0, secs(2))]).is_err());
        assert!(AggCostModel::new(vec![(1, secs(1))], 1).is_err());
        assert!(AggCostModel::new(vec![(2, secs(0))], 1).is_err());
    }

    #[test]
    fn config_syntax_round_trips() {
        let lin: CostModel = "linear{10000, 5000000}".parse().unwrap();
        assert_eq!(
            lin,
            CostModel::linear(Duration::from_millis(10), secs(5)).unwrap()
        );
        let pwl: CostModel = "pwl{[(0, 0), (100, 10000000), (200,15000000)]}"
            .parse()
            .unwrap();
        assert_eq!(pwl.to_string().parse::<CostModel>().unwrap(), pwl);
        let agg = AggCostModel::parse("pwl{[(1,0),(2,4000000)]}", 5).unwrap();
        assert_eq!(AggCostModel::parse(&agg.to_string(), 5).unwrap(), agg);
        assert!("quadratic{1}".parse::<CostModel>().is_err());
    }

    fn arb_model() -> impl Strategy<Value = CostModel> {
        prop_oneof![
            (0i64..50_000, 0i64..5_000_000).prop_map(|(p, o)| CostModel::linear(
                Duration(p),
                Duration(o)
            )
            .unwrap()),
            (
                0i64..2_000_000,
                proptest::collection::vec((1u64..200, 0i64..3_000_000), 1..5)
            )
                .prop_map(|(c0, steps)| {
                    let mut x = 0;
                    let mut y = c0;
                    let mut pts = vec![(0, Duration(c0))];
                    for (dx, dy) in steps {
                        x += dx;
                        y += dy;
                        pts.push((x, Duration(y)));
                    }
                    CostModel::piecewise(pts).unwrap()
                }),
        ]
    }

    proptest! {
        #[test]
        fn eval_is_monotone(m in arb_model(), a in 0u64..2_000, b in 0u64..2_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(m.eval(lo) <= m.eval(hi));
        }

        #[test]
        fn estimate_inverts_eval(m in arb_model(), budget in 0i64..60_000_000) {
            let d = Duration(budget);
            let k = m.estimate_tuples_processed(d);
            prop_assert!(m.eval(k) <= d);
            prop_assert!(k == TUPLE_CAP || m.eval(k + 1) > d);
        }

        #[test]
        fn batching_with_overhead_is_subadditive(
            per in 0i64..10_000, over in 1i64..1_000_000, a in 1u64..500, b in 1u64..500
        ) {
            let m = CostModel::linear(Duration(per), Duration(over)).unwrap();
            prop_assert!(m.eval(a + b) < m.eval(a) + m.eval(b));
        }

        #[test]
        fn agg_cost_is_monotone(
            steps in proptest::collection::vec((1u64..5, 0i64..2_000_000), 0..4),
            a in 1u64..30, b in 1u64..30
        ) {
            let mut pts = vec![(1, Duration::ZERO)];
            let (mut x, mut y) = (1, 0);
            for (dx, dy) in steps {
                x += dx;
                y += dy;
                pts.push((x, Duration(y)));
            }
            let agg = AggCostModel::new(pts, 1).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(agg.eval(lo) <= agg.eval(hi));
        }
    }
}
