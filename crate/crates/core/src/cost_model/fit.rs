//! Segmented least-squares fitting of a continuous piecewise-linear cost curve.
//!
//! Breakpoints are drawn from the sample x-values. The outermost breakpoints
//! are pinned to the smallest and largest sample; every placement of the
//! interior ones is tried and the curve with the smallest sum of squared
//! residuals wins. For a fixed placement the knot values are the solution of
//! an ordinary least-squares problem over hat-function features.

use nalgebra::{DMatrix, DVector};

use super::{CostModel, Knots};
use crate::error::{Error, Result};
use crate::time::Duration;

/// A fitted model together with its sum of squared residuals (µs²) over the
/// samples it was fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseFit {
    pub model: CostModel,
    pub sse: f64,
}

pub fn fit_piecewise_linear(samples: &[(u64, Duration)], segments: usize) -> Result<PiecewiseFit> {
    if segments == 0 {
        return Err(Error::InvalidCostModel("need at least one segment".into()));
    }
    if samples.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::InvalidCostModel(
            "samples must be sorted by tuple count".into(),
        ));
    }
    let mut xs: Vec<u64> = samples.iter().map(|s| s.0).collect();
    xs.dedup();
    if xs.len() < segments + 1 {
        return Err(Error::InsufficientSamples {
            needed: segments + 1,
            got: xs.len(),
        });
    }

    let interior = &xs[1..xs.len() - 1];
    let mut best: Option<PiecewiseFit> = None;
    for_each_combination(interior.len(), segments - 1, &mut |picked| {
        let mut breaks = Vec::with_capacity(segments + 1);
        breaks.push(xs[0]);
        breaks.extend(picked.iter().map(|&i| interior[i]));
        breaks.push(*xs.last().unwrap());
        if let Some(fit) = fit_with_breaks(samples, &breaks) {
            if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
                best = Some(fit);
            }
        }
    });
    best.ok_or_else(|| Error::InvalidCostModel("least-squares fit failed".into()))
}

/// Sum of squared residuals of `knots` against `samples`, evaluated on the
/// raw curve (the zero-tuple intercept counts as the curve value at 0).
pub fn curve_sse(knots: &Knots, samples: &[(u64, Duration)]) -> f64 {
    samples
        .iter()
        .map(|&(x, y)| {
            let r = (knots.value_at(x).0 - y.0) as f64;
            r * r
        })
        .sum()
}

fn fit_with_breaks(samples: &[(u64, Duration)], breaks: &[u64]) -> Option<PiecewiseFit> {
    let rows = samples.len();
    let cols = breaks.len();
    let mut design = DMatrix::<f64>::zeros(rows, cols);
    let mut target = DVector::<f64>::zeros(rows);
    for (r, &(x, y)) in samples.iter().enumerate() {
        target[r] = y.0 as f64;
        let seg = breaks.partition_point(|&b| b <= x).clamp(1, cols - 1);
        let (b0, b1) = (breaks[seg - 1] as f64, breaks[seg] as f64);
        let t = (x as f64 - b0) / (b1 - b0);
        design[(r, seg - 1)] += 1.0 - t;
        design[(r, seg)] += t;
    }
    let values = design.svd(true, true).solve(&target, 1e-9).ok()?;

    // Enforce a non-negative, non-decreasing curve and round to whole µs.
    let mut points: Vec<(u64, Duration)> = Vec::with_capacity(cols + 1);
    let mut floor = 0i64;
    for (i, &b) in breaks.iter().enumerate() {
        let v = (values[i].round() as i64).max(floor);
        floor = v;
        points.push((b, Duration(v)));
    }
    if breaks[0] > 0 {
        let (x0, y0) = points[0];
        let (x1, y1) = points[1];
        let slope = (y1.0 - y0.0) as f64 / (x1 - x0) as f64;
        let at_zero = (y0.0 as f64 - slope * x0 as f64)
            .round()
            .clamp(0.0, y0.0 as f64);
        points.insert(0, (0, Duration(at_zero as i64)));
    }
    let knots = Knots::new(points).ok()?;
    let sse = curve_sse(&knots, samples);
    Some(PiecewiseFit {
        model: CostModel::PiecewiseLinear(knots),
        sse,
    })
}

// Visits every strictly increasing k-subset of 0..n in lexicographic order.
fn for_each_combination(n: usize, k: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(
        start: usize,
        n: usize,
        k: usize,
        acc: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if acc.len() == k {
            visit(acc);
            return;
        }
        let need = k - acc.len();
        for i in start..=n.saturating_sub(need) {
            if n < need {
                break;
            }
            acc.push(i);
            rec(i + 1, n, k, acc, visit);
            acc.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), visit);
}
