//! Tuple arrival over time for one input stream.
//!
//! A fixed-rate stream delivers tuple `k` (1-based) at
//! `start + (k - 1) / rate`, so one tuple is already present at the window
//! start. A trace interpolates linearly between cumulative checkpoints and
//! floors to whole tuples.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;

use crate::cost_model::{parse_int_list, strip_call};
use crate::error::{Error, Result};
use crate::rational::{parse_decimal, Fraction};
use crate::time::{Time, MICROS_PER_MILLI, MICROS_PER_SEC};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArrivalProfile {
    FixedRate {
        start: Time,
        /// Tuples per second.
        rate: Fraction,
        total: u64,
    },
    Trace {
        /// `(time, cumulative tuples)` checkpoints.
        points: Vec<(Time, u64)>,
    },
}

impl ArrivalProfile {
    pub fn fixed(start: Time, rate: Fraction, total: u64) -> Result<Self> {
        if *rate.numer() <= 0 {
            return Err(Error::InvalidProfile("rate must be positive".into()));
        }
        Ok(ArrivalProfile::FixedRate { start, rate, total })
    }

    pub fn trace(points: Vec<(Time, u64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidProfile("trace has no points".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidProfile(format!(
                    "trace times must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidProfile(format!(
                    "cumulative count decreases at {}",
                    w[1].0
                )));
            }
        }
        Ok(ArrivalProfile::Trace { points })
    }

    pub fn total(&self) -> u64 {
        match self {
            ArrivalProfile::FixedRate { total, .. } => *total,
            ArrivalProfile::Trace { points } => points.last().map_or(0, |p| p.1),
        }
    }

    /// Window start.
    pub fn start(&self) -> Time {
        match self {
            ArrivalProfile::FixedRate { start, .. } => *start,
            ArrivalProfile::Trace { points } => points[0].0,
        }
    }

    /// Arrival time of the last tuple.
    pub fn window_end(&self) -> Time {
        self.input_time(self.total())
            .expect("total is always reachable")
    }

    /// Cumulative tuples that have arrived at or before `t`.
    pub fn tuples_available_at(&self, t: Time) -> u64 {
        match self {
            ArrivalProfile::FixedRate { start, rate, total } => {
                if *total == 0 || t < *start {
                    return 0;
                }
                let elapsed = (t - *start).0 as i128;
                let num = *rate.numer() as i128;
                let den = *rate.denom() as i128 * MICROS_PER_SEC as i128;
                let arrived = elapsed * num / den + 1;
                arrived.min(*total as i128) as u64
            }
            ArrivalProfile::Trace { points } => {
                if t < points[0].0 {
                    return 0;
                }
                let idx = points.partition_point(|p| p.0 <= t);
                if idx >= points.len() {
                    return points[points.len() - 1].1;
                }
                let (t0, c0) = points[idx - 1];
                let (t1, c1) = points[idx];
                let gained = (c1 - c0) as i128 * (t - t0).0 as i128 / (t1 - t0).0 as i128;
                c0 + gained as u64
            }
        }
    }

    /// Earliest time at which at least `n` tuples have arrived.
    pub fn input_time(&self, n: u64) -> Result<Time> {
        let total = self.total();
        if n > total {
            return Err(Error::TooManyTuples {
                requested: n,
                total,
            });
        }
        if n == 0 {
            return Ok(self.start());
        }
        Ok(match self {
            ArrivalProfile::FixedRate { start, rate, .. } => {
                let num = *rate.numer() as i128;
                let den = *rate.denom() as i128 * MICROS_PER_SEC as i128;
                let offset = Integer::div_ceil(&((n - 1) as i128 * den), &num);
                *start + crate::time::Duration(offset as i64)
            }
            ArrivalProfile::Trace { points } => {
                if n <= points[0].1 {
                    return Ok(points[0].0);
                }
                let seg = points
                    .windows(2)
                    .find(|w| w[1].1 >= n)
                    .expect("n <= final count");
                let (t0, c0) = seg[0];
                let (t1, c1) = seg[1];
                let span = (t1 - t0).0 as i128;
                let offset = Integer::div_ceil(&((n - c0) as i128 * span), &((c1 - c0) as i128));
                t0 + crate::time::Duration(offset as i64)
            }
        })
    }
}

/// Projects the final tuple count from an observed count, scaling the expected
/// total by how far ahead of or behind the expected curve the stream is.
pub fn estimate_total_tuples(expected: &ArrivalProfile, observed: u64, now: Time) -> u64 {
    let on_curve = expected.tuples_available_at(now);
    if on_curve == 0 {
        return expected.total();
    }
    let num = expected.total() as u128 * observed as u128;
    let den = on_curve as u128;
    ((2 * num + den) / (2 * den)) as u64
}

/// Microseconds as milliseconds with up to three decimals.
pub fn format_ms(t: i64) -> String {
    if t % MICROS_PER_MILLI == 0 {
        format!("{}", t / MICROS_PER_MILLI)
    } else {
        let sign = if t < 0 { "-" } else { "" };
        let a = t.abs();
        format!("{sign}{}.{:03}", a / MICROS_PER_MILLI, a % MICROS_PER_MILLI)
    }
}

/// Milliseconds (up to three decimals) to whole microseconds.
pub fn parse_ms(text: &str) -> Result<i64> {
    let f = parse_decimal(text)?;
    let us = f * Fraction::from_integer(MICROS_PER_MILLI);
    if !us.is_integer() {
        return Err(Error::BadNumber(text.to_string()));
    }
    Ok(us.to_integer())
}

pub fn format_fraction(f: Fraction) -> String {
    let mut den = *f.denom();
    while den % 2 == 0 {
        den /= 2;
    }
    while den % 5 == 0 {
        den /= 5;
    }
    if den != 1 {
        return format!("{}/{}", f.numer(), f.denom());
    }
    let mut digits = 0u32;
    while !(f * Fraction::from_integer(10i64.pow(digits))).is_integer() {
        digits += 1;
    }
    let scaled = (f * Fraction::from_integer(10i64.pow(digits))).to_integer();
    if digits == 0 {
        return scaled.to_string();
    }
    let p = 10i64.pow(digits);
    format!(
        "{}.{:0width$}",
        scaled / p,
        scaled % p,
        width = digits as usize
    )
}

/// Accepts `a/b` or a plain decimal.
pub fn parse_fraction(text: &str) -> Result<Fraction> {
    match text.split_once('/') {
        Some((n, d)) => {
            let n: i64 = n
                .trim()
                .parse()
                .map_err(|_| Error::BadNumber(text.into()))?;
            let d: i64 = d
                .trim()
                .parse()
                .map_err(|_| Error::BadNumber(text.into()))?;
            if d == 0 {
                return Err(Error::BadNumber(text.into()));
            }
            Ok(Fraction::new(n, d))
        }
        None => parse_decimal(text),
    }
}

impl fmt::Display for ArrivalProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArrivalProfile::FixedRate { start, rate, total } => write!(
                f,
                "fixed{{{}, {}, {}}}",
                format_ms(start.0),
                format_fraction(*rate),
                total
            ),
            ArrivalProfile::Trace { points } => {
                let body: Vec<String> = points
                    .iter()
                    .map(|(t, c)| format!("({}, {c})", format_ms(t.0)))
                    .collect();
                write!(f, "trace{{[{}]}}", body.join(", "))
            }
        }
    }
}

impl FromStr for ArrivalProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(body) = strip_call(s, "fixed") {
            let parts: Vec<&str> = body.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(Error::InvalidProfile(
                    "fixed{start_ms, rate_per_s, total} expects 3 values".into(),
                ));
            }
            let start = Time(parse_ms(parts[0])?);
            let rate = parse_fraction(parts[1])?;
            let total = parse_int_list(parts[2])?
                .first()
                .copied()
                .filter(|t| *t >= 0)
                .ok_or_else(|| Error::BadNumber(parts[2].into()))?;
            ArrivalProfile::fixed(start, rate, total as u64)
        } else if let Some(body) = strip_call(s, "trace") {
            let inner = body
                .trim()
                .strip_prefix('[')
                .and_then(|b| b.strip_suffix(']'))
                .ok_or_else(|| Error::InvalidProfile("expected trace{[(t_ms, cum), …]}".into()))?;
            let mut points = Vec::new();
            for chunk in inner.split(')') {
                let chunk = chunk.trim().trim_start_matches(',').trim();
                if chunk.is_empty() {
                    continue;
                }
                let pair = chunk
                    .strip_prefix('(')
                    .ok_or_else(|| Error::InvalidProfile(format!("bad trace point {chunk:?}")))?;
                let (t, c) = pair
                    .split_once(',')
                    .ok_or_else(|| Error::InvalidProfile(format!("bad trace point {chunk:?}")))?;
                let c: u64 = c
                    .trim()
                    .parse()
                    .map_err(|_| Error::BadNumber(c.trim().into()))?;
                points.push((Time(parse_ms(t)?), c));
            }
            ArrivalProfile::trace(points)
        } else {
            Err(Error::InvalidProfile(format!("unrecognised profile {s:?}")))
        }
    }
}
