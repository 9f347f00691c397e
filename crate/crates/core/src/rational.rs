//! Exact non-negative fractions used for scaling factors (δ, δ_RSF, rates).

use num_rational::Ratio;

use crate::error::{Error, Result};

pub type Fraction = Ratio<i64>;

/// Parses a plain decimal such as `0.5`, `3` or `1.25` into an exact fraction.
pub fn parse_decimal(text: &str) -> Result<Fraction> {
    let s = text.trim();
    let bad = || Error::BadNumber(text.to_string());
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part
        .chars()
        .chain(frac_part.chars())
        .all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    if frac_part.len() > 12 {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i64 = if digits.is_empty() {
        0
    } else {
        digits.parse().map_err(|_| bad())?
    };
    let denom = 10i64.checked_pow(frac_part.len() as u32).ok_or_else(bad)?;
    let value = Fraction::new(numer, denom);
    Ok(if neg { -value } else { value })
}

/// `value * frac`, rounded half away from zero.
pub fn scale_round(value: i64, frac: Fraction) -> i64 {
    let num = value as i128 * *frac.numer() as i128;
    let den = *frac.denom() as i128;
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    (if 2 * r >= den { q + 1 } else { q }) as i64
}

pub fn to_f64(frac: Fraction) -> f64 {
    *frac.numer() as f64 / *frac.denom() as f64
}
