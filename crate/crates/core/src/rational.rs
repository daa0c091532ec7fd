//! Exact rational parsing for budgets given as `"p/q"`, integers or decimals.

use num_rational::Rational64;
use num_traits::{Signed, Zero};

use crate::error::{Error, Result};

/// Parses `"2/3"`, `"-4"`, `"5.2"` or `"1e-3"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational64> {
    let s = s.trim();
    let bad = || Error::Config(format!("cannot parse {s:?} as a rational"));
    if let Some((num, den)) = s.split_once('/') {
        let num: i64 = num.trim().parse().map_err(|_| bad())?;
        let den: i64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(Error::Config(format!("zero denominator in {s:?}")));
        }
        return Ok(Rational64::new(num, den));
    }
    parse_decimal(s).ok_or_else(bad)
}

fn parse_decimal(s: &str) -> Option<Rational64> {
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all = format!("{int_part}{frac_part}");
    let numer: i64 = all.parse().ok()?;
    let scale = exp.checked_sub(frac_part.len() as i32)?;
    let ten = Rational64::from_integer(10);
    let value = if scale >= 0 {
        Rational64::from_integer(numer) * pow(ten, scale as u32)?
    } else {
        Rational64::from_integer(numer) / pow(ten, (-scale) as u32)?
    };
    Some(if neg { -value } else { value })
}

fn pow(base: Rational64, exp: u32) -> Option<Rational64> {
    let mut acc = Rational64::from_integer(1);
    for _ in 0..exp {
        let next = acc.numer().checked_mul(*base.numer())?;
        acc = Rational64::from_integer(next);
    }
    Some(acc)
}

/// Converts an `f64` through its shortest round-trip decimal form, so a JSON
/// `5.2` becomes exactly `26/5`.
pub fn rational_from_f64(x: f64) -> Result<Rational64> {
    if !x.is_finite() {
        return Err(Error::Config(format!("non-finite number {x}")));
    }
    parse_rational(&format!("{x:e}"))
}

pub fn to_f64(x: Rational64) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

pub(crate) fn is_positive(x: &Rational64) -> bool {
    !x.is_zero() && x.is_positive()
}
