//! Arithmetic backends shared by the exact (rational) and fast (f64) code paths.

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational number used by the interval-arithmetic paths.
pub type Rational = BigRational;

/// Field operations needed by maps, interval sets and fragment propagation.
pub trait Scalar:
    Clone + Debug + Display + PartialOrd + Num + Signed + Send + Sync + 'static
{
    /// Whether arithmetic is exact (no rounding).
    const EXACT: bool;

    fn from_ratio(num: i64, den: i64) -> Self;
    fn from_rational(r: &Rational) -> Self;
    fn to_f64(&self) -> f64;
    fn floor(&self) -> Self;

    fn from_i64(v: i64) -> Self {
        Self::from_ratio(v, 1)
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }

    /// Reduces into `[0, 1)`.
    fn frac(&self) -> Self {
        let f = self.clone() - self.floor();
        if f < Self::zero() {
            f + Self::one()
        } else {
            f
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn from_rational(r: &Rational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn floor(&self) -> Self {
        f64::floor(*self)
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn floor(&self) -> Self {
        BigRational::floor(self)
    }
}

/// Parses `"p/q"`, an integer, or a decimal literal (optionally with an exponent) exactly.
pub fn parse_rational(literal: &str) -> Result<Rational> {
    let s = literal.trim();
    let err = || Error::Parse(literal.to_string());
    if s.is_empty() {
        return Err(err());
    }
    if let Some((p, q)) = s.split_once('/') {
        let p = parse_rational(p)?;
        let q = parse_rational(q)?;
        if q.is_zero() {
            return Err(err());
        }
        return Ok(p / q);
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| err())?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let all_digits = format!("{int_part}{frac_part}");
    let numer: BigInt = all_digits.parse().map_err(|_| err())?;
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(numer);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if negative { -value } else { value })
}

/// Exact rational value of a finite f64.
pub fn rational_from_f64(v: f64) -> Result<Rational> {
    BigRational::from_float(v).ok_or_else(|| Error::Parse(v.to_string()))
}

/// Formats a rational as `p/q` (or `p` when integral).
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses a literal in the requested backend.
pub fn parse_scalar<S: Scalar>(literal: &str) -> Result<S> {
    parse_rational(literal).map(|r| S::from_rational(&r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_rational("3/4").unwrap(), Rational::from_ratio(3, 4));
        assert_eq!(parse_rational("0.25").unwrap(), Rational::from_ratio(1, 4));
        assert_eq!(parse_rational("-1.5e-1").unwrap(), Rational::from_ratio(-3, 20));
        assert_eq!(parse_rational("2").unwrap(), Rational::from_ratio(2, 1));
        assert_eq!(parse_rational(".5").unwrap(), Rational::from_ratio(1, 2));
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn decimal_approximant_has_large_denominator() {
        let r = parse_rational("0.4142135623731").unwrap();
        assert!(r.denom() >= &BigInt::from(1_000_000_000_000i64));
        assert!((Scalar::to_f64(&r) - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn frac_wraps_negative_values() {
        let r = Rational::from_ratio(-1, 4).frac();
        assert_eq!(r, Rational::from_ratio(3, 4));
        assert_eq!((-0.25f64).frac(), 0.75);
    }
}
