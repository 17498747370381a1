//! Small helpers for exact rational arithmetic.

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(v: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Parses `p/q`, `p` or a finite decimal like `0.25` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::InvalidInput(format!("cannot parse rational {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    if let Some((whole, fracpart)) = s.split_once('.') {
        if fracpart.is_empty() || !fracpart.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let neg = whole.trim_start().starts_with('-');
        let w: BigInt = if whole.is_empty() || whole == "-" { BigInt::zero() } else { whole.parse().map_err(|_| bad())? };
        let f: BigInt = fracpart.parse().map_err(|_| bad())?;
        let den = num_traits::pow(BigInt::from(10), fracpart.len());
        let sign = if neg { -BigInt::one() } else { BigInt::one() };
        return Ok(BigRational::new(w * &den + sign * f, den));
    }
    let p: BigInt = s.parse().map_err(|_| bad())?;
    Ok(BigRational::from_integer(p))
}

pub fn to_f64(x: &BigRational) -> f64 {
    if let Some(v) = x.to_f64() {
        if v.is_finite() {
            return v;
        }
    }
    let sign = if x.is_negative() { -1.0 } else { 1.0 };
    sign * ln_abs(x).exp()
}

/// Natural log of a positive big integer, accurate for any magnitude.
pub fn ln_biguint(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("fits in f64").ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("64 bits");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `ln |x|`, `-inf` for zero.
pub fn ln_abs(x: &BigRational) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let n = x.numer().magnitude();
    let d = x.denom().magnitude();
    ln_biguint(n) - ln_biguint(d)
}

pub fn is_positive_nonzero(x: &BigRational) -> bool {
    x.numer().sign() == Sign::Plus
}

pub fn lcm_big(a: &BigUint, b: &BigUint) -> BigUint {
    use num_integer::Integer;
    a.lcm(b)
}

/// `x log x` with the convention `0 log 0 = 0`.
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Shannon entropy in nats of a mass vector.
pub fn shannon(masses: impl IntoIterator<Item = f64>) -> f64 {
    -masses.into_iter().map(xlogx).sum::<f64>()
}

/// `n!` as a big integer.
pub fn factorial(n: usize) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

/// Table of `0!, 1!, ..., n!`.
pub fn factorial_table(n: usize) -> Vec<BigUint> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(BigUint::one());
    for k in 1..=n {
        let next = &out[k - 1] * BigUint::from(k);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_rational("1/50").unwrap(), ratio(1, 50));
        assert_eq!(parse_rational("6/4").unwrap(), ratio(3, 2));
        assert_eq!(parse_rational("0.25").unwrap(), ratio(1, 4));
        assert_eq!(parse_rational("-1.5").unwrap(), ratio(-3, 2));
        assert_eq!(parse_rational("3").unwrap(), ratio(3, 1));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn ln_of_huge_integers() {
        let f = factorial(1000);
        let expect: f64 = (1..=1000).map(|k| (k as f64).ln()).sum();
        assert!((ln_biguint(&f) - expect).abs() < 1e-9 * expect);
        assert!((ln_abs(&ratio(8, 3)) - (8.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_log_zero() {
        assert_eq!(xlogx(0.0), 0.0);
        assert!((shannon([0.5, 0.5, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
