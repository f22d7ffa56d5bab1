//! Exact rational numbers for scores.
//!
//! Scores are kept as exact fractions of counts and only turned into decimals
//! when rendered. On the wire a rational is the string `"num/den"` (or just
//! `"num"` when the denominator is one).

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid rational literal {0:?}")]
pub struct ParseRationalError(pub String);

impl Rational {
    pub fn new(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "rational with zero denominator");
        Rational(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    /// `numer / denom` for counts; `None` when `denom == 0`.
    pub fn ratio(numer: usize, denom: usize) -> Option<Self> {
        if denom == 0 {
            None
        } else {
            Some(Rational(BigRational::new(
                BigInt::from(numer),
                BigInt::from(denom),
            )))
        }
    }

    pub fn from_integer(n: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Arithmetic mean; `None` for an empty input.
    pub fn mean<'a>(values: impl IntoIterator<Item = &'a Rational>) -> Option<Rational> {
        let mut sum = BigRational::zero();
        let mut n = 0i64;
        for v in values {
            sum += &v.0;
            n += 1;
        }
        (n > 0).then(|| Rational(sum / BigRational::from_integer(BigInt::from(n))))
    }

    /// Rounds half away from zero to `places` decimals and renders with exactly
    /// that many fractional digits.
    pub fn to_decimal_string(&self, places: u32) -> String {
        let scale = BigInt::from(10u32).pow(places);
        let scaled = &self.0 * BigRational::from_integer(scale.clone());
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let rounded = if scaled.is_negative() {
            -(-scaled + half).floor()
        } else {
            (scaled + half).floor()
        }
        .to_integer();
        let negative = rounded.sign() == Sign::Minus;
        let digits = rounded.magnitude().to_string();
        let places = places as usize;
        let body = if places == 0 {
            digits
        } else {
            let padded = format!("{:0>width$}", digits, width = places + 1);
            let (int, frac) = padded.split_at(padded.len() - places);
            format!("{int}.{frac}")
        };
        if negative {
            format!("-{body}")
        } else {
            body
        }
    }

    /// Renders as a percentage rounded half-up, e.g. `4.2%`.
    pub fn to_percent_string(&self, places: u32) -> String {
        let pct = self * &Rational::from_integer(100);
        format!("{}%", pct.to_decimal_string(places))
    }

    /// Parses an exact decimal literal such as `0.25`, `-1.5e-3` or `7`.
    pub fn from_decimal_str(s: &str) -> Result<Self, ParseRationalError> {
        let err = || ParseRationalError(s.to_string());
        let t = s.trim();
        let (mantissa, exp) = match t.find(['e', 'E']) {
            Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| err())?),
            None => (t, 0),
        };
        let (neg, mantissa) = match mantissa.strip_prefix('-') {
            Some(m) => (true, m),
            None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
        };
        let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(err());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let digits: BigInt = format!("{int}{frac}0").parse::<BigInt>().map_err(|_| err())? / 10;
        let exp = exp - frac.len() as i32;
        let ten = BigInt::from(10u32);
        let mut value = if exp >= 0 {
            BigRational::from_integer(digits * ten.pow(exp as u32))
        } else {
            BigRational::new(digits, ten.pow((-exp) as u32))
        };
        if neg {
            value = -value;
        }
        Ok(Rational(value))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Rational {
    type Err = ParseRationalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((n, d)) => {
                let n: BigInt = n.trim().parse().map_err(|_| ParseRationalError(s.into()))?;
                let d: BigInt = d.trim().parse().map_err(|_| ParseRationalError(s.into()))?;
                if d.is_zero() {
                    return Err(ParseRationalError(s.into()));
                }
                Ok(Rational(BigRational::new(n, d)))
            }
            None => Rational::from_decimal_str(s),
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl<'a> $trait<&'a Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                Rational((&self.0).$method(&rhs.0))
            }
        }
        impl $trait for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational(self.0.$method(rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rendering() {
        assert_eq!(Rational::new(232, 234).to_decimal_string(2), "0.99");
        assert_eq!(Rational::new(1, 8).to_decimal_string(2), "0.13");
        assert_eq!(Rational::new(1, 200).to_decimal_string(2), "0.01");
        assert_eq!(Rational::new(-1, 8).to_decimal_string(2), "-0.13");
        assert_eq!(Rational::one().to_decimal_string(2), "1.00");
        assert_eq!(Rational::new(3, 2).to_decimal_string(0), "2");
    }

    #[test]
    fn percent() {
        assert_eq!(Rational::new(46, 1095).to_percent_string(1), "4.2%");
    }

    #[test]
    fn string_round_trip() {
        for r in [Rational::new(3, 4), Rational::new(-2, 6), Rational::from_integer(5)] {
            let s = r.to_string();
            assert_eq!(s.parse::<Rational>().unwrap(), r);
        }
        assert!("1/0".parse::<Rational>().is_err());
    }

    #[test]
    fn decimal_literals() {
        assert_eq!(Rational::from_decimal_str("0.25").unwrap(), Rational::new(1, 4));
        assert_eq!(Rational::from_decimal_str("-1.5e-3").unwrap(), Rational::new(-3, 2000));
        assert_eq!(Rational::from_decimal_str("2E2").unwrap(), Rational::from_integer(200));
        assert_eq!(Rational::from_decimal_str(".5").unwrap(), Rational::new(1, 2));
        assert!(Rational::from_decimal_str("abc").is_err());
        assert!(Rational::from_decimal_str("").is_err());
    }

    #[test]
    fn mean_of_values() {
        let v = [Rational::new(1, 5), Rational::new(2, 5)];
        assert_eq!(Rational::mean(&v), Some(Rational::new(3, 10)));
        assert_eq!(Rational::mean(&[] as &[Rational]), None);
    }
}
