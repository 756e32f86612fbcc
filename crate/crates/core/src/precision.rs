//! Scalar abstraction shared by the numerical kernels.
//!
//! Every kernel that can lose digits in heavy traffic is generic over
//! [`Real`]. `f64` is the standard mode; [`Big`] wraps an MPFR float whose
//! mantissa width is chosen at run time and whose exponent range is wide
//! enough for quantities such as `exp(-7500)`.

use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rug::ops::Pow;
use rug::Float;
use serde::{Deserialize, Serialize};

/// Arithmetic mode requested by a caller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Standard,
    Extended { bits: u32 },
}

impl Precision {
    pub const DEFAULT_EXTENDED_BITS: u32 = 128;

    pub fn extended() -> Self {
        Precision::Extended {
            bits: Self::DEFAULT_EXTENDED_BITS,
        }
    }

    /// Mantissa bits used by this mode.
    pub fn bits(&self) -> u32 {
        match self {
            Precision::Standard => f64::MANTISSA_DIGITS,
            Precision::Extended { bits } => *bits,
        }
    }

    pub fn is_extended(&self) -> bool {
        matches!(self, Precision::Extended { .. })
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Standard => write!(f, "standard"),
            Precision::Extended { bits } => write!(f, "extended:{bits}"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    /// Accepts `standard`, `extended` or `extended:BITS`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" | "f64" => Ok(Precision::Standard),
            "extended" => Ok(Precision::extended()),
            other => {
                let bits = other
                    .strip_prefix("extended:")
                    .ok_or_else(|| format!("unknown precision mode `{other}`"))?
                    .parse::<u32>()
                    .map_err(|e| format!("bad mantissa width in `{other}`: {e}"))?;
                if bits < 64 {
                    return Err(format!("extended precision needs at least 64 bits, got {bits}"));
                }
                Ok(Precision::Extended { bits })
            }
        }
    }
}

pub trait Real:
    Clone
    + PartialOrd
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    /// Builds a value; `bits` is ignored by fixed-width types.
    fn with_bits(x: f64, bits: u32) -> Self;
    /// A constant carrying the same precision as `self`.
    fn lift(&self, x: f64) -> Self;
    /// Correctly rounded value of a decimal integer string.
    fn parse_int(&self, digits: &str) -> Option<Self>;
    fn to_f64(&self) -> f64;
    fn bits(&self) -> u32;
    fn ln(&self) -> Self;
    fn exp(&self) -> Self;
    fn abs(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn is_finite(&self) -> bool;

    fn zero_like(&self) -> Self {
        self.lift(0.0)
    }

    fn one_like(&self) -> Self {
        self.lift(1.0)
    }

    fn is_sign_negative(&self) -> bool {
        *self < self.zero_like()
    }

    /// Relative spacing of representable numbers near one.
    fn epsilon(&self) -> f64 {
        2f64.powi(1 - self.bits() as i32)
    }
}

impl Real for f64 {
    #[inline]
    fn with_bits(x: f64, _bits: u32) -> Self {
        x
    }
    #[inline]
    fn lift(&self, x: f64) -> Self {
        x
    }
    fn parse_int(&self, digits: &str) -> Option<Self> {
        digits.parse().ok()
    }
    #[inline]
    fn to_f64(&self) -> f64 {
        *self
    }
    #[inline]
    fn bits(&self) -> u32 {
        f64::MANTISSA_DIGITS
    }
    #[inline]
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    #[inline]
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    #[inline]
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    #[inline]
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    #[inline]
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    #[inline]
    fn zero_like(&self) -> Self {
        0.0
    }
    #[inline]
    fn one_like(&self) -> Self {
        1.0
    }
}

/// Multiple-precision float backed by MPFR.
#[derive(Clone, PartialEq, PartialOrd)]
pub struct Big(pub Float);

impl Big {
    pub fn new(x: f64, bits: u32) -> Self {
        Big(Float::with_val(bits, x))
    }

    pub fn inner(&self) -> &Float {
        &self.0
    }
}

impl fmt::Debug for Big {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Big({:e}, {} bits)", self.0.to_f64(), self.0.prec())
    }
}

macro_rules! big_binop {
    ($tr:ident, $method:ident, $atr:ident, $amethod:ident, $op:tt) => {
        impl $tr for Big {
            type Output = Big;
            #[inline]
            fn $method(self, rhs: Big) -> Big {
                Big(self.0 $op rhs.0)
            }
        }
        impl $atr for Big {
            #[inline]
            fn $amethod(&mut self, rhs: Big) {
                self.0.$amethod(rhs.0);
            }
        }
    };
}

big_binop!(Add, add, AddAssign, add_assign, +);
big_binop!(Sub, sub, SubAssign, sub_assign, -);
big_binop!(Mul, mul, MulAssign, mul_assign, *);
big_binop!(Div, div, DivAssign, div_assign, /);

impl Neg for Big {
    type Output = Big;
    fn neg(self) -> Big {
        Big(-self.0)
    }
}

impl Real for Big {
    fn with_bits(x: f64, bits: u32) -> Self {
        Big::new(x, bits)
    }
    fn lift(&self, x: f64) -> Self {
        Big(Float::with_val(self.0.prec(), x))
    }
    fn parse_int(&self, digits: &str) -> Option<Self> {
        Float::parse(digits)
            .ok()
            .map(|p| Big(Float::with_val(self.0.prec(), p)))
    }
    fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }
    fn bits(&self) -> u32 {
        self.0.prec()
    }
    fn ln(&self) -> Self {
        Big(self.0.clone().ln())
    }
    fn exp(&self) -> Self {
        Big(self.0.clone().exp())
    }
    fn abs(&self) -> Self {
        Big(self.0.clone().abs())
    }
    fn sqrt(&self) -> Self {
        Big(self.0.clone().sqrt())
    }
    fn powi(&self, n: i32) -> Self {
        Big(self.0.clone().pow(n))
    }
    fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_parses_and_displays() {
        assert_eq!("standard".parse::<Precision>().unwrap(), Precision::Standard);
        assert_eq!(
            "extended:256".parse::<Precision>().unwrap(),
            Precision::Extended { bits: 256 }
        );
        assert_eq!("extended".parse::<Precision>().unwrap(), Precision::extended());
        assert!("extended:16".parse::<Precision>().is_err());
        assert!("quad".parse::<Precision>().is_err());
        let p = Precision::Extended { bits: 200 };
        assert_eq!(p.to_string().parse::<Precision>().unwrap(), p);
    }

    #[test]
    fn big_keeps_digits_f64_loses() {
        let bits = 200;
        let one = Big::new(1.0, bits);
        let tiny = one.lift(1e-40);
        let back = (one.clone() + tiny.clone()) - one.clone();
        assert!((back.to_f64() / 1e-40 - 1.0).abs() < 1e-12);
        assert_eq!((1.0f64 + 1e-40) - 1.0, 0.0);
    }

    #[test]
    fn big_exponent_range_covers_heavy_traffic() {
        let x = Big::new(-7500.0, 128).exp();
        assert!(x > x.zero_like());
        assert!((x.ln().to_f64() + 7500.0).abs() < 1e-9);
    }

    #[test]
    fn powi_matches_f64() {
        let b = Big::new(0.9, 128);
        assert!((b.powi(37).to_f64() - 0.9f64.powi(37)).abs() < 1e-15);
        assert!((b.powi(-3).to_f64() - 0.9f64.powi(-3)).abs() < 1e-14);
    }
}
