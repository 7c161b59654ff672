//! Scalar abstraction shared by the floating and exact backends.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Field-like scalar with exact integer embedding.
///
/// Implemented for `f64`, [`BigRational`] and
/// [`LogScalar`](crate::numerics::LogScalar). Division by zero follows the
/// backend (panics for rationals, saturates for floats).
pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Zero
    + One
{
    fn from_integer(n: i64) -> Self;

    /// `num / den`; `den` must be nonzero.
    fn from_ratio(num: i64, den: i64) -> Self;

    /// Lossy conversion for display and tolerance checks.
    fn to_f64(&self) -> f64;

    fn abs(&self) -> Self;

    fn from_usize(n: usize) -> Self {
        Self::from_integer(n as i64)
    }

    /// Integer power; negative exponents go through the reciprocal.
    fn powi(&self, e: i64) -> Self {
        if e < 0 {
            return Self::one() / self.powi(-e);
        }
        let mut base = self.clone();
        let mut acc = Self::one();
        let mut e = e as u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            base = base.clone() * base.clone();
            e >>= 1;
        }
        acc
    }
}

impl Scalar for f64 {
    fn from_integer(n: i64) -> Self {
        n as f64
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn abs(&self) -> Self {
        f64::abs(*self)
    }

    fn powi(&self, e: i64) -> Self {
        f64::powi(*self, e as i32)
    }
}

impl Scalar for BigRational {
    fn from_integer(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn abs(&self) -> Self {
        Signed::abs(self)
    }
}
