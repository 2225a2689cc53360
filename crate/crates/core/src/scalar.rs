//! Floating-point abstraction shared by every numeric module.
//!
//! All statistics are carried in log domain, so the only requirement on the
//! scalar is IEEE-style `Float` behavior plus lossless-enough conversion from
//! `f64` literals. `f64` is the reference instantiation; `f32` works for the
//! recursive engine but loses the 1e-9 agreement the oracle tests expect.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into the scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    /// Converts a count or index.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("integer representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == T::infinity() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(values)))`. Empty input or all `-inf` gives `-inf`.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || max == T::infinity() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Streaming accumulator for `log(sum(exp(x)))`.
///
/// Rescales the running sum whenever a larger term arrives, so a single pass
/// suffices.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp<T> {
    max: T,
    scaled: T,
}

impl<T: Scalar> Default for LogSumExp<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> LogSumExp<T> {
    pub fn new() -> Self {
        Self {
            max: T::neg_infinity(),
            scaled: T::zero(),
        }
    }

    #[inline]
    pub fn push(&mut self, x: T) {
        if x == T::neg_infinity() {
            return;
        }
        if x <= self.max {
            self.scaled = self.scaled + (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + T::one();
            self.max = x;
        }
    }

    pub fn value(&self) -> T {
        if self.max == T::neg_infinity() {
            T::neg_infinity()
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `1 / (1 + exp(x))`, stable for large `|x|`.
#[inline]
pub fn logistic_complement<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        let e = (-x).exp();
        e / (T::one() + e)
    } else {
        T::one() / (T::one() + x.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_sum() {
        let xs = [0.1_f64, -2.0, 3.5, 1.25];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
        let mut acc = LogSumExp::new();
        xs.iter().for_each(|&x| acc.push(x));
        assert!((acc.value() - naive).abs() < 1e-14);
        assert!((log_add_exp(0.1, 3.5) - (0.1f64.exp() + 3.5f64.exp()).ln()).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(LogSumExp::<f64>::new().value(), f64::NEG_INFINITY);
        // no overflow far outside double range
        let big = log_sum_exp(&[1000.0_f64, 1000.0]);
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn logistic_complement_is_stable() {
        assert_eq!(logistic_complement(0.0_f64), 0.5);
        assert_eq!(logistic_complement(f64::INFINITY), 0.0);
        assert!(logistic_complement(-800.0_f64) == 1.0);
        assert!(logistic_complement(800.0_f64) < 1e-300);
    }
}
