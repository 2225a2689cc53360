//! Compensated sums and confidence intervals for the estimators.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::inv_beta_reg;

/// Kahan-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// One-sided upper Clopper-Pearson limit for `successes` out of `trials`.
pub fn clopper_pearson_upper(successes: u64, trials: u64, confidence: f64) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    if successes >= trials {
        return 1.0;
    }
    inv_beta_reg(successes as f64 + 1.0, (trials - successes) as f64, confidence)
}

/// One-sided lower Clopper-Pearson limit.
pub fn clopper_pearson_lower(successes: u64, trials: u64, confidence: f64) -> f64 {
    if successes == 0 || trials == 0 {
        return 0.0;
    }
    inv_beta_reg(successes as f64, (trials - successes + 1) as f64, 1.0 - confidence)
}

/// A proportion with its one-sided upper confidence limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_upper: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64, confidence: f64) -> Self {
        let estimate = if trials == 0 {
            0.0
        } else {
            successes as f64 / trials as f64
        };
        Self {
            successes,
            trials,
            estimate,
            ci_upper: clopper_pearson_upper(successes, trials, confidence),
        }
    }
}

/// Sample mean with a normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub count: u64,
    pub mean: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl MeanEstimate {
    /// Two-sided interval at `confidence`.
    pub fn two_sided(values: &[f64], confidence: f64) -> Self {
        Self::build(values, normal_quantile(0.5 + confidence / 2.0))
    }

    /// Interval whose upper end is a one-sided limit at `confidence`; the
    /// lower end mirrors it.
    pub fn one_sided(values: &[f64], confidence: f64) -> Self {
        Self::build(values, normal_quantile(confidence))
    }

    /// Mean of `values` over `count` trials, the missing ones counting as
    /// zero.
    pub fn padded(values: &[f64], count: usize, confidence_z: f64) -> Self {
        let n = count.max(values.len());
        if n == 0 {
            return Self::empty();
        }
        let mean = values.iter().copied().collect::<KahanSum>().value() / n as f64;
        let mut ss: KahanSum = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        ss.add((n - values.len()) as f64 * mean * mean);
        let var = if n > 1 { ss.value() / (n - 1) as f64 } else { 0.0 };
        let std_error = (var / n as f64).sqrt();
        Self {
            count: n as u64,
            mean,
            std_error,
            ci_lower: mean - confidence_z * std_error,
            ci_upper: mean + confidence_z * std_error,
        }
    }

    /// Clips the lower limit at zero, for means of nonnegative quantities.
    pub fn nonnegative(mut self) -> Self {
        self.ci_lower = self.ci_lower.max(0.0);
        self
    }

    fn build(values: &[f64], z: f64) -> Self {
        Self::padded(values, values.len(), z)
    }

    fn empty() -> Self {
        Self {
            count: 0,
            mean: f64::NAN,
            std_error: f64::NAN,
            ci_lower: f64::NAN,
            ci_upper: f64::NAN,
        }
    }
}
