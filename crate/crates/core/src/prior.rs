//! Change-point prior on `{-1, 0, 1, 2, ...}`.
//!
//! The mass at `-1` (the change was already in effect when observation
//! started) is the head mass `q`; the remaining `1 - q` is spread over
//! `k >= 0` by one of three families. Everything is evaluated in log domain
//! because survivor values enter the statistics as denominators and
//! underflow long before the detector stops caring about them.

use rand::Rng;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::scalar::{log_add_exp, Scalar};

/// Number of terms inspected by [`ChangePointPrior::check_cp2`] for the
/// closed-form families.
pub const CP2_DEFAULT_TERMS: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Geometric,
    DiscreteWeibull,
    ExplicitPmf,
}

#[derive(Debug, Clone)]
enum Family<T> {
    Geometric {
        rho: T,
        ln_rho: T,
        ln_keep: T,
    },
    DiscreteWeibull {
        shape: T,
        scale: T,
    },
    /// `log_pmf[k]` for `k = 0..=horizon` and `log_survivor[n]` for
    /// `n = 0..=horizon`; beyond the horizon the mass is zero.
    Explicit {
        log_pmf: Vec<T>,
        log_survivor: Vec<T>,
    },
}

/// Distribution of the change point `nu`.
///
/// Immutable after construction, so one instance can be shared by every
/// Monte Carlo worker.
#[derive(Debug, Clone)]
pub struct ChangePointPrior<T> {
    head_mass: T,
    ln_body: T,
    family: Family<T>,
}

/// Right-tail decay rate of the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailExponent<T> {
    pub value: T,
    /// `true` when the value was fitted numerically rather than known in
    /// closed form.
    pub estimated: bool,
}

/// Outcome of the `sum pi_k |log pi_k|^r < inf` check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cp2Diagnostic<T> {
    /// The partial sums settle (dyadic block increments shrink).
    pub finite: bool,
    /// The block increments shrink only polynomially; the partial sum is
    /// still far from its limit.
    pub slow: bool,
    pub partial_sum: T,
    /// Ratio of the last two dyadic block increments of the partial sum.
    pub block_ratio: T,
    /// Largest `k` included in the partial sum.
    pub last_index: usize,
}

impl<T: Scalar> ChangePointPrior<T> {
    /// `pi_k = (1 - q) rho (1 - rho)^k` for `k >= 0`.
    pub fn geometric(rho: T, head_mass: T) -> Result<Self> {
        if !(rho > T::zero() && rho < T::one()) {
            return domain(format!("geometric rho must lie in (0,1), got {rho}"));
        }
        let ln_body = check_head_mass(head_mass)?;
        Ok(Self {
            head_mass,
            ln_body,
            family: Family::Geometric {
                rho,
                ln_rho: rho.ln(),
                ln_keep: (-rho).ln_1p(),
            },
        })
    }

    /// Discrete Weibull: `P(nu >= n) = (1 - q) exp(-(n / scale)^shape)`.
    ///
    /// Shapes in `(0, 1)` give the heavy-tailed priors with zero tail
    /// exponent.
    pub fn discrete_weibull(shape: T, scale: T, head_mass: T) -> Result<Self> {
        if !(shape > T::zero() && shape < T::one()) {
            return domain(format!("discrete Weibull shape must lie in (0,1), got {shape}"));
        }
        if !(scale > T::zero() && scale.is_finite()) {
            return domain(format!("discrete Weibull scale must be positive, got {scale}"));
        }
        let ln_body = check_head_mass(head_mass)?;
        Ok(Self {
            head_mass,
            ln_body,
            family: Family::DiscreteWeibull { shape, scale },
        })
    }

    /// Explicit pmf over `k = 0..weights.len()`, renormalized to total mass
    /// `1 - q`. Every weight must be strictly positive.
    pub fn explicit(weights: &[T], head_mass: T) -> Result<Self> {
        if let Some((k, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w > T::zero() && w.is_finite()))
        {
            return domain(format!(
                "explicit pmf weight at k={k} must be positive and finite, got {w}"
            ));
        }
        let logs: Vec<T> = weights.iter().map(|w| w.ln()).collect();
        Self::explicit_from_log_weights(&logs, head_mass)
    }

    /// Like [`Self::explicit`] but takes unnormalized log weights, which
    /// allows tails far below the smallest positive double.
    pub fn explicit_from_log_weights(log_weights: &[T], head_mass: T) -> Result<Self> {
        if log_weights.is_empty() {
            return domain("explicit pmf needs at least one weight");
        }
        if let Some(k) = log_weights.iter().position(|w| !w.is_finite()) {
            return domain(format!("explicit pmf log weight at k={k} is not finite"));
        }
        let ln_body = check_head_mass(head_mass)?;
        let horizon = log_weights.len() - 1;
        // suffix sums give the unnormalized survivor directly
        let mut suffix = vec![T::neg_infinity(); horizon + 1];
        let mut acc = T::neg_infinity();
        for k in (0..=horizon).rev() {
            acc = log_add_exp(acc, log_weights[k]);
            suffix[k] = acc;
        }
        let ln_total = suffix[0];
        let shift = ln_body - ln_total;
        let log_pmf = log_weights.iter().map(|&w| w + shift).collect();
        let mut log_survivor: Vec<T> = suffix.into_iter().map(|s| s + shift).collect();
        log_survivor[0] = ln_body;
        Ok(Self {
            head_mass,
            ln_body,
            family: Family::Explicit { log_pmf, log_survivor },
        })
    }

    /// Truncates `weights` to `k <= horizon` before normalizing.
    pub fn explicit_truncated(weights: &[T], head_mass: T, horizon: usize) -> Result<Self> {
        let end = weights.len().min(horizon + 1);
        Self::explicit(&weights[..end], head_mass)
    }

    pub fn kind(&self) -> PriorKind {
        match self.family {
            Family::Geometric { .. } => PriorKind::Geometric,
            Family::DiscreteWeibull { .. } => PriorKind::DiscreteWeibull,
            Family::Explicit { .. } => PriorKind::ExplicitPmf,
        }
    }

    /// `q = P(nu = -1)`.
    pub fn head_mass(&self) -> T {
        self.head_mass
    }

    /// Last index with positive mass, for truncated explicit priors.
    pub fn horizon(&self) -> Option<usize> {
        match &self.family {
            Family::Explicit { log_pmf, .. } => Some(log_pmf.len() - 1),
            _ => None,
        }
    }

    /// `log P(nu = k)` for `k >= 0`.
    pub fn log_pmf_nonneg(&self, k: usize) -> T {
        match &self.family {
            Family::Geometric { ln_rho, ln_keep, .. } => self.ln_body + *ln_rho + T::of_usize(k) * *ln_keep,
            Family::DiscreteWeibull { shape, scale } => {
                let a = (T::of_usize(k) / *scale).powf(*shape);
                let b = (T::of_usize(k + 1) / *scale).powf(*shape);
                // S(k) - S(k+1) = S(k) (1 - exp(-(b - a)))
                self.ln_body - a + (-(-(b - a)).exp_m1()).ln()
            }
            Family::Explicit { log_pmf, .. } => log_pmf.get(k).copied().unwrap_or(T::neg_infinity()),
        }
    }

    /// `log P(nu = k)`, `k >= -1`.
    pub fn log_pmf(&self, k: i64) -> Result<T> {
        match k {
            k if k < -1 => domain(format!("change point index must be >= -1, got {k}")),
            -1 => Ok(self.head_mass.ln()),
            k => Ok(self.log_pmf_nonneg(k as usize)),
        }
    }

    /// `P(nu = k)`, `k >= -1`.
    pub fn pmf(&self, k: i64) -> Result<T> {
        if k == -1 {
            return Ok(self.head_mass);
        }
        self.log_pmf(k).map(T::exp)
    }

    /// Log of the weight the statistics attach to candidate `k >= 0`.
    ///
    /// The likelihood ratio for `k = -1` equals the one for `k = 0`, so the
    /// head mass is folded into `k = 0`.
    pub fn log_merged_weight(&self, k: usize) -> T {
        if k == 0 {
            log_add_exp(self.head_mass.ln(), self.log_pmf_nonneg(0))
        } else {
            self.log_pmf_nonneg(k)
        }
    }

    /// `log P(nu >= n)`.
    pub fn log_survivor(&self, n: usize) -> T {
        match &self.family {
            Family::Geometric { ln_keep, .. } => self.ln_body + T::of_usize(n) * *ln_keep,
            Family::DiscreteWeibull { shape, scale } => self.ln_body - (T::of_usize(n) / *scale).powf(*shape),
            Family::Explicit { log_survivor, .. } => log_survivor.get(n).copied().unwrap_or(T::neg_infinity()),
        }
    }

    /// `P(nu >= n)`; `survivor(0) = 1 - q`.
    pub fn survivor(&self, n: usize) -> T {
        self.log_survivor(n).exp()
    }

    /// Tail exponent `mu = lim |log P(nu > n)| / n`.
    pub fn tail_exponent(&self) -> TailExponent<T> {
        match &self.family {
            Family::Geometric { ln_keep, .. } => TailExponent {
                value: -*ln_keep,
                estimated: false,
            },
            Family::DiscreteWeibull { .. } => TailExponent {
                value: T::zero(),
                estimated: false,
            },
            Family::Explicit { log_survivor, .. } => TailExponent {
                value: fitted_tail_slope(log_survivor),
                estimated: true,
            },
        }
    }

    /// Partial sum of `pi_k |log pi_k|^r` with a dyadic-block convergence
    /// test. Closed-form families are summed over [`CP2_DEFAULT_TERMS`]
    /// terms, explicit ones over their whole support.
    pub fn check_cp2(&self, r: T) -> Result<Cp2Diagnostic<T>> {
        if !(r >= T::one()) {
            return domain(format!("CP2 moment order must be >= 1, got {r}"));
        }
        let last_index = self.horizon().unwrap_or(CP2_DEFAULT_TERMS - 1);
        // blocks cover k + 1 in [2^b, 2^(b+1)); keep only complete ones
        let mut blocks: Vec<T> = Vec::new();
        let mut total = T::zero();
        let mut block_sum = T::zero();
        let mut block_end = 2usize;
        for k in 0..=last_index {
            let lp = self.log_pmf_nonneg(k);
            let term = if lp == T::neg_infinity() {
                T::zero()
            } else {
                lp.exp() * lp.abs().powf(r)
            };
            total = total + term;
            block_sum = block_sum + term;
            if k + 2 == block_end {
                blocks.push(block_sum);
                block_sum = T::zero();
                block_end *= 2;
            }
        }
        let block_ratio = match blocks.as_slice() {
            [.., prev, last] if *prev > T::zero() => *last / *prev,
            _ => T::zero(),
        };
        let finite = block_ratio < T::of(0.9);
        Ok(Cp2Diagnostic {
            finite,
            slow: finite && block_ratio >= T::of(0.25),
            partial_sum: total,
            block_ratio,
            last_index,
        })
    }

    /// Draws `nu` by inverting the survivor function.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        let u = T::of(u);
        if u < self.head_mass {
            return -1;
        }
        // nu = max { k : S(k) >= 1 - u }
        let ln_w = (T::one() - u).ln();
        let excess = self.ln_body - ln_w; // >= 0
        let k = match &self.family {
            Family::Geometric { ln_keep, .. } => (excess / -*ln_keep).floor(),
            Family::DiscreteWeibull { shape, scale } => (*scale * excess.powf(shape.recip())).floor(),
            Family::Explicit { log_survivor, .. } => {
                let idx = log_survivor.partition_point(|&ls| ls >= ln_w);
                return idx.saturating_sub(1) as i64;
            }
        };
        k.to_i64().unwrap_or(i64::MAX / 2).clamp(0, i64::MAX / 2)
    }

    /// Geometric success probability, when applicable.
    pub fn geometric_rho(&self) -> Option<T> {
        match self.family {
            Family::Geometric { rho, .. } => Some(rho),
            _ => None,
        }
    }
}

fn check_head_mass<T: Scalar>(q: T) -> Result<T> {
    if !(q >= T::zero() && q < T::one()) {
        return domain(format!("head mass q must lie in [0,1), got {q}"));
    }
    Ok((-q).ln_1p())
}

/// Least-squares slope of `-log S(n)` over the middle half of the support.
fn fitted_tail_slope<T: Scalar>(log_survivor: &[T]) -> T {
    let horizon = log_survivor.len() - 1;
    let (lo, hi) = if horizon >= 8 {
        (horizon / 4, 3 * horizon / 4)
    } else {
        (0, horizon)
    };
    let points: Vec<(T, T)> = (lo..=hi)
        .filter(|&n| log_survivor[n].is_finite())
        .map(|n| (T::of_usize(n), -log_survivor[n]))
        .collect();
    if points.len() < 2 {
        return T::zero();
    }
    let m = T::of_usize(points.len());
    let mx = points.iter().map(|p| p.0).sum::<T>() / m;
    let my = points.iter().map(|p| p.1).sum::<T>() / m;
    let sxy: T = points.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: T = points.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    (sxy / sxx).max(T::zero())
}
