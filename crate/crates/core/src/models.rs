//! Stream models: per-step log-likelihood-ratio increments and path
//! simulation.
//!
//! Both shipped models are Gaussian with a post-change mean `theta * S_t`
//! added to the noise, so the increment is a quadratic in `theta`:
//!
//! ```text
//! log L_theta(t) = theta * s_t * x_t / sigma^2 - theta^2 * s_t^2 / (2 sigma^2)
//! ```
//!
//! where `s_t`, `x_t` are the whitened signal and observation (for i.i.d.
//! noise, `s_t = 1` and `x_t` is the raw observation).

use std::fmt::Debug;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::prior::ChangePointPrior;
use crate::scalar::Scalar;

/// Default number of steps averaged when `Q` has no closed form.
pub const DEFAULT_ENERGY_WINDOW: usize = 100_000;

/// Burn-in used for the stationary AR start.
const STATIONARY_BURN_IN: usize = 2_000;

/// Post-change parameter space `[min, max]`, `min > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaRange<T> {
    pub min: T,
    pub max: T,
}

impl<T: Scalar> ThetaRange<T> {
    pub fn new(min: T, max: T) -> Result<Self> {
        if !(min > T::zero() && min <= max && max.is_finite()) {
            return domain(format!(
                "parameter range must satisfy 0 < min <= max < inf, got [{min}, {max}]"
            ));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, theta: T) -> bool {
        theta >= self.min && theta <= self.max
    }

    pub fn check(&self, theta: T) -> Result<()> {
        if self.contains(theta) {
            Ok(())
        } else {
            domain(format!(
                "theta={theta} outside parameter range [{}, {}]",
                self.min, self.max
            ))
        }
    }
}

/// Behavioral contract every stream model satisfies.
pub trait StreamModel<T: Scalar>: Debug + Send + Sync {
    /// How many past observations the conditional densities look back.
    fn memory(&self) -> usize;

    fn theta_range(&self) -> ThetaRange<T>;

    /// `log L_theta(t)` for `t >= 1`. `recent` ends with `x_t` and holds at
    /// least `min(t, memory() + 1)` observations.
    fn llr_increment(&self, theta: T, t: usize, recent: &[T]) -> Result<T>;

    /// Increments for a whole parameter grid. The grid is assumed to lie in
    /// the parameter range.
    fn llr_increments(&self, t: usize, recent: &[T], thetas: &[T], out: &mut [T]) -> Result<()> {
        for (o, &theta) in out.iter_mut().zip(thetas) {
            *o = self.llr_increment(theta, t, recent)?;
        }
        Ok(())
    }

    /// `I(theta)`: a.s. limit of `lambda_theta(k, k+n) / n` under the change.
    fn info_number(&self, theta: T) -> Result<T>;

    /// `I_0(theta)`: a.s. limit of `-lambda_theta(k, k+n) / n` with no change.
    fn null_info_number(&self, theta: T) -> Result<T>;

    /// `inf` of [`Self::null_info_number`] over `(0, inf)`.
    fn null_info_infimum(&self) -> T {
        T::zero()
    }

    /// Draws `x_1..x_horizon`. With `change = Some((nu, theta))` the
    /// post-change law applies from `t = nu + 1` on.
    fn simulate(&self, horizon: usize, change: Option<(i64, T)>, rng: &mut dyn RngCore) -> Vec<T>;
}

pub type SharedModel<T> = Arc<dyn StreamModel<T>>;

#[inline]
fn quadratic_llr<T: Scalar>(theta: T, s: T, x: T, sigma2: T) -> T {
    theta * s * x / sigma2 - theta * theta * s * s / (T::of(2.0) * sigma2)
}

fn standard_normal<T: Scalar>(rng: &mut dyn RngCore) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::of(z)
}

fn post_change<T: Scalar>(change: Option<(i64, T)>, t: usize) -> Option<T> {
    change.and_then(|(nu, theta)| (t as i64 > nu).then_some(theta))
}

// ---------------------------------------------------------------------------
// i.i.d. Gaussian mean shift
// ---------------------------------------------------------------------------

/// `N(0, sigma^2)` before the change, `N(theta, sigma^2)` after.
#[derive(Debug, Clone)]
pub struct IidGaussian<T> {
    sigma: T,
    range: ThetaRange<T>,
}

impl<T: Scalar> IidGaussian<T> {
    pub fn new(sigma: T, range: ThetaRange<T>) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return domain(format!("noise sigma must be positive, got {sigma}"));
        }
        Ok(Self { sigma, range })
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }
}

impl<T: Scalar> StreamModel<T> for IidGaussian<T> {
    fn memory(&self) -> usize {
        0
    }

    fn theta_range(&self) -> ThetaRange<T> {
        self.range
    }

    fn llr_increment(&self, theta: T, _t: usize, recent: &[T]) -> Result<T> {
        self.range.check(theta)?;
        let x = *recent.last().ok_or(Error::Dimension { expected: 1, got: 0 })?;
        Ok(quadratic_llr(theta, T::one(), x, self.sigma * self.sigma))
    }

    fn llr_increments(&self, _t: usize, recent: &[T], thetas: &[T], out: &mut [T]) -> Result<()> {
        let x = *recent.last().ok_or(Error::Dimension { expected: 1, got: 0 })?;
        let s2 = self.sigma * self.sigma;
        for (o, &theta) in out.iter_mut().zip(thetas) {
            *o = quadratic_llr(theta, T::one(), x, s2);
        }
        Ok(())
    }

    fn info_number(&self, theta: T) -> Result<T> {
        self.range.check(theta)?;
        Ok(theta * theta / (T::of(2.0) * self.sigma * self.sigma))
    }

    fn null_info_number(&self, theta: T) -> Result<T> {
        self.info_number(theta)
    }

    fn simulate(&self, horizon: usize, change: Option<(i64, T)>, rng: &mut dyn RngCore) -> Vec<T> {
        (1..=horizon)
            .map(|t| {
                let noise = self.sigma * standard_normal::<T>(rng);
                post_change(change, t).map_or(noise, |theta| theta + noise)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// AR(p) noise with a deterministic signal of unknown amplitude
// ---------------------------------------------------------------------------

/// Deterministic signal shape `S_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal<T> {
    Constant { amplitude: T },
    Sine { omega: T, phase: T, amplitude: T },
}

impl<T: Scalar> Signal<T> {
    /// `S_n`; indices below 1 are zero.
    pub fn value(&self, n: i64) -> T {
        if n < 1 {
            return T::zero();
        }
        match *self {
            Signal::Constant { amplitude } => amplitude,
            Signal::Sine {
                omega,
                phase,
                amplitude,
            } => amplitude * (omega * T::of(n as f64) + phase).sin(),
        }
    }
}

/// `x_n - sum_{t=1}^{p_n} rho_t x_{n-t}` with `x_0, x_{-1}, ... = 0`.
///
/// The input is indexed from 1 (`sequence[0]` is `x_1`).
pub fn whiten<T: Scalar>(sequence: &[T], coeffs: &[T]) -> Vec<T> {
    (0..sequence.len())
        .map(|n| {
            let lag_sum: T = coeffs
                .iter()
                .enumerate()
                .take(n)
                .map(|(m, &rho)| rho * sequence[n - 1 - m])
                .sum();
            sequence[n] - lag_sum
        })
        .collect()
}

/// `X_n = theta S_n 1{n > nu} + xi_n`, `xi_n = sum rho_t xi_{n-t} + w_n`,
/// `w_n ~ N(0, sigma^2)`.
#[derive(Debug, Clone)]
pub struct ArGaussian<T> {
    coeffs: Vec<T>,
    sigma: T,
    signal: Signal<T>,
    range: ThetaRange<T>,
    stationary_init: bool,
    energy: T,
}

impl<T: Scalar> ArGaussian<T> {
    pub fn new(coeffs: Vec<T>, sigma: T, signal: Signal<T>, range: ThetaRange<T>) -> Result<Self> {
        Self::with_energy_window(coeffs, sigma, signal, range, DEFAULT_ENERGY_WINDOW)
    }

    /// As [`Self::new`], averaging `window` steps when `Q` is numeric.
    pub fn with_energy_window(
        coeffs: Vec<T>,
        sigma: T,
        signal: Signal<T>,
        range: ThetaRange<T>,
        window: usize,
    ) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return domain(format!("noise sigma must be positive, got {sigma}"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return domain("AR coefficients must be finite");
        }
        if window == 0 {
            return domain("energy window must be positive");
        }
        let mut model = Self {
            coeffs,
            sigma,
            signal,
            range,
            stationary_init: false,
            energy: T::zero(),
        };
        model.energy = match signal {
            Signal::Constant { amplitude } => {
                let gain = T::one() - model.coeffs.iter().copied().sum::<T>();
                amplitude * amplitude * gain * gain
            }
            Signal::Sine { .. } => {
                let total: T = (1..=window).map(|t| model.whitened_signal(t).powi(2)).sum();
                total / T::of_usize(window)
            }
        };
        if !(model.energy > T::zero()) {
            return domain("whitened signal energy Q must be positive");
        }
        Ok(model)
    }

    /// Start the noise recursion from (approximately) its stationary law
    /// instead of zeros.
    pub fn stationary(mut self, on: bool) -> Self {
        self.stationary_init = on;
        self
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn signal(&self) -> Signal<T> {
        self.signal
    }

    /// `Q = lim (1/n) sum S~_t^2`.
    pub fn signal_energy(&self) -> T {
        self.energy
    }

    /// `S~_t`.
    pub fn whitened_signal(&self, t: usize) -> T {
        let t = t as i64;
        let lag_sum: T = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(m, &rho)| rho * self.signal.value(t - 1 - m as i64))
            .sum();
        self.signal.value(t) - lag_sum
    }

    fn whitened_observation(&self, t: usize, recent: &[T]) -> Result<T> {
        let lags = self.coeffs.len().min(t.saturating_sub(1));
        if recent.len() < lags + 1 {
            return Err(Error::Dimension {
                expected: lags + 1,
                got: recent.len(),
            });
        }
        let last = recent.len() - 1;
        let lag_sum: T = self.coeffs[..lags]
            .iter()
            .enumerate()
            .map(|(m, &rho)| rho * recent[last - 1 - m])
            .sum();
        Ok(recent[last] - lag_sum)
    }
}

impl<T: Scalar> StreamModel<T> for ArGaussian<T> {
    fn memory(&self) -> usize {
        self.coeffs.len()
    }

    fn theta_range(&self) -> ThetaRange<T> {
        self.range
    }

    fn llr_increment(&self, theta: T, t: usize, recent: &[T]) -> Result<T> {
        self.range.check(theta)?;
        let x = self.whitened_observation(t, recent)?;
        Ok(quadratic_llr(
            theta,
            self.whitened_signal(t),
            x,
            self.sigma * self.sigma,
        ))
    }

    fn llr_increments(&self, t: usize, recent: &[T], thetas: &[T], out: &mut [T]) -> Result<()> {
        let x = self.whitened_observation(t, recent)?;
        let s = self.whitened_signal(t);
        let s2 = self.sigma * self.sigma;
        for (o, &theta) in out.iter_mut().zip(thetas) {
            *o = quadratic_llr(theta, s, x, s2);
        }
        Ok(())
    }

    fn info_number(&self, theta: T) -> Result<T> {
        self.range.check(theta)?;
        Ok(theta * theta * self.energy / (T::of(2.0) * self.sigma * self.sigma))
    }

    fn null_info_number(&self, theta: T) -> Result<T> {
        self.info_number(theta)
    }

    fn simulate(&self, horizon: usize, change: Option<(i64, T)>, rng: &mut dyn RngCore) -> Vec<T> {
        let p = self.coeffs.len();
        // ring of the last p noise values, most recent first
        let mut past = vec![T::zero(); p];
        let advance = |past: &mut Vec<T>, rng: &mut dyn RngCore| {
            let ar: T = self.coeffs.iter().zip(past.iter()).map(|(&r, &x)| r * x).sum();
            let xi = ar + self.sigma * standard_normal::<T>(rng);
            if p > 0 {
                past.rotate_right(1);
                past[0] = xi;
            }
            xi
        };
        if self.stationary_init && p > 0 {
            for _ in 0..STATIONARY_BURN_IN {
                advance(&mut past, rng);
            }
        }
        (1..=horizon)
            .map(|t| {
                let xi = advance(&mut past, rng);
                post_change(change, t).map_or(xi, |theta| theta * self.signal.value(t as i64) + xi)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Information numbers across streams
// ---------------------------------------------------------------------------

/// `I_ij(theta_i, theta_j) = I_i(theta_i) + I_0j(theta_j)` for independent
/// streams.
pub fn info_number_pair<T: Scalar>(models: &[SharedModel<T>], i: usize, theta_i: T, j: usize, theta_j: T) -> Result<T> {
    if i == j {
        return domain(format!("pairwise information needs distinct streams, got i = j = {i}"));
    }
    let (mi, mj) = (stream(models, i)?, stream(models, j)?);
    Ok(mi.info_number(theta_i)? + mj.null_info_number(theta_j)?)
}

/// Infimum of `I_ij(theta_i, .)` over stream `j`'s parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairInfimum<T> {
    /// Minimum over the supplied grid of `theta_j`.
    pub on_grid: T,
    /// Infimum over `theta_j in (0, inf)`.
    pub analytic: T,
}

pub fn info_number_pair_inf<T: Scalar>(
    models: &[SharedModel<T>],
    i: usize,
    theta_i: T,
    j: usize,
    grid_j: &[T],
) -> Result<PairInfimum<T>> {
    if grid_j.is_empty() {
        return domain("empty parameter grid");
    }
    let mut on_grid = T::infinity();
    for &theta_j in grid_j {
        on_grid = on_grid.min(info_number_pair(models, i, theta_i, j, theta_j)?);
    }
    let analytic = stream(models, i)?.info_number(theta_i)? + stream(models, j)?.null_info_infimum();
    Ok(PairInfimum { on_grid, analytic })
}

fn stream<T: Scalar>(models: &[SharedModel<T>], i: usize) -> Result<&SharedModel<T>> {
    models
        .get(i)
        .ok_or_else(|| Error::Domain(format!("stream index {i} out of range for {} streams", models.len())))
}

// ---------------------------------------------------------------------------
// Trial paths
// ---------------------------------------------------------------------------

/// One simulated realization of all streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialPath<T> {
    pub horizon: usize,
    pub streams: usize,
    /// Time-major: `data[(t - 1) * streams + i]` is `X_t(i)`.
    pub data: Vec<T>,
    /// `None` means no change (`nu = inf`).
    pub true_nu: Option<i64>,
    pub true_stream: Option<usize>,
    pub true_theta: Option<T>,
}

impl<T: Scalar> TrialPath<T> {
    /// Observation vector at time `t` (1-based).
    pub fn at(&self, t: usize) -> &[T] {
        &self.data[(t - 1) * self.streams..t * self.streams]
    }

    pub fn stream_values(&self, i: usize) -> Vec<T> {
        self.data.iter().skip(i).step_by(self.streams).copied().collect()
    }

    /// Builds a path from per-time rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let streams = rows.first().map_or(0, Vec::len);
        if streams == 0 {
            return domain("path needs at least one stream and one time step");
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != streams) {
            return Err(Error::Dimension {
                expected: streams,
                got: bad.len(),
            });
        }
        Ok(Self {
            horizon: rows.len(),
            streams,
            data: rows.concat(),
            true_nu: None,
            true_stream: None,
            true_theta: None,
        })
    }
}

/// Simulates all streams. `change = Some((stream, nu, theta))` switches one
/// stream after `nu`; `None` keeps every stream pre-change.
pub fn simulate<T: Scalar>(
    models: &[SharedModel<T>],
    change: Option<(usize, i64, T)>,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<TrialPath<T>> {
    if horizon == 0 {
        return domain("horizon must be at least 1");
    }
    if models.is_empty() {
        return domain("need at least one stream model");
    }
    if let Some((i, nu, theta)) = change {
        stream(models, i)?.theta_range().check(theta)?;
        if nu < -1 {
            return domain(format!("change point must be >= -1, got {nu}"));
        }
    }
    let columns: Vec<Vec<T>> = models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let c = change.and_then(|(s, nu, theta)| (s == i).then_some((nu, theta)));
            m.simulate(horizon, c, rng)
        })
        .collect();
    let n = models.len();
    let mut data = Vec::with_capacity(horizon * n);
    for t in 0..horizon {
        data.extend(columns.iter().map(|c| c[t]));
    }
    Ok(TrialPath {
        horizon,
        streams: n,
        data,
        true_nu: change.map(|c| c.1),
        true_stream: change.map(|c| c.0),
        true_theta: change.map(|c| c.2),
    })
}

/// Draws `nu` from the prior, then simulates with the change in `stream`.
pub fn simulate_with_prior<T: Scalar>(
    models: &[SharedModel<T>],
    prior: &ChangePointPrior<T>,
    stream: usize,
    theta: T,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<TrialPath<T>> {
    let nu = prior.sample(rng);
    simulate(models, Some((stream, nu, theta)), horizon, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn range() -> ThetaRange<f64> {
        ThetaRange::new(0.1, 5.0).unwrap()
    }

    fn iid() -> SharedModel<f64> {
        Arc::new(IidGaussian::new(1.0, range()).unwrap())
    }

    fn ar1() -> ArGaussian<f64> {
        ArGaussian::new(vec![0.5], 1.0, Signal::Constant { amplitude: 1.0 }, range()).unwrap()
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn whiten_examples() {
        let s = [3.0, -1.0, 2.5];
        assert_eq!(whiten(&s, &[]), s.to_vec());
        assert_eq!(whiten(&[1.0, 1.0, 1.0], &[0.5]), vec![1.0, 0.5, 0.5]);
        let w = whiten(&[1.0, 2.0, 3.0, 4.0], &[0.4, 0.2]);
        // direct loop oracle
        let oracle: Vec<f64> = (0..4)
            .map(|n| {
                let x = [1.0, 2.0, 3.0, 4.0];
                let mut v = x[n];
                for (m, r) in [0.4, 0.2].iter().enumerate() {
                    if n > m {
                        v -= r * x[n - m - 1];
                    }
                }
                v
            })
            .collect();
        for (a, b) in w.iter().zip([1.0f64, 1.6, 2.0, 2.4]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(w, oracle);
    }

    #[test]
    fn iid_increments() {
        let m = IidGaussian::new(1.0, range()).unwrap();
        assert_eq!(m.llr_increment(1.0, 1, &[1.0]).unwrap(), 0.5);
        assert_eq!(m.llr_increment(1.0, 1, &[0.0]).unwrap(), -0.5);
        assert!(m.llr_increment(7.0, 1, &[0.0]).is_err());
        assert!(m.llr_increment(0.05, 1, &[0.0]).is_err());
    }

    #[test]
    fn ar_increment_matches_density_ratio() {
        let m = ArGaussian::new(vec![0.5], 1.0, Signal::Constant { amplitude: 1.0 }, range()).unwrap();
        let v = m.llr_increment(2.0, 2, &[1.0, 0.8]).unwrap();
        assert!((v - (-0.2)).abs() < 1e-12);
        // oracle: ratio of the two Gaussian conditional densities of X_2 given X_1
        let (theta, rho, x1, x2) = (2.0, 0.5, 1.0, 0.8);
        let post_mean = theta * 1.0 + rho * (x1 - theta * 1.0);
        let pre_mean = rho * x1;
        let log_ratio = (-(x2 - post_mean) * (x2 - post_mean) + (x2 - pre_mean) * (x2 - pre_mean)) / 2.0;
        assert!((v - log_ratio).abs() < 1e-12);
    }

    #[test]
    fn info_numbers() {
        let m = IidGaussian::new(1.0, range()).unwrap();
        assert_eq!(m.info_number(1.0).unwrap(), 0.5);
        let a = ar1();
        assert!((a.signal_energy() - 0.25).abs() < 1e-15);
        assert!((a.info_number(2.0).unwrap() - 0.5).abs() < 1e-15);
        // Q oracle: Cesaro average of S~^2 over 1e5 steps
        let q: f64 = (1..=100_000).map(|t| a.whitened_signal(t).powi(2)).sum::<f64>() / 1e5;
        assert!((q - 0.25).abs() < 1e-4);
        // generic formula with Q = 0.5
        let sine = ArGaussian::new(
            vec![],
            1.0,
            Signal::Sine {
                omega: 0.7,
                phase: 0.0,
                amplitude: 1.0,
            },
            range(),
        )
        .unwrap();
        assert!((sine.signal_energy() - 0.5).abs() < 1e-3);
        let expected = 1.0 * sine.signal_energy() / 2.0;
        assert!((sine.info_number(1.0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn pairwise_info() {
        let models = vec![iid(), iid()];
        assert_eq!(info_number_pair(&models, 0, 1.0, 1, 1.0).unwrap(), 1.0);
        assert!(info_number_pair(&models, 1, 1.0, 1, 1.0).is_err());
        let grid = [0.1, 0.5, 1.0];
        let inf = info_number_pair_inf(&models, 0, 1.0, 1, &grid).unwrap();
        assert!((inf.on_grid - 0.505).abs() < 1e-15);
        assert_eq!(inf.analytic, 0.5);
        let ar: Vec<SharedModel<f64>> = vec![Arc::new(ar1()), Arc::new(ar1())];
        assert!((info_number_pair(&ar, 0, 2.0, 1, 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn simulate_no_change_is_centered() {
        let models = vec![iid(), Arc::new(ar1()) as SharedModel<f64>];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = simulate(&models, None, 10_000, &mut rng).unwrap();
        let (m0, se0) = mean_and_se(&path.stream_values(0));
        assert!(m0.abs() < 4.0 * se0);
        // AR(1) with rho = 0.5 has long-run sd sigma / (1 - rho) for the mean
        let (m1, _) = mean_and_se(&path.stream_values(1));
        assert!(m1.abs() < 4.0 * 2.0 / 100.0);
        assert_eq!(path.true_stream, None);
    }

    #[test]
    fn simulate_mean_shift() {
        let models = vec![iid(), iid()];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let path = simulate(&models, Some((0, 0, 1.0)), 10_000, &mut rng).unwrap();
        let (m0, se0) = mean_and_se(&path.stream_values(0));
        let (m1, se1) = mean_and_se(&path.stream_values(1));
        assert!((m0 - 1.0).abs() < 4.0 * se0);
        assert!(m1.abs() < 4.0 * se1);
        assert!(simulate(&models, Some((2, 0, 1.0)), 10, &mut rng).is_err());
        assert!(simulate(&models, Some((0, 0, 9.0)), 10, &mut rng).is_err());
    }

    #[test]
    fn ar1_autocorrelation() {
        let a = ar1();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = a.simulate(100_000, None, &mut rng);
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let c1: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let r1 = c1 / c0;
        // Bartlett SE for AR(1) lag-1 autocorrelation: sqrt((1 - rho^2) / n)
        let se = ((1.0 - 0.25) / n as f64).sqrt();
        assert!((r1 - 0.5).abs() < 4.0 * se, "r1={r1}");
    }

    #[test]
    fn unit_expectation_under_null() {
        let models: Vec<SharedModel<f64>> = vec![iid(), Arc::new(ar1())];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (i, m) in models.iter().enumerate() {
            let lrs: Vec<f64> = (0..50_000)
                .map(|_| {
                    let x = m.simulate(5, None, &mut rng);
                    (1..=5)
                        .map(|t| m.llr_increment(0.5, t, &x[..t]).unwrap())
                        .sum::<f64>()
                        .exp()
                })
                .collect();
            let (mean, se) = mean_and_se(&lrs);
            assert!((mean - 1.0).abs() < 3.0 * se, "stream {i}: {mean} +- {se}");
        }
    }

    #[test]
    fn llr_drift_signs() {
        let a = ar1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pre = a.simulate(20_000, None, &mut rng);
        let post = a.simulate(20_000, Some((0, 2.0)), &mut rng);
        let rate = |x: &[f64]| {
            (1..=x.len())
                .map(|t| a.llr_increment(2.0, t, &x[..t]).unwrap())
                .sum::<f64>()
                / x.len() as f64
        };
        assert!(rate(&pre) < 0.0);
        let r = rate(&post);
        assert!((r - 0.5).abs() < 0.02 * 0.5 + 0.02, "post rate {r}");
    }

    #[test]
    fn stationary_start_differs_from_zero_start() {
        let a = ar1().stationary(true);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let starts: Vec<f64> = (0..4_000).map(|_| a.simulate(1, None, &mut rng)[0]).collect();
        let var = starts.iter().map(|x| x * x).sum::<f64>() / starts.len() as f64;
        // stationary variance sigma^2 / (1 - rho^2) = 4/3 vs 1 from a zero start
        assert!((var - 4.0 / 3.0).abs() < 0.12, "var={var}");
    }

    proptest! {
        #[test]
        fn whiten_is_linear(
            xs in proptest::collection::vec(-10.0f64..10.0, 1..30),
            ys_seed in proptest::collection::vec(-10.0f64..10.0, 30),
            coeffs in proptest::collection::vec(-0.9f64..0.9, 0..4),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let ys = &ys_seed[..xs.len()];
            let combo: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| a * x + b * y).collect();
            let lhs = whiten(&combo, &coeffs);
            let wx = whiten(&xs, &coeffs);
            let wy = whiten(ys, &coeffs);
            for n in 0..xs.len() {
                prop_assert!((lhs[n] - (a * wx[n] + b * wy[n])).abs() < 1e-9);
            }
        }
    }
}
