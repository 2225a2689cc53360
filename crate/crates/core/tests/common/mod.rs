//! Brute-force recomputation of the detection statistics straight from
//! Gaussian densities, independent of the recursive engine.
#![allow(dead_code, clippy::needless_range_loop)]

use std::sync::Arc;

use multidetect::engine::{DetectorSetup, MixingMeasure};
use multidetect::models::{IidGaussian, SharedModel, ThetaRange};
use multidetect::prior::ChangePointPrior;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One Gaussian mean-shift stream as the oracle sees it.
#[derive(Debug, Clone)]
pub struct OracleStream {
    pub sigma: f64,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Geometric prior with head mass `q`.
#[derive(Debug, Clone, Copy)]
pub struct OraclePrior {
    pub rho: f64,
    pub q: f64,
}

impl OraclePrior {
    pub fn pmf(&self, k: i64) -> f64 {
        if k == -1 {
            self.q
        } else {
            (1.0 - self.q) * self.rho * (1.0 - self.rho).powi(k as i32)
        }
    }

    /// `P(nu >= n)` as an explicit tail sum.
    pub fn survivor(&self, n: usize) -> f64 {
        let mut s = 0.0;
        let mut k = n as i64 + 20_000;
        while k >= n as i64 {
            s += self.pmf(k);
            k -= 1;
        }
        s
    }
}

fn density(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// `LR_theta(k, n)` as a product of density ratios; `k = -1` starts at 1.
pub fn likelihood_ratio(x: &[f64], sigma: f64, theta: f64, k: i64, n: usize) -> f64 {
    let start = (k.max(0) + 1) as usize;
    (start..=n)
        .map(|t| density(x[t - 1], theta, sigma) / density(x[t - 1], 0.0, sigma))
        .product()
}

#[derive(Debug, Clone)]
pub struct OracleFrame {
    pub log_mixture: Vec<f64>,
    pub log_sup: Vec<f64>,
    pub log_survivor: f64,
    /// `[i][c]`, column 0 against no change, `j + 1` against stream `j`.
    pub log_ratio: Vec<Vec<f64>>,
}

/// Statistics at time `n` from `columns[i][t - 1]`.
pub fn oracle_frame(columns: &[Vec<f64>], streams: &[OracleStream], prior: OraclePrior, n: usize) -> OracleFrame {
    let mut log_mixture = Vec::new();
    let mut log_sup = Vec::new();
    for (x, s) in columns.iter().zip(streams) {
        let mut mix = 0.0;
        let mut sup = 0.0;
        for k in -1..n as i64 {
            let pi = prior.pmf(k);
            let mut best = f64::NEG_INFINITY;
            for (&theta, &w) in s.grid.iter().zip(&s.weights) {
                if w == 0.0 {
                    continue;
                }
                let lr = likelihood_ratio(x, s.sigma, theta, k, n);
                mix += pi * w * lr;
                best = best.max(lr);
            }
            sup += pi * best;
        }
        log_mixture.push(mix.ln());
        log_sup.push(sup.ln());
    }
    let log_survivor = prior.survivor(n).ln();
    let m = streams.len();
    let log_ratio = (0..m)
        .map(|i| {
            (0..=m)
                .map(|c| match c {
                    0 => log_mixture[i] - log_survivor,
                    c if c == i + 1 => f64::NAN,
                    c => log_mixture[i] - log_sup[c - 1],
                })
                .collect()
        })
        .collect();
    OracleFrame {
        log_mixture,
        log_sup,
        log_survivor,
        log_ratio,
    }
}

/// First `(n, stream)` at which every criterion of some stream holds.
pub fn oracle_verdict(
    columns: &[Vec<f64>],
    streams: &[OracleStream],
    prior: OraclePrior,
    log_a: &[Vec<f64>],
    horizon: usize,
) -> Option<(usize, usize)> {
    let m = streams.len();
    for n in 1..=horizon {
        let f = oracle_frame(columns, streams, prior, n);
        for i in 0..m {
            if (0..=m)
                .filter(|&c| c != i + 1)
                .all(|c| f.log_ratio[i][c] >= log_a[i][c])
            {
                return Some((n, i));
            }
        }
    }
    None
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Random configuration shared by the oracle checks.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub streams: Vec<OracleStream>,
    pub prior: OraclePrior,
    pub columns: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl RandomCase {
    pub fn draw(seed: u64, streams: usize, points: usize, max_horizon: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let range = (0.2, 2.5);
        let streams: Vec<OracleStream> = (0..streams)
            .map(|_| {
                let mut grid: Vec<f64> = (0..points).map(|_| rng.random_range(range.0..range.1)).collect();
                grid.sort_by(f64::total_cmp);
                let mut weights: Vec<f64> = (0..points).map(|_| rng.random_range(0.05..1.0)).collect();
                if rng.random_bool(0.3) {
                    weights[rng.random_range(0..points)] = 0.0;
                }
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                OracleStream {
                    sigma: rng.random_range(0.7..1.5),
                    grid,
                    weights,
                }
            })
            .collect();
        let prior = OraclePrior {
            rho: rng.random_range(0.02..0.3),
            q: if rng.random_bool(0.5) {
                rng.random_range(0.0..0.3)
            } else {
                0.0
            },
        };
        let horizon = rng.random_range(10..=max_horizon);
        let nu = rng.random_range(-1..horizon as i64);
        let changed = rng.random_range(0..streams.len());
        let columns = streams
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let theta = s.grid[points / 2];
                (1..=horizon)
                    .map(|t| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        let mean = if i == changed && t as i64 > nu { theta } else { 0.0 };
                        mean + s.sigma * z
                    })
                    .collect()
            })
            .collect();
        Self {
            streams,
            prior,
            columns,
            horizon,
        }
    }

    pub fn setup(&self) -> Arc<DetectorSetup<f64>> {
        let models: Vec<SharedModel<f64>> = self
            .streams
            .iter()
            .map(|s| {
                let range = ThetaRange::new(0.2, 2.5).unwrap();
                Arc::new(IidGaussian::new(s.sigma, range).unwrap()) as SharedModel<f64>
            })
            .collect();
        let mixing = self
            .streams
            .iter()
            .map(|s| MixingMeasure::new(s.grid.clone(), s.weights.clone()).unwrap())
            .collect();
        let prior = ChangePointPrior::geometric(self.prior.rho, self.prior.q).unwrap();
        Arc::new(DetectorSetup::new(models, mixing, prior).unwrap())
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[t - 1]).collect()
    }
}

/// Engine statistics and verdicts against the oracle on `paths` random
/// short paths. Returns the worst relative log deviation and how many
/// paths raised an alarm.
pub fn check_oracle_equivalence(paths: u64) -> Result<(f64, usize), String> {
    use multidetect::engine::DetectorState;
    use multidetect::rule::{run, ThresholdMatrix};

    let mut worst: f64 = 0.0;
    let mut alarms = 0;
    for seed in 0..paths {
        let case = RandomCase::draw(1000 + seed, 2, 5, 50);
        let setup = case.setup();
        let mut state = DetectorState::new(setup.clone(), None).map_err(|e| e.to_string())?;
        for n in 1..=case.horizon {
            let frame = state.step(&case.row(n)).map_err(|e| e.to_string())?;
            let o = oracle_frame(&case.columns, &case.streams, case.prior, n);
            let pairs = frame
                .log_mixture
                .iter()
                .zip(&o.log_mixture)
                .chain(frame.log_sup.iter().zip(&o.log_sup))
                .chain(std::iter::once((&frame.log_survivor, &o.log_survivor)))
                .chain(
                    frame
                        .log_ratio
                        .iter()
                        .flatten()
                        .zip(o.log_ratio.iter().flatten())
                        .filter(|(a, _)| !a.is_nan()),
                );
            for (&a, &b) in pairs {
                let dev = (a - b).abs() / b.abs().max(1.0);
                worst = worst.max(dev);
                if !close(a, b, 1e-9) {
                    return Err(format!("seed {seed}, n {n}: engine {a} vs oracle {b}"));
                }
            }
        }

        // thresholds drawn around the final statistics so some paths stop
        let mut rng = ChaCha8Rng::seed_from_u64(7 + seed);
        let last = oracle_frame(&case.columns, &case.streams, case.prior, case.horizon);
        let log_a: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                (0..3)
                    .map(|c| {
                        if c == i + 1 {
                            f64::NAN
                        } else {
                            last.log_ratio[i][c].abs().max(0.5) * rng.random_range(0.3..1.2)
                        }
                    })
                    .collect()
            })
            .collect();
        let thresholds = ThresholdMatrix::from_log(log_a.clone()).map_err(|e| e.to_string())?;
        let path =
            multidetect::models::TrialPath::from_rows(&(1..=case.horizon).map(|t| case.row(t)).collect::<Vec<_>>())
                .map_err(|e| e.to_string())?;
        let verdict = run(setup, &thresholds, &path, None).map_err(|e| e.to_string())?;
        let engine = verdict.time().zip(verdict.stream());
        let oracle = oracle_verdict(&case.columns, &case.streams, case.prior, &log_a, case.horizon);
        if engine != oracle {
            return Err(format!("seed {seed}: engine verdict {engine:?} vs oracle {oracle:?}"));
        }
        alarms += engine.is_some() as usize;
    }
    Ok((worst, alarms))
}

/// `1 / (1 + Lbar_10(n))` against the Bayes posterior `P(nu >= n | F_n)`
/// computed from full joint densities, single stream, `n <= horizon`.
pub fn check_posterior_identity(seed: u64, horizon: usize) -> Result<f64, String> {
    use multidetect::engine::DetectorState;

    let mut case = RandomCase::draw(seed, 1, 5, horizon);
    case.prior.q = 0.15;
    let setup = case.setup();
    let s = &case.streams[0];
    let x = &case.columns[0];
    let mut state = DetectorState::new(setup, None).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for n in 1..=case.horizon {
        let frame = state.step(&case.row(n)).map_err(|e| e.to_string())?;
        let from_engine = frame.posterior_no_change(0);

        // joint density of x_1..x_n under each change point, theta mixed out
        let null: f64 = (1..=n).map(|t| density(x[t - 1], 0.0, s.sigma)).product();
        let joint = |k: i64| -> f64 {
            s.grid
                .iter()
                .zip(&s.weights)
                .map(|(&theta, &w)| {
                    w * (1..=n)
                        .map(|t| {
                            let mean = if t as i64 > k { theta } else { 0.0 };
                            density(x[t - 1], mean, s.sigma)
                        })
                        .product::<f64>()
                })
                .sum()
        };
        let before: f64 = (-1..n as i64).map(|k| case.prior.pmf(k) * joint(k)).sum();
        let after = case.prior.survivor(n) * null;
        let direct = after / (before + after);
        let dev = (from_engine - direct).abs();
        worst = worst.max(dev);
        if dev > 1e-10 {
            return Err(format!("n {n}: engine {from_engine} vs Bayes {direct}"));
        }
    }
    Ok(worst)
}
