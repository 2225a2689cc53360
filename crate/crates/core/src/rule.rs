//! The detection-identification rule: stream `i` fires at the first `n`
//! where `log Lbar(i, c) >= log A(i, c)` for every competitor `c`; the rule
//! stops at the earliest firing stream and names it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{Competitor, DetectorSetup, DetectorState, StatisticFrame};
use crate::error::{domain, Error, Result};
use crate::models::TrialPath;
use crate::scalar::Scalar;

/// Thresholds `A(i, c)` stored as logs, laid out like
/// [`StatisticFrame::log_ratio`] (column 0 = no change, column `j + 1` =
/// stream `j`).
///
/// A log threshold of `+inf` makes that criterion unreachable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdRows<T>", into = "ThresholdRows<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ThresholdMatrix<T: Scalar> {
    log: Vec<Vec<T>>,
}

/// Wire form of a [`ThresholdMatrix`]: `log_a[i][c]` with `null` on the
/// diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRows<T> {
    pub log_a: Vec<Vec<Option<T>>>,
}

impl<T: Scalar> From<ThresholdMatrix<T>> for ThresholdRows<T> {
    fn from(m: ThresholdMatrix<T>) -> Self {
        let streams = m.streams();
        let log_a = (0..streams)
            .map(|i| (0..=streams).map(|c| (c != i + 1).then(|| m.log[i][c])).collect())
            .collect();
        Self { log_a }
    }
}

impl<T: Scalar> TryFrom<ThresholdRows<T>> for ThresholdMatrix<T> {
    type Error = Error;

    fn try_from(rows: ThresholdRows<T>) -> Result<Self> {
        let streams = rows.log_a.len();
        let mut log = Vec::with_capacity(streams);
        for (i, row) in rows.log_a.into_iter().enumerate() {
            if row.len() != streams + 1 {
                return Err(Error::Dimension {
                    expected: streams + 1,
                    got: row.len(),
                });
            }
            let mut out = Vec::with_capacity(streams + 1);
            for (c, v) in row.into_iter().enumerate() {
                match (c == i + 1, v) {
                    (true, _) => out.push(T::nan()),
                    (false, Some(v)) => out.push(v),
                    (false, None) => return domain(format!("missing threshold for stream {} competitor {c}", i + 1)),
                }
            }
            log.push(out);
        }
        Self::from_log(log)
    }
}

fn check_unit<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v < T::one() {
        Ok(())
    } else {
        domain(format!("{name} must lie in (0,1), got {v}"))
    }
}

impl<T: Scalar> ThresholdMatrix<T> {
    /// Takes log thresholds with shape `N x (N + 1)`; diagonal entries are
    /// ignored.
    pub fn from_log(mut log: Vec<Vec<T>>) -> Result<Self> {
        let streams = log.len();
        if streams == 0 {
            return domain("threshold matrix needs at least one stream");
        }
        for (i, row) in log.iter_mut().enumerate() {
            if row.len() != streams + 1 {
                return Err(Error::Dimension {
                    expected: streams + 1,
                    got: row.len(),
                });
            }
            for (c, v) in row.iter_mut().enumerate() {
                if c == i + 1 {
                    *v = T::nan();
                } else if v.is_nan() || *v == T::neg_infinity() {
                    return domain(format!(
                        "threshold for stream {} competitor {c} must be positive",
                        i + 1
                    ));
                }
            }
        }
        Ok(Self { log })
    }

    /// Same log threshold `log_a0` against no change and `log_a1` against
    /// every other stream.
    pub fn uniform(streams: usize, log_a0: T, log_a1: T) -> Result<Self> {
        let log = (0..streams)
            .map(|_| {
                let mut row = vec![log_a1; streams + 1];
                row[0] = log_a0;
                row
            })
            .collect();
        Self::from_log(log)
    }

    /// `A(i, 0) = (1 - alpha_i) / alpha_i`,
    /// `A(i, j) = 1 / ((1 - alpha_j) beta[j][i])`,
    /// where `beta[i][j]` bounds the probability of deciding `j` when the
    /// change is in `i`. Requires `max alpha < 1 - q`.
    pub fn calibrate(alpha: &[T], beta: &[Vec<T>], head_mass: T) -> Result<Self> {
        let streams = alpha.len();
        if streams == 0 {
            return domain("need at least one PFA target");
        }
        if beta.len() != streams || beta.iter().any(|r| r.len() != streams) {
            return domain(format!("PMI targets must form a {streams}x{streams} matrix"));
        }
        for (i, &a) in alpha.iter().enumerate() {
            check_unit(&format!("alpha[{}]", i + 1), a)?;
        }
        for i in 0..streams {
            for j in 0..streams {
                if i != j {
                    check_unit(&format!("beta[{}][{}]", i + 1, j + 1), beta[i][j])?;
                }
            }
        }
        let alpha_max = alpha.iter().copied().fold(T::zero(), T::max);
        if alpha_max >= T::one() - head_mass {
            return domain(format!(
                "max alpha = {alpha_max} must be below 1 - P(nu = -1) = {} for the PFA/PMI guarantees to hold",
                T::one() - head_mass
            ));
        }
        let log = (0..streams)
            .map(|i| {
                let mut row = vec![T::nan(); streams + 1];
                row[0] = ((T::one() - alpha[i]) / alpha[i]).ln();
                for j in (0..streams).filter(|&j| j != i) {
                    row[j + 1] = -((T::one() - alpha[j]) * beta[j][i]).ln();
                }
                row
            })
            .collect();
        Self::from_log(log)
    }

    /// Symmetric thresholds for a total PFA target `alpha` and per-stream
    /// misidentification targets `beta_bar`:
    /// `A_0 = (N / alpha)(1 - alpha / N)`,
    /// `A_j = (N - 1) / ((1 - alpha / N) beta_bar_j)`.
    pub fn calibrate_star(alpha: T, beta_bar: &[T], head_mass: T) -> Result<Self> {
        let streams = beta_bar.len();
        if streams == 0 {
            return domain("need one misidentification target per stream");
        }
        check_unit("alpha", alpha)?;
        if streams > 1 {
            for (j, &b) in beta_bar.iter().enumerate() {
                check_unit(&format!("beta_bar[{}]", j + 1), b)?;
            }
        }
        let n = T::of_usize(streams);
        if alpha / n >= T::one() - head_mass {
            return domain(format!(
                "alpha / N = {} must be below 1 - P(nu = -1) = {} for the PFA/PMI guarantees to hold",
                alpha / n,
                T::one() - head_mass
            ));
        }
        let keep = T::one() - alpha / n;
        let log_a0 = (n / alpha * keep).ln();
        let log = (0..streams)
            .map(|i| {
                let mut row = vec![T::nan(); streams + 1];
                row[0] = log_a0;
                for j in (0..streams).filter(|&j| j != i) {
                    row[j + 1] = ((n - T::one()) / (keep * beta_bar[j])).ln();
                }
                row
            })
            .collect();
        Self::from_log(log)
    }

    pub fn streams(&self) -> usize {
        self.log.len()
    }

    /// `log A(i, c)`.
    pub fn log(&self, i: usize, c: Competitor) -> T {
        self.log[i][c.column()]
    }

    /// `A(i, c)`.
    pub fn value(&self, i: usize, c: Competitor) -> T {
        self.log(i, c).exp()
    }

    pub fn log_rows(&self) -> &[Vec<T>] {
        &self.log
    }

    /// Multiplies every log threshold by `factor`.
    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::from_log(
            self.log
                .iter()
                .map(|r| r.iter().map(|&v| v * factor).collect())
                .collect(),
        )
    }

    /// Returns a copy with one entry replaced.
    pub fn with_log(&self, i: usize, c: Competitor, log_a: T) -> Result<Self> {
        let mut log = self.log.clone();
        log[i][c.column()] = log_a;
        Self::from_log(log)
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    /// Alarm at `time` naming `stream` (0-based).
    Alarm { time: usize, stream: usize },
    /// No alarm up to and including `horizon`.
    Censored { horizon: usize },
}

/// Result of running the rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict<T> {
    pub outcome: Outcome,
    /// Streams whose full criterion held at the stopping time (0-based).
    pub met: Vec<usize>,
    /// Frame at the stopping time, or at the horizon when censored.
    pub frame: StatisticFrame<T>,
}

impl<T: Scalar> Verdict<T> {
    pub fn stopped(&self) -> bool {
        matches!(self.outcome, Outcome::Alarm { .. })
    }

    pub fn time(&self) -> Option<usize> {
        match self.outcome {
            Outcome::Alarm { time, .. } => Some(time),
            Outcome::Censored { .. } => None,
        }
    }

    pub fn stream(&self) -> Option<usize> {
        match self.outcome {
            Outcome::Alarm { stream, .. } => Some(stream),
            Outcome::Censored { .. } => None,
        }
    }

    /// Flat, serializable summary with 1-based stream labels.
    pub fn summary(&self) -> VerdictSummary<T> {
        let streams = self.frame.streams();
        VerdictSummary {
            stopped: self.stopped(),
            t: self.time(),
            d: self.stream().map(|s| s + 1),
            censored_at: match self.outcome {
                Outcome::Censored { horizon } => Some(horizon),
                Outcome::Alarm { .. } => None,
            },
            simultaneous: self.met.iter().map(|s| s + 1).collect(),
            log_statistics_at_t: LogStatistics {
                n: self.frame.n,
                log_mixture: self.frame.log_mixture.clone(),
                log_sup: self.frame.log_sup.clone(),
                log_survivor: self.frame.log_survivor,
                log_lambda_bar: (0..streams)
                    .map(|i| {
                        (0..=streams)
                            .map(|c| (c != i + 1).then(|| self.frame.log_ratio[i][c]))
                            .collect()
                    })
                    .collect(),
            },
        }
    }
}

/// JSON shape of a verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictSummary<T> {
    pub stopped: bool,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    pub d: Option<usize>,
    pub censored_at: Option<usize>,
    pub simultaneous: Vec<usize>,
    #[serde(rename = "log_statistics_at_T")]
    pub log_statistics_at_t: LogStatistics<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogStatistics<T> {
    pub n: usize,
    pub log_mixture: Vec<T>,
    pub log_sup: Vec<T>,
    pub log_survivor: T,
    /// `[i][c]`, column 0 = no change, column `j` = stream `j` (1-based),
    /// `null` on the diagonal.
    pub log_lambda_bar: Vec<Vec<Option<T>>>,
}

/// Streams (0-based, ascending) whose every criterion holds in `frame`.
pub fn streams_meeting<T: Scalar>(frame: &StatisticFrame<T>, thresholds: &ThresholdMatrix<T>) -> Vec<usize> {
    let streams = frame.streams();
    (0..streams)
        .filter(|&i| Competitor::of(i, streams).all(|c| frame.ratio(i, c) >= thresholds.log(i, c)))
        .collect()
}

/// Stopping check at one time step. `None` means continue; ties go to the
/// smallest stream index.
pub fn check_stop<T: Scalar>(frame: &StatisticFrame<T>, thresholds: &ThresholdMatrix<T>) -> Option<Verdict<T>> {
    let met = streams_meeting(frame, thresholds);
    let &stream = met.first()?;
    Some(Verdict {
        outcome: Outcome::Alarm { time: frame.n, stream },
        met,
        frame: frame.clone(),
    })
}

/// Online detector: recursive statistics plus the stopping rule.
#[derive(Debug, Clone)]
pub struct Detector<T: Scalar> {
    state: DetectorState<T>,
    thresholds: ThresholdMatrix<T>,
}

impl<T: Scalar> Detector<T> {
    pub fn new(setup: Arc<DetectorSetup<T>>, thresholds: ThresholdMatrix<T>, window: Option<usize>) -> Result<Self> {
        if thresholds.streams() != setup.streams() {
            return Err(Error::Dimension {
                expected: setup.streams(),
                got: thresholds.streams(),
            });
        }
        Ok(Self {
            state: DetectorState::new(setup, window)?,
            thresholds,
        })
    }

    pub fn state(&self) -> &DetectorState<T> {
        &self.state
    }

    pub fn thresholds(&self) -> &ThresholdMatrix<T> {
        &self.thresholds
    }

    /// Feeds one observation vector; returns the verdict at the first alarm.
    pub fn observe(&mut self, observation: &[T]) -> Result<Option<Verdict<T>>> {
        let frame = self.state.step(observation)?;
        Ok(check_stop(frame, &self.thresholds))
    }

    /// Censored verdict at the current time.
    pub fn censor(&self) -> Verdict<T> {
        Verdict {
            outcome: Outcome::Censored {
                horizon: self.state.time(),
            },
            met: Vec::new(),
            frame: self.state.frame().clone(),
        }
    }
}

/// Runs the rule over a whole path.
pub fn run<T: Scalar>(
    setup: Arc<DetectorSetup<T>>,
    thresholds: &ThresholdMatrix<T>,
    path: &TrialPath<T>,
    window: Option<usize>,
) -> Result<Verdict<T>> {
    if path.streams != setup.streams() {
        return Err(Error::Dimension {
            expected: setup.streams(),
            got: path.streams,
        });
    }
    let mut detector = Detector::new(setup, thresholds.clone(), window)?;
    for t in 1..=path.horizon {
        if let Some(v) = detector.observe(path.at(t))? {
            return Ok(v);
        }
    }
    Ok(detector.censor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::MixingMeasure;
    use crate::models::{simulate, IidGaussian, SharedModel, ThetaRange};
    use crate::prior::ChangePointPrior;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> Arc<DetectorSetup<f64>> {
        let range = ThetaRange::new(0.25, 2.0).unwrap();
        let models: Vec<SharedModel<f64>> = (0..2)
            .map(|_| Arc::new(IidGaussian::new(1.0, range).unwrap()) as SharedModel<f64>)
            .collect();
        let w = MixingMeasure::uniform(range, 5, crate::engine::Spacing::Log).unwrap();
        Arc::new(
            DetectorSetup::new(
                models,
                vec![w.clone(), w],
                ChangePointPrior::geometric(0.05, 0.0).unwrap(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn calibrate_values() {
        let a = ThresholdMatrix::<f64>::calibrate(&[0.1, 0.5], &[vec![0.0, 0.2], vec![0.1, 0.0]], 0.0).unwrap();
        assert!((a.value(0, Competitor::NoChange) - 9.0).abs() < 1e-12);
        // A(1,2) uses alpha_2 = 0.5 and beta_21 = 0.1
        assert!((a.value(0, Competitor::Stream(1)) - 20.0).abs() < 1e-12);
        let b = ThresholdMatrix::<f64>::calibrate(&[0.1, 0.1], &[vec![0.0, 0.1], vec![0.1, 0.0]], 0.0).unwrap();
        assert!((b.value(0, Competitor::Stream(1)) - 1.0 / (0.9 * 0.1)).abs() < 1e-12);
        assert!(b.log(0, Competitor::Stream(0)).is_nan());
    }

    #[test]
    fn calibrate_is_monotone_in_alpha() {
        let mut last = f64::INFINITY;
        for k in 1..50 {
            let alpha = k as f64 / 100.0;
            let a = ThresholdMatrix::calibrate(&[alpha, alpha], &[vec![0.0, 0.1], vec![0.1, 0.0]], 0.0).unwrap();
            let v = a.value(0, Competitor::NoChange);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn calibrate_rejects_bad_targets() {
        let beta = vec![vec![0.0, 0.1], vec![0.1, 0.0]];
        assert!(ThresholdMatrix::calibrate(&[0.0, 0.1], &beta, 0.0).is_err());
        assert!(ThresholdMatrix::calibrate(&[1.0, 0.1], &beta, 0.0).is_err());
        assert!(ThresholdMatrix::calibrate(&[0.1, 0.1], &[vec![0.0, 1.5], vec![0.1, 0.0]], 0.0).is_err());
        let err = ThresholdMatrix::calibrate(&[0.3, 0.1], &beta, 0.75).unwrap_err();
        assert!(err.to_string().contains("1 - P(nu = -1)"));
    }

    #[test]
    fn calibrate_star_values() {
        let a = ThresholdMatrix::<f64>::calibrate_star(0.1, &[0.05, 0.05], 0.0).unwrap();
        assert!((a.value(0, Competitor::NoChange) - 19.0).abs() < 1e-12);
        assert!((a.value(0, Competitor::Stream(1)) - 1.0 / (0.95 * 0.05)).abs() < 1e-12);
        assert!((a.value(0, Competitor::Stream(1)) - 21.052_631_578_947).abs() < 1e-9);
        let single = ThresholdMatrix::<f64>::calibrate_star(0.1, &[0.5], 0.0).unwrap();
        assert!((single.value(0, Competitor::NoChange) - 9.0).abs() < 1e-12);
        assert_eq!(Competitor::of(0, 1).count(), 1);
    }

    #[test]
    fn check_stop_semantics() {
        let s = setup();
        let mut st = DetectorState::new(s, None).unwrap();
        let f = st.step(&[-3.0, -3.0]).unwrap().clone();
        let a = ThresholdMatrix::uniform(2, 2.0, 2.0).unwrap();
        assert!(check_stop(&f, &a).is_none());
        // stream 1 (0-based 0) passes, stream 2 does not
        let mut log = vec![vec![f64::NAN; 3]; 2];
        log[0][0] = f.ratio(0, Competitor::NoChange) - 1.0;
        log[0][2] = f.ratio(0, Competitor::Stream(1)) - 1.0;
        log[1][0] = f.ratio(1, Competitor::NoChange) + 1.0;
        log[1][1] = f.ratio(1, Competitor::Stream(0)) - 1.0;
        let a = ThresholdMatrix::from_log(log).unwrap();
        let v = check_stop(&f, &a).unwrap();
        assert_eq!(v.outcome, Outcome::Alarm { time: 1, stream: 0 });
        assert_eq!(v.met, vec![0]);
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let s = setup();
        let mut st = DetectorState::new(s, None).unwrap();
        let f = st.step(&[0.4, 0.4]).unwrap().clone();
        let a = ThresholdMatrix::uniform(2, -50.0, -50.0).unwrap();
        let v = check_stop(&f, &a).unwrap();
        assert_eq!(v.met, vec![0, 1]);
        assert_eq!(v.stream(), Some(0));
    }

    #[test]
    fn run_censors_and_stops() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let path = simulate(s.models(), Some((1, 10, 1.5)), 200, &mut rng).unwrap();
        let never = ThresholdMatrix::uniform(2, f64::INFINITY, f64::INFINITY).unwrap();
        let v = run(s.clone(), &never, &path, None).unwrap();
        assert_eq!(v.outcome, Outcome::Censored { horizon: 200 });
        assert!(!v.stopped());
        let always = ThresholdMatrix::uniform(2, -1e6, -1e6).unwrap();
        assert_eq!(run(s.clone(), &always, &path, None).unwrap().time(), Some(1));
        let a = ThresholdMatrix::calibrate(&[0.01, 0.01], &[vec![0.0, 0.01], vec![0.01, 0.0]], 0.0).unwrap();
        let v1 = run(s.clone(), &a, &path, None).unwrap();
        let v2 = run(s, &a, &path, None).unwrap();
        assert_eq!(v1.outcome, v2.outcome);
        assert_eq!(v1.frame.log_mixture, v2.frame.log_mixture);
        assert_eq!(v1.stream(), Some(1));
    }

    #[test]
    fn raising_a_threshold_never_stops_earlier() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let base = ThresholdMatrix::calibrate(&[0.05, 0.05], &[vec![0.0, 0.05], vec![0.05, 0.0]], 0.0).unwrap();
        for trial in 0..30 {
            let path = simulate(s.models(), Some((trial % 2, 5 + trial as i64, 0.8)), 400, &mut rng).unwrap();
            let t0 = run(s.clone(), &base, &path, None).unwrap().time().unwrap_or(usize::MAX);
            for i in 0..2 {
                for c in Competitor::of(i, 2) {
                    let raised = base.with_log(i, c, base.log(i, c) + 1.5).unwrap();
                    let t1 = run(s.clone(), &raised, &path, None)
                        .unwrap()
                        .time()
                        .unwrap_or(usize::MAX);
                    assert!(t1 >= t0, "trial {trial}: {t1} < {t0}");
                }
            }
        }
    }

    #[test]
    fn threshold_rows_round_trip() {
        let a = ThresholdMatrix::calibrate(&[0.05, 0.02, 0.1], &vec![vec![0.03; 3]; 3], 0.0).unwrap();
        let rows: ThresholdRows<f64> = a.clone().into();
        assert!(rows.log_a[1][2].is_none());
        let back = ThresholdMatrix::try_from(rows).unwrap();
        for i in 0..3 {
            for c in Competitor::of(i, 3) {
                assert_eq!(a.log(i, c), back.log(i, c));
            }
        }
        let text = serde_json::to_string(&a).unwrap();
        let parsed: ThresholdMatrix<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.log_rows()[0][0], a.log_rows()[0][0]);
    }
}
