//! Monte Carlo estimates of the rule's operating characteristics.
//!
//! Every trial owns a generator seeded with `seed ^ trial` on a stream
//! chosen by the estimator, so results do not depend on the thread count.

mod diagnostics;
pub mod stats;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{lr_expectation, validate_conditions, ConditionDiagnostic, DiagnosticKind, DIAGNOSTIC_TOLERANCE};

use crate::engine::{Competitor, DetectorSetup};
use crate::error::{domain, Error, Result};
use crate::models::simulate;
use crate::rule::{Detector, Outcome, ThresholdMatrix, ThresholdRows};
use crate::theory::{pfa_bound, pmi_bound, psi_threshold, Infimum, InfoProfile, PfaBound, PmiBound};
use stats::{KahanSum, MeanEstimate, Proportion};

fn default_moments() -> Vec<u32> {
    vec![1, 2]
}
fn default_confidence() -> f64 {
    0.95
}
fn default_censor_budget() -> f64 {
    0.01
}
fn default_survivor_floor() -> f64 {
    1e-12
}

/// Monte Carlo configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Trials per estimator cell.
    pub trials: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default)]
    pub window: Option<usize>,
    /// Worker cap; `None` uses rayon's default.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    /// Post-change parameter values to evaluate.
    pub thetas: Vec<f64>,
    /// Change points for the conditional delay moments.
    #[serde(default)]
    pub fixed_nu: Vec<i64>,
    #[serde(default = "default_moments")]
    pub moments: Vec<u32>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Largest tolerated fraction of censored change-present trials.
    #[serde(default = "default_censor_budget")]
    pub censor_budget: f64,
    /// False-alarm trials end once `P(nu >= n + 1)` drops below this; the
    /// remaining contribution is bounded by the censored term.
    #[serde(default = "default_survivor_floor")]
    pub survivor_floor: f64,
    /// Overrides the prior's tail exponent in the theory columns.
    #[serde(default)]
    pub mu: Option<f64>,
}

impl ExperimentPlan {
    pub fn new(trials: usize, horizon: usize, seed: u64, thetas: Vec<f64>) -> Self {
        Self {
            trials,
            horizon,
            seed,
            window: None,
            threads: None,
            thetas,
            fixed_nu: Vec::new(),
            moments: default_moments(),
            confidence: default_confidence(),
            censor_budget: default_censor_budget(),
            survivor_floor: default_survivor_floor(),
            mu: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.window == Some(0) {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.moments.contains(&0) {
            return Err(Error::Config("moment orders must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("confidence must lie in (0,1)".into()));
        }
        if !(0.0..=1.0).contains(&self.censor_budget) {
            return Err(Error::Config("censor budget must lie in [0,1]".into()));
        }
        if !(self.survivor_floor >= 0.0) {
            return Err(Error::Config("survivor floor must be nonnegative".into()));
        }
        if self.fixed_nu.iter().any(|&k| k < -1) {
            return Err(Error::Config("fixed change points must be >= -1".into()));
        }
        Ok(())
    }
}

/// Runs `f(trial)` for every trial on at most `threads` workers and returns
/// the results in trial order.
pub fn run_trials<R, F>(threads: Option<usize>, trials: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..trials).into_par_iter().map(f).collect())
}

/// Generator for one trial: seeded with `master ^ trial`, on stream `tag`.
pub fn trial_rng(master: u64, tag: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ trial as u64);
    rng.set_stream(tag);
    rng
}

/// Estimator-specific stream tags.
#[derive(Debug, Clone, Copy)]
pub enum Tag {
    FalseAlarm,
    FalseAlarmNaive,
    Change {
        stream: usize,
        theta: f64,
        nu: Option<i64>,
    },
    Diagnostic {
        stream: usize,
        theta: f64,
        pre_change: bool,
    },
    Martingale,
}

impl Tag {
    pub fn value(self) -> u64 {
        fn mix(mut z: u64) -> u64 {
            z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        }
        match self {
            Tag::FalseAlarm => 1,
            Tag::FalseAlarmNaive => 2,
            Tag::Martingale => 3,
            Tag::Change { stream, theta, nu } => {
                let k = nu.map_or(0, |k| (k + 2) as u64);
                mix(mix(mix(4 ^ stream as u64) ^ theta.to_bits()) ^ k)
            }
            Tag::Diagnostic {
                stream,
                theta,
                pre_change,
            } => mix(mix(mix(5 ^ stream as u64) ^ theta.to_bits()) ^ pre_change as u64),
        }
    }
}

/// What one trial produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    /// Change point, when a change was simulated.
    pub nu: Option<i64>,
    pub outcome: Outcome,
}

impl TrialOutcome {
    fn alarm(&self) -> Option<(usize, usize)> {
        match self.outcome {
            Outcome::Alarm { time, stream } => Some((time, stream)),
            Outcome::Censored { .. } => None,
        }
    }

    /// Whether the run is known to have stopped after the change.
    fn after_change(&self) -> bool {
        let nu = self.nu.unwrap_or(i64::MAX);
        match self.outcome {
            Outcome::Alarm { time, .. } => time as i64 > nu,
            Outcome::Censored { horizon } => (horizon as i64) > nu,
        }
    }
}

/// Quotient with both operands kept for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratio {
    pub numerator: f64,
    pub denominator: f64,
    pub value: f64,
}

impl Ratio {
    pub fn new(numerator: f64, denominator: f64) -> Self {
        Self {
            numerator,
            denominator,
            value: numerator / denominator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfaEstimate {
    pub trials: usize,
    /// Last time step simulated.
    pub effective_horizon: usize,
    /// Mean of `P(nu >= T) 1{d = i}`; the interval's upper end is one-sided.
    pub per_stream: Vec<MeanEstimate>,
    pub total: MeanEstimate,
    pub alarms: Vec<u64>,
    pub censored: u64,
    /// `P(nu >= effective_horizon + 1)` times the censored fraction: the
    /// most the censored trials could add.
    pub censored_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaivePfa {
    pub trials: usize,
    /// `sum_k pi_k P_inf(T <= k, d = i)` from the empirical distribution of
    /// `(T, d)`, `k` up to the horizon.
    pub double_sum: Vec<f64>,
    /// Per-trial `sum_{T <= k <= horizon} pi_k`, for the interval.
    pub per_stream: Vec<MeanEstimate>,
}

/// Delay moment and its first-order prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayMoment {
    pub r: u32,
    pub estimate: MeanEstimate,
    /// `Psi^r` using the analytic infimum over the competitor parameter.
    pub psi_r: f64,
    /// `Psi^r` using the minimum over the competitor's mixing grid.
    pub psi_r_grid: f64,
    /// Estimate over `psi_r`.
    pub ratio: Ratio,
}

/// Change-present runs for one `(stream, theta)`, change point from the
/// prior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeSummary {
    /// 1-based.
    pub stream: usize,
    pub theta: f64,
    pub trials: usize,
    /// Trials with `T > nu`, censored ones included.
    pub conditioned: u64,
    /// Censored trials among those with the change inside the horizon.
    pub censored: u64,
    /// Trials whose change point fell beyond the horizon.
    pub late_change: u64,
    /// Indexed by the decided stream (0-based); `None` for the true stream.
    pub pmi: Vec<Option<Proportion>>,
    pub correct: Proportion,
    pub delay: Vec<DelayMoment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalDelay {
    pub stream: usize,
    pub theta: f64,
    pub k: i64,
    pub trials: usize,
    pub censored: u64,
    pub moments: Vec<DelayMoment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryColumns {
    pub mu: f64,
    pub pfa_bound: PfaBound<f64>,
    pub pmi_bound: PmiBound<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub estimate: f64,
    pub ci_upper: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensorSummary {
    pub change_trials: u64,
    pub censored: u64,
    pub fraction: f64,
    pub budget: f64,
    pub exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub streams: usize,
    pub plan: ExperimentPlan,
    pub thresholds: ThresholdRows<f64>,
    pub theory: TheoryColumns,
    pub pfa: PfaEstimate,
    pub change: Vec<ChangeSummary>,
    pub conditional: Vec<ConditionalDelay>,
    pub checks: Vec<BoundCheck>,
    pub censor: CensorSummary,
}

/// One flat row per estimator cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub estimator: &'static str,
    pub stream: usize,
    pub j: Option<usize>,
    pub theta: Option<f64>,
    pub k: Option<i64>,
    pub r: Option<u32>,
    pub estimate: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: f64,
    pub theory: Option<f64>,
    pub ratio: Option<f64>,
    pub count: u64,
}

impl RiskReport {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for (i, e) in self.pfa.per_stream.iter().enumerate() {
            rows.push(ReportRow {
                estimator: "pfa",
                stream: i + 1,
                j: None,
                theta: None,
                k: None,
                r: None,
                estimate: e.mean,
                ci_lower: None,
                ci_upper: e.ci_upper,
                theory: Some(self.theory.pfa_bound.per_stream[i]),
                ratio: None,
                count: e.count,
            });
        }
        for c in &self.change {
            let i = c.stream - 1;
            for (j, p) in c.pmi.iter().enumerate() {
                if let Some(p) = p {
                    rows.push(ReportRow {
                        estimator: "pmi",
                        stream: c.stream,
                        j: Some(j + 1),
                        theta: Some(c.theta),
                        k: None,
                        r: None,
                        estimate: p.estimate,
                        ci_lower: None,
                        ci_upper: p.ci_upper,
                        theory: Some(self.theory.pmi_bound.pairwise[i][j]),
                        ratio: None,
                        count: p.trials,
                    });
                }
            }
            for d in &c.delay {
                rows.push(delay_row("delay_integrated", c.stream, c.theta, None, d));
            }
        }
        for c in &self.conditional {
            for d in &c.moments {
                rows.push(delay_row("delay_conditional", c.stream, c.theta, Some(c.k), d));
            }
        }
        rows
    }
}

fn delay_row(estimator: &'static str, stream: usize, theta: f64, k: Option<i64>, d: &DelayMoment) -> ReportRow {
    ReportRow {
        estimator,
        stream,
        j: None,
        theta: Some(theta),
        k,
        r: Some(d.r),
        estimate: d.estimate.mean,
        ci_lower: Some(d.estimate.ci_lower),
        ci_upper: d.estimate.ci_upper,
        theory: Some(d.psi_r),
        ratio: Some(d.ratio.value),
        count: d.estimate.count,
    }
}

/// A detector configuration plus a Monte Carlo plan.
#[derive(Debug, Clone)]
pub struct Experiment {
    setup: Arc<DetectorSetup<f64>>,
    thresholds: ThresholdMatrix<f64>,
    plan: ExperimentPlan,
}

impl Experiment {
    pub fn new(setup: Arc<DetectorSetup<f64>>, thresholds: ThresholdMatrix<f64>, plan: ExperimentPlan) -> Result<Self> {
        plan.check()?;
        if thresholds.streams() != setup.streams() {
            return Err(Error::Dimension {
                expected: setup.streams(),
                got: thresholds.streams(),
            });
        }
        for &theta in &plan.thetas {
            for m in setup.models() {
                m.theta_range().check(theta)?;
            }
        }
        Ok(Self {
            setup,
            thresholds,
            plan,
        })
    }

    pub fn setup(&self) -> &Arc<DetectorSetup<f64>> {
        &self.setup
    }

    pub fn plan(&self) -> &ExperimentPlan {
        &self.plan
    }

    pub fn thresholds(&self) -> &ThresholdMatrix<f64> {
        &self.thresholds
    }

    /// Same setup and plan, other thresholds.
    pub fn with_thresholds(&self, thresholds: ThresholdMatrix<f64>) -> Result<Self> {
        Self::new(self.setup.clone(), thresholds, self.plan.clone())
    }

    pub fn mu(&self) -> f64 {
        self.plan.mu.unwrap_or_else(|| self.setup.prior().tail_exponent().value)
    }

    fn z_one_sided(&self) -> f64 {
        stats::normal_quantile(self.plan.confidence)
    }

    fn z_two_sided(&self) -> f64 {
        stats::normal_quantile(0.5 + self.plan.confidence / 2.0)
    }

    /// Runs the rule on one freshly simulated path.
    pub fn run_trial(
        &self,
        change: Option<(usize, i64, f64)>,
        horizon: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrialOutcome> {
        let path = simulate(self.setup.models(), change, horizon, rng)?;
        let mut detector = Detector::new(self.setup.clone(), self.thresholds.clone(), self.plan.window)?;
        for t in 1..=horizon {
            if let Some(v) = detector.observe(path.at(t))? {
                return Ok(TrialOutcome {
                    nu: change.map(|c| c.1),
                    outcome: v.outcome,
                });
            }
        }
        Ok(TrialOutcome {
            nu: change.map(|c| c.1),
            outcome: Outcome::Censored { horizon },
        })
    }

    /// Horizon for false-alarm runs after applying the survivor floor.
    pub fn pfa_horizon(&self) -> usize {
        let prior = self.setup.prior();
        let floor = self.plan.survivor_floor;
        if floor <= 0.0 {
            return self.plan.horizon;
        }
        (1..=self.plan.horizon)
            .find(|&n| prior.survivor(n + 1) <= floor)
            .unwrap_or(self.plan.horizon)
    }

    fn null_runs(&self, tag: Tag) -> Result<(usize, Vec<TrialOutcome>)> {
        let horizon = self.pfa_horizon();
        let seed = self.plan.seed;
        let runs = run_trials(self.plan.threads, self.plan.trials, |t| {
            let mut rng = trial_rng(seed, tag.value(), t);
            self.run_trial(None, horizon, &mut rng)
        })?;
        Ok((horizon, runs))
    }

    /// Survivor-weighted false-alarm probabilities under no change.
    pub fn estimate_pfa(&self) -> Result<PfaEstimate> {
        let (horizon, runs) = self.null_runs(Tag::FalseAlarm)?;
        let prior = self.setup.prior();
        let n = self.setup.streams();
        let mut values = vec![Vec::new(); n];
        let mut totals = Vec::with_capacity(runs.len());
        let mut alarms = vec![0u64; n];
        let mut censored = 0u64;
        for r in &runs {
            match r.alarm() {
                Some((time, d)) => {
                    let s = prior.survivor(time);
                    values[d].push(s);
                    totals.push(s);
                    alarms[d] += 1;
                }
                None => censored += 1,
            }
        }
        let z = self.z_one_sided();
        let trials = runs.len();
        Ok(PfaEstimate {
            trials,
            effective_horizon: horizon,
            per_stream: values
                .iter()
                .map(|v| MeanEstimate::padded(v, trials, z).nonnegative())
                .collect(),
            total: MeanEstimate::padded(&totals, trials, z).nonnegative(),
            alarms,
            censored,
            censored_bias: prior.survivor(horizon + 1) * censored as f64 / trials as f64,
        })
    }

    /// The false-alarm probability from its defining double sum, on an
    /// independent set of trials.
    pub fn estimate_pfa_naive(&self) -> Result<NaivePfa> {
        let (horizon, runs) = self.null_runs(Tag::FalseAlarmNaive)?;
        let prior = self.setup.prior();
        let n = self.setup.streams();
        let trials = runs.len();
        // counts[i][t] = #{T = t, d = i}
        let mut counts = vec![vec![0u64; horizon + 1]; n];
        for r in &runs {
            if let Some((time, d)) = r.alarm() {
                counts[d][time] += 1;
            }
        }
        let pmf: Vec<f64> = (0..=horizon).map(|k| prior.pmf(k as i64).expect("k >= 0")).collect();
        let double_sum = counts
            .iter()
            .map(|c| {
                let mut cdf = 0u64;
                let mut s = KahanSum::new();
                for k in 0..=horizon {
                    cdf += c[k];
                    s.add(pmf[k] * cdf as f64 / trials as f64);
                }
                s.value()
            })
            .collect();
        let z = self.z_one_sided();
        let per_stream = (0..n)
            .map(|i| {
                let v: Vec<f64> = runs
                    .iter()
                    .filter_map(|r| r.alarm())
                    .filter(|&(_, d)| d == i)
                    .map(|(time, _)| pmf[time..].iter().copied().collect::<KahanSum>().value())
                    .collect();
                MeanEstimate::padded(&v, trials, z)
            })
            .collect();
        Ok(NaivePfa {
            trials,
            double_sum,
            per_stream,
        })
    }

    /// Runs with the change in `stream` at parameter `theta`; `nu = None`
    /// draws the change point from the prior.
    pub fn change_runs(&self, stream: usize, theta: f64, nu: Option<i64>) -> Result<Vec<TrialOutcome>> {
        if stream >= self.setup.streams() {
            return domain(format!("stream index {stream} out of range"));
        }
        let tag = Tag::Change { stream, theta, nu }.value();
        let seed = self.plan.seed;
        let horizon = self.plan.horizon;
        run_trials(self.plan.threads, self.plan.trials, |t| {
            let mut rng = trial_rng(seed, tag, t);
            let k = match nu {
                Some(k) => k,
                None => self.setup.prior().sample(&mut rng),
            };
            self.run_trial(Some((stream, k, theta)), horizon, &mut rng)
        })
    }

    /// `P(d = j | T > nu)` for every `j`, from prior-drawn change points.
    pub fn pmi_from_runs(&self, stream: usize, runs: &[TrialOutcome]) -> Result<Vec<Option<Proportion>>> {
        let conditioned = runs.iter().filter(|r| r.after_change()).count() as u64;
        if conditioned == 0 {
            return domain("no trial stopped after the change; PMI undefined");
        }
        let mut wrong = vec![0u64; self.setup.streams()];
        for r in runs.iter().filter(|r| r.after_change()) {
            if let Some((_, d)) = r.alarm() {
                wrong[d] += 1;
            }
        }
        Ok(wrong
            .iter()
            .enumerate()
            .map(|(j, &w)| (j != stream).then(|| Proportion::new(w, conditioned, self.plan.confidence)))
            .collect())
    }

    pub fn estimate_pmi(&self, stream: usize, theta: f64) -> Result<Vec<Option<Proportion>>> {
        let runs = self.change_runs(stream, theta, None)?;
        self.pmi_from_runs(stream, &runs)
    }

    /// `E[(T - nu)^r; d = i | T > nu]` over uncensored runs, with `T - nu`
    /// read as `T` when `nu = -1`.
    pub fn delay_from_runs(&self, stream: usize, theta: f64, runs: &[TrialOutcome], r: u32) -> Result<DelayMoment> {
        if r == 0 {
            return domain("moment order must be >= 1");
        }
        let mut values = Vec::new();
        let mut denominator = 0usize;
        for run in runs {
            let Some((time, d)) = run.alarm() else { continue };
            let nu = run.nu.unwrap_or(-1);
            if time as i64 <= nu {
                continue;
            }
            denominator += 1;
            if d == stream {
                let delay = if nu == -1 {
                    time as f64
                } else {
                    (time as i64 - nu) as f64
                };
                values.push(delay.powi(r as i32));
            }
        }
        if denominator == 0 {
            return domain("no uncensored trial stopped after the change; delay undefined");
        }
        let estimate = MeanEstimate::padded(&values, denominator, self.z_two_sided());
        let profile = InfoProfile::new(self.setup.models(), self.setup.mixing(), stream, theta)?;
        let psi = |which| psi_threshold(&self.thresholds, &profile, self.mu(), which).powi(r as i32);
        let psi_r = psi(Infimum::Analytic);
        Ok(DelayMoment {
            r,
            estimate,
            psi_r,
            psi_r_grid: psi(Infimum::Grid),
            ratio: Ratio::new(estimate.mean, psi_r),
        })
    }

    /// Integrated (`k = None`) or conditional delay moment.
    pub fn estimate_delay(&self, stream: usize, theta: f64, k: Option<i64>, r: u32) -> Result<DelayMoment> {
        let runs = self.change_runs(stream, theta, k)?;
        self.delay_from_runs(stream, theta, &runs, r)
    }

    fn summarize_change(&self, stream: usize, theta: f64) -> Result<ChangeSummary> {
        let runs = self.change_runs(stream, theta, None)?;
        let horizon = self.plan.horizon as i64;
        let late_change = runs.iter().filter(|r| r.nu.unwrap_or(-1) >= horizon).count() as u64;
        let censored = runs
            .iter()
            .filter(|r| r.alarm().is_none() && r.nu.unwrap_or(-1) < horizon)
            .count() as u64;
        let conditioned = runs.iter().filter(|r| r.after_change()).count() as u64;
        let correct = runs
            .iter()
            .filter(|r| r.after_change() && r.alarm().is_some_and(|(_, d)| d == stream))
            .count() as u64;
        let delay = self
            .plan
            .moments
            .iter()
            .map(|&r| self.delay_from_runs(stream, theta, &runs, r))
            .collect::<Result<_>>()?;
        Ok(ChangeSummary {
            stream: stream + 1,
            theta,
            trials: runs.len(),
            conditioned,
            censored,
            late_change,
            pmi: self.pmi_from_runs(stream, &runs)?,
            correct: Proportion::new(correct, conditioned, self.plan.confidence),
            delay,
        })
    }

    pub fn theory(&self) -> TheoryColumns {
        TheoryColumns {
            mu: self.mu(),
            pfa_bound: pfa_bound(&self.thresholds),
            pmi_bound: pmi_bound(&self.thresholds),
        }
    }

    /// Runs every estimator of the plan.
    pub fn report(&self) -> Result<RiskReport> {
        let theory = self.theory();
        let pfa = self.estimate_pfa()?;
        let n = self.setup.streams();
        let mut change = Vec::new();
        for i in 0..n {
            for &theta in &self.plan.thetas {
                change.push(self.summarize_change(i, theta)?);
            }
        }
        let mut conditional = Vec::new();
        for i in 0..n {
            for &theta in &self.plan.thetas {
                for &k in &self.plan.fixed_nu {
                    let runs = self.change_runs(i, theta, Some(k))?;
                    let moments = self
                        .plan
                        .moments
                        .iter()
                        .map(|&r| self.delay_from_runs(i, theta, &runs, r))
                        .collect::<Result<_>>()?;
                    conditional.push(ConditionalDelay {
                        stream: i + 1,
                        theta,
                        k,
                        trials: runs.len(),
                        censored: runs.iter().filter(|r| r.alarm().is_none()).count() as u64,
                        moments,
                    });
                }
            }
        }

        let mut checks = Vec::new();
        for (i, e) in pfa.per_stream.iter().enumerate() {
            let bound = theory.pfa_bound.per_stream[i];
            checks.push(BoundCheck {
                name: format!("pfa[{}]", i + 1),
                estimate: e.mean,
                ci_upper: e.ci_upper,
                bound,
                pass: e.ci_upper <= bound,
            });
        }
        for c in &change {
            for (j, p) in c.pmi.iter().enumerate() {
                if let Some(p) = p {
                    let bound = theory.pmi_bound.pairwise[c.stream - 1][j];
                    checks.push(BoundCheck {
                        name: format!("pmi[{}][{}] theta={}", c.stream, j + 1, c.theta),
                        estimate: p.estimate,
                        ci_upper: p.ci_upper,
                        bound,
                        pass: p.ci_upper <= bound,
                    });
                }
            }
        }

        let change_trials = change.iter().map(|c| (c.trials as u64) - c.late_change).sum::<u64>()
            + conditional.iter().map(|c| c.trials as u64).sum::<u64>();
        let censored =
            change.iter().map(|c| c.censored).sum::<u64>() + conditional.iter().map(|c| c.censored).sum::<u64>();
        let fraction = if change_trials == 0 {
            0.0
        } else {
            censored as f64 / change_trials as f64
        };

        Ok(RiskReport {
            streams: n,
            plan: self.plan.clone(),
            thresholds: self.thresholds.clone().into(),
            theory,
            pfa,
            change,
            conditional,
            checks,
            censor: CensorSummary {
                change_trials,
                censored,
                fraction,
                budget: self.plan.censor_budget,
                exceeded: fraction > self.plan.censor_budget,
            },
        })
    }
}

/// One rung of a threshold ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRung {
    pub log_a0: f64,
    pub stream: usize,
    pub theta: f64,
    pub moments: Vec<DelayMoment>,
}

/// Integrated delay moments as the thresholds grow, all log thresholds
/// scaled by `log_a0 / log A_10` of the experiment's matrix.
pub fn delay_ladder(experiment: &Experiment, rungs: &[f64], stream: usize, theta: f64) -> Result<Vec<LadderRung>> {
    let base = experiment.thresholds().log(0, Competitor::NoChange);
    if !(base > 0.0 && base.is_finite()) {
        return domain("ladder needs a finite positive base threshold");
    }
    rungs
        .iter()
        .map(|&log_a0| {
            let exp = experiment.with_thresholds(experiment.thresholds().scaled(log_a0 / base)?)?;
            let runs = exp.change_runs(stream, theta, None)?;
            let moments = exp
                .plan
                .moments
                .iter()
                .map(|&r| exp.delay_from_runs(stream, theta, &runs, r))
                .collect::<Result<_>>()?;
            Ok(LadderRung {
                log_a0,
                stream: stream + 1,
                theta,
                moments,
            })
        })
        .collect()
}
