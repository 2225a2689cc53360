//! Run configuration: one TOML file whose sections mirror the library types.
//!
//! Every field has a default, so an empty file (or no file) describes the
//! two-stream Gaussian desk setup. Command-line flags are applied on top via
//! [`Overrides`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use multidetect::theory::{bayes_gammas, BayesGammas, Infimum};
use multidetect::{
    ArGaussian, DetectorSetup, ExperimentPlan, IidGaussian, MixingMeasure, Prior, SharedModel, Signal, Spacing,
    ThetaRange, ThresholdMatrix,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub prior: PriorSection,
    #[serde(rename = "model")]
    pub models: Vec<ModelSection>,
    pub mixing: MixingSection,
    pub targets: TargetsSection,
    pub experiment: ExperimentSection,
    pub validate: ValidateSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            prior: PriorSection::default(),
            models: vec![ModelSection::default(), ModelSection::default()],
            mixing: MixingSection::default(),
            targets: TargetsSection::default(),
            experiment: ExperimentSection::default(),
            validate: ValidateSection::default(),
            output: OutputSection::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKindConfig {
    Geometric,
    Weibull,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub kind: PriorKindConfig,
    /// `P(nu = -1)`.
    pub q: f64,
    pub rho: f64,
    pub kappa: f64,
    pub scale: f64,
    /// Truncation point of an explicit pmf.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// CSV with header `k,probability`; a row with `k = -1` overrides `q`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmf_file: Option<PathBuf>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            kind: PriorKindConfig::Geometric,
            q: 0.0,
            rho: 0.05,
            kappa: 0.5,
            scale: 20.0,
            horizon: None,
            pmf_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    IidGauss,
    ArGauss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub sigma: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub ar_coeffs: Vec<f64>,
    pub signal: Signal,
    pub stationary_init: bool,
    /// Steps averaged for the signal energy when it has no closed form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_window: Option<usize>,
    /// Replaces the shared `[mixing]` section for this stream.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingSection>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::IidGauss,
            sigma: 1.0,
            theta_min: 0.25,
            theta_max: 2.0,
            ar_coeffs: Vec::new(),
            signal: Signal::Constant { amplitude: 1.0 },
            stationary_init: false,
            energy_window: None,
            mixing: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsKind {
    Uniform,
    GaussianConjugate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingSection {
    /// Grid bounds; default to the stream's parameter range.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub count: usize,
    pub spacing: Spacing,
    pub weights: WeightsKind,
    /// Scale of the half-normal behind `gaussian-conjugate` weights.
    pub scale: f64,
    /// A single-point measure at this value; replaces the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<f64>,
}

impl Default for MixingSection {
    fn default() -> Self {
        Self {
            min: None,
            max: None,
            count: 8,
            spacing: Spacing::Log,
            weights: WeightsKind::Uniform,
            scale: 1.0,
            point: None,
        }
    }
}

/// A per-stream list, or one value for every stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStream {
    One(f64),
    Each(Vec<f64>),
}

/// A full `beta[i][j]` matrix (diagonal ignored), or one value off the
/// diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairTargets {
    One(f64),
    Each(Vec<Vec<f64>>),
}

/// With nothing set, every PFA target is 0.05 and every PMI target 0.05.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetsSection {
    /// Per-stream PFA targets, or a single total PFA target in the
    /// symmetric modes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<PerStream>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<PairTargets>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_bar: Option<Vec<f64>>,
    /// Hypothesis prior for the fully Bayesian mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    /// Thresholds from an earlier `calibrate` (its JSON output or a bare
    /// `{"log_a": ...}` object).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub trials: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub thetas: Vec<f64>,
    pub fixed_nu: Vec<i64>,
    pub moments: Vec<u32>,
    pub confidence: f64,
    pub censor_budget: f64,
    pub survivor_floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let plan = ExperimentPlan::new(2000, 3000, 20_240_601, vec![0.5, 1.0]);
        Self {
            trials: plan.trials,
            horizon: plan.horizon,
            seed: plan.seed,
            window: None,
            threads: None,
            thetas: plan.thetas,
            fixed_nu: plan.fixed_nu,
            moments: plan.moments,
            confidence: plan.confidence,
            censor_budget: plan.censor_budget,
            survivor_floor: plan.survivor_floor,
            mu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    /// Change points `k` of the `lambda(k, k+n)/n` diagnostics.
    pub ks: Vec<usize>,
    /// Window lengths `n`.
    pub ns: Vec<usize>,
    pub paths: usize,
    /// `log A_10` values of the delay ladder; empty skips it.
    pub ladder: Vec<f64>,
    /// 1-based stream and parameter of the ladder.
    pub ladder_stream: usize,
    pub ladder_theta: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            ks: vec![0, 100],
            ns: vec![1000, 10_000],
            paths: 100,
            ladder: Vec::new(),
            ladder_stream: 1,
            ladder_theta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub window: Option<usize>,
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads `path` (or the defaults), resolves relative file references
    /// against the file's directory and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let mut config = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
                let base = path.parent().unwrap_or(Path::new(""));
                config.resolve_paths(base);
                config
            }
            None => Self::default(),
        };
        config.apply(overrides);
        config.check()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.prior.pmf_file, &mut self.targets.thresholds_file]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        let e = &mut self.experiment;
        if let Some(v) = o.seed {
            e.seed = v;
        }
        if let Some(v) = o.trials {
            e.trials = v;
        }
        if let Some(v) = o.threads {
            e.threads = Some(v);
        }
        if let Some(v) = o.window {
            e.window = Some(v);
        }
        if let Some(v) = &o.out {
            self.output.dir = v.clone();
        }
    }

    /// Structural checks that need no model construction.
    pub fn check(&self) -> Result<()> {
        ensure!(!self.models.is_empty(), "config needs at least one [[model]] section");
        for p in [&self.prior.pmf_file, &self.targets.thresholds_file]
            .into_iter()
            .flatten()
        {
            ensure!(p.is_file(), "referenced file {} does not exist", p.display());
        }
        for (i, m) in self.models.iter().enumerate() {
            let mixing = m.mixing.as_ref().unwrap_or(&self.mixing);
            ensure!(
                mixing.point.is_some() || mixing.count >= 2,
                "stream {}: mixing grid needs count >= 2 (set `point` for a single-point measure)",
                i + 1
            );
        }
        if self.models.len() == 1 {
            let t = &self.targets;
            ensure!(
                t.beta.is_none() && t.beta_bar.is_none() && t.p.is_none(),
                "single-stream runs take only a PFA target"
            );
        }
        Ok(())
    }

    pub fn streams(&self) -> usize {
        self.models.len()
    }

    // -----------------------------------------------------------------------
    // Builders
    // -----------------------------------------------------------------------

    pub fn prior(&self) -> Result<Prior> {
        let p = &self.prior;
        let prior = match p.kind {
            PriorKindConfig::Geometric => Prior::geometric(p.rho, p.q)?,
            PriorKindConfig::Weibull => Prior::discrete_weibull(p.kappa, p.scale, p.q)?,
            PriorKindConfig::Explicit => {
                let file = p.pmf_file.as_ref().context("explicit prior needs prior.pmf_file")?;
                let (head, weights) = read_pmf(file)?;
                let q = head.unwrap_or(p.q);
                match p.horizon {
                    Some(h) => Prior::explicit_truncated(&weights, q, h)?,
                    None => Prior::explicit(&weights, q)?,
                }
            }
        };
        Ok(prior)
    }

    pub fn models(&self) -> Result<Vec<SharedModel>> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| m.build().with_context(|| format!("stream {}", i + 1)))
            .collect()
    }

    pub fn mixing(&self) -> Result<Vec<MixingMeasure>> {
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let range = ThetaRange::new(m.theta_min, m.theta_max)?;
                m.mixing
                    .as_ref()
                    .unwrap_or(&self.mixing)
                    .build(range)
                    .with_context(|| format!("mixing for stream {}", i + 1))
            })
            .collect()
    }

    pub fn setup(&self) -> Result<Arc<DetectorSetup>> {
        Ok(Arc::new(DetectorSetup::new(
            self.models()?,
            self.mixing()?,
            self.prior()?,
        )?))
    }

    pub fn plan(&self) -> ExperimentPlan {
        let e = &self.experiment;
        let mut plan = ExperimentPlan::new(e.trials, e.horizon, e.seed, e.thetas.clone());
        plan.window = e.window;
        plan.threads = e.threads;
        plan.fixed_nu = e.fixed_nu.clone();
        plan.moments = e.moments.clone();
        plan.confidence = e.confidence;
        plan.censor_budget = e.censor_budget;
        plan.survivor_floor = e.survivor_floor;
        plan.mu = e.mu;
        plan
    }

    /// Thresholds from the targets section, and the mode that produced them.
    pub fn thresholds(&self, head_mass: f64) -> Result<(ThresholdMatrix, TargetMode)> {
        let n = self.streams();
        let t = &self.targets;
        if let Some(file) = &t.thresholds_file {
            ensure!(
                t.alpha.is_none() && t.beta.is_none() && t.beta_bar.is_none(),
                "targets.thresholds_file excludes alpha/beta/beta_bar"
            );
            let m = read_thresholds(file)?;
            ensure!(
                m.streams() == n,
                "thresholds file has {} streams, config has {n}",
                m.streams()
            );
            return Ok((m, TargetMode::File));
        }
        let defaults = t.alpha.is_none() && t.beta.is_none() && t.beta_bar.is_none() && t.p.is_none();
        let default_beta = (defaults && n > 1).then_some(PairTargets::One(0.05));
        let alpha = match &t.alpha {
            Some(a) => a,
            None if defaults => &PerStream::One(0.05),
            None => bail!("targets.alpha is required"),
        };
        let beta = t.beta.as_ref().or(default_beta.as_ref());
        let out = match (alpha, beta, &t.beta_bar) {
            (_, Some(_), Some(_)) => bail!("targets.beta and targets.beta_bar are mutually exclusive"),
            (PerStream::Each(a), beta, None) => {
                ensure!(a.len() == n, "targets.alpha has {} entries for {n} streams", a.len());
                ensure!(t.p.is_none(), "the Bayesian mode takes a single alpha");
                let beta = match beta {
                    Some(b) => pair_matrix(b, n)?,
                    None if n == 1 => vec![vec![0.0]],
                    None => bail!("targets.beta is required with per-stream alpha"),
                };
                (ThresholdMatrix::calibrate(a, &beta, head_mass)?, TargetMode::Standard)
            }
            (PerStream::One(a), None, Some(bb)) => {
                ensure!(
                    bb.len() == n,
                    "targets.beta_bar has {} entries for {n} streams",
                    bb.len()
                );
                ensure!(t.p.is_none(), "the Bayesian mode takes alpha and a scalar beta");
                (ThresholdMatrix::calibrate_star(*a, bb, head_mass)?, TargetMode::Star)
            }
            (PerStream::One(a), Some(PairTargets::One(b)), None) if t.p.is_some() => (
                ThresholdMatrix::calibrate_star(*a, &vec![*b; n], head_mass)?,
                TargetMode::Bayes,
            ),
            (PerStream::One(a), Some(b), None) => {
                let alpha = vec![*a; n];
                (
                    ThresholdMatrix::calibrate(&alpha, &pair_matrix(b, n)?, head_mass)?,
                    TargetMode::Standard,
                )
            }
            (PerStream::One(a), None, None) if n == 1 => (
                ThresholdMatrix::calibrate(&[*a], &[vec![0.0]], head_mass)?,
                TargetMode::Standard,
            ),
            (PerStream::One(_), None, None) => bail!("targets need beta or beta_bar with more than one stream"),
            (PerStream::Each(_), None, Some(_)) => bail!("targets.beta_bar pairs with a single total alpha"),
        };
        Ok(out)
    }

    /// Bayesian delay constants when a hypothesis prior is configured.
    pub fn bayes(&self, setup: &DetectorSetup, mu: f64) -> Result<Option<BayesGammas<f64>>> {
        match &self.targets.p {
            Some(p) => Ok(Some(bayes_gammas(
                p,
                setup.models(),
                setup.mixing(),
                mu,
                Infimum::Analytic,
            )?)),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Standard,
    Star,
    Bayes,
    File,
}

impl ModelSection {
    fn build(&self) -> Result<SharedModel> {
        let range = ThetaRange::new(self.theta_min, self.theta_max)?;
        Ok(match self.kind {
            ModelKind::IidGauss => Arc::new(IidGaussian::new(self.sigma, range)?),
            ModelKind::ArGauss => {
                let m = match self.energy_window {
                    Some(w) => {
                        ArGaussian::with_energy_window(self.ar_coeffs.clone(), self.sigma, self.signal, range, w)?
                    }
                    None => ArGaussian::new(self.ar_coeffs.clone(), self.sigma, self.signal, range)?,
                };
                Arc::new(m.stationary(self.stationary_init))
            }
        })
    }
}

impl MixingSection {
    fn build(&self, stream_range: ThetaRange) -> Result<MixingMeasure> {
        if let Some(theta) = self.point {
            stream_range.check(theta)?;
            return Ok(MixingMeasure::single(theta)?);
        }
        let range = ThetaRange::new(
            self.min.unwrap_or(stream_range.min),
            self.max.unwrap_or(stream_range.max),
        )?;
        ensure!(
            stream_range.contains(range.min) && stream_range.contains(range.max),
            "grid [{}, {}] leaves the parameter range [{}, {}]",
            range.min,
            range.max,
            stream_range.min,
            stream_range.max
        );
        Ok(match self.weights {
            WeightsKind::Uniform => MixingMeasure::uniform(range, self.count, self.spacing)?,
            WeightsKind::GaussianConjugate => {
                MixingMeasure::gaussian_conjugate(range, self.count, self.spacing, self.scale)?
            }
        })
    }
}

fn pair_matrix(b: &PairTargets, n: usize) -> Result<Vec<Vec<f64>>> {
    match b {
        PairTargets::One(v) => Ok(vec![vec![*v; n]; n]),
        PairTargets::Each(m) => {
            ensure!(
                m.len() == n && m.iter().all(|r| r.len() == n),
                "targets.beta must be a {n}x{n} matrix"
            );
            Ok(m.clone())
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ThresholdSource {
    Calibration {
        thresholds: multidetect::rule::ThresholdRows<f64>,
    },
    Bare(multidetect::rule::ThresholdRows<f64>),
}

pub fn read_thresholds(path: &Path) -> Result<ThresholdMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading thresholds {}", path.display()))?;
    let rows = match serde_json::from_str::<ThresholdSource>(&text)
        .with_context(|| format!("parsing thresholds {}", path.display()))?
    {
        ThresholdSource::Calibration { thresholds } | ThresholdSource::Bare(thresholds) => thresholds,
    };
    Ok(ThresholdMatrix::try_from(rows)?)
}

/// Reads `k,probability` rows; returns the `k = -1` mass if present and the
/// weights for `k = 0, 1, ...`.
fn read_pmf(path: &Path) -> Result<(Option<f64>, Vec<f64>)> {
    #[derive(Deserialize)]
    struct Row {
        k: i64,
        probability: f64,
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening pmf {}", path.display()))?;
    let mut head = None;
    let mut weights = Vec::new();
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("pmf {} row {}", path.display(), line + 1))?;
        if row.k == -1 && weights.is_empty() && head.is_none() {
            head = Some(row.probability);
            continue;
        }
        ensure!(
            row.k == weights.len() as i64,
            "pmf {} row {}: expected k = {}, got {}",
            path.display(),
            line + 1,
            weights.len(),
            row.k
        );
        weights.push(row.probability);
    }
    ensure!(!weights.is_empty(), "pmf {} has no rows for k >= 0", path.display());
    Ok((head, weights))
}
