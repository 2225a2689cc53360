//! Subcommand bodies. Each returns a [`Status`] on success; any error maps to
//! exit code 2.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{ensure, Context, Result};
use multidetect::montecarlo::{
    delay_ladder, lr_expectation, trial_rng, validate_conditions, ConditionDiagnostic, LadderRung,
};
use multidetect::rule::ThresholdRows;
use multidetect::theory::{pfa_bound, pmi_bound, psi_table, BayesGammas, PfaBound, PmiBound, PsiRow};
use multidetect::{models, Detector, Experiment};
use serde::Serialize;
use serde_json::Value;

use crate::config::{RunConfig, TargetMode};
use crate::data;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Censored,
    BoundFailure,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Censored => 3,
            Status::BoundFailure => 4,
        }
    }
}

fn write_json<T: Serialize>(out: impl Write, value: &T) -> Result<()> {
    let mut out = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<File> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    File::create(&path).with_context(|| format!("creating {}", path.display()))
}

fn mu(config: &RunConfig, prior: &multidetect::Prior) -> f64 {
    config.experiment.mu.unwrap_or_else(|| prior.tail_exponent().value)
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct Calibration {
    pub streams: usize,
    pub mode: TargetMode,
    pub head_mass: f64,
    pub thresholds: ThresholdRows<f64>,
    pub pfa_bound: PfaBound<f64>,
    pub pmi_bound: PmiBound<f64>,
    pub mu: f64,
    pub mu_estimated: bool,
    pub psi: Vec<PsiRow<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bayes: Option<BayesGammas<f64>>,
}

pub fn calibration(config: &RunConfig) -> Result<Calibration> {
    let setup = config.setup()?;
    let head_mass = setup.prior().head_mass();
    let (thresholds, mode) = config.thresholds(head_mass)?;
    let mu = mu(config, setup.prior());
    Ok(Calibration {
        streams: setup.streams(),
        mode,
        head_mass,
        pfa_bound: pfa_bound(&thresholds),
        pmi_bound: pmi_bound(&thresholds),
        mu,
        mu_estimated: config.experiment.mu.is_none() && setup.prior().tail_exponent().estimated,
        psi: psi_table(
            &thresholds,
            setup.models(),
            setup.mixing(),
            mu,
            &config.experiment.thetas,
        )?,
        bayes: config.bayes(&setup, mu)?,
        thresholds: thresholds.into(),
    })
}

pub fn calibrate(config: &RunConfig) -> Result<Status> {
    write_json(io::stdout().lock(), &calibration(config)?)?;
    Ok(Status::Ok)
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

pub fn detect(config: &RunConfig, data_path: &Path, frames: Option<&Path>) -> Result<Status> {
    let setup = config.setup()?;
    let (thresholds, _) = config.thresholds(setup.prior().head_mass())?;
    let file = File::open(data_path).with_context(|| format!("opening {}", data_path.display()))?;
    let path = data::read_path(io::BufReader::new(file), setup.streams())
        .with_context(|| format!("reading {}", data_path.display()))?;

    let mut dump = match frames {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            writeln!(w, "n,stream,j,logLambdaBar")?;
            Some(w)
        }
        None => None,
    };
    let mut detector = Detector::new(setup, thresholds, config.experiment.window)?;
    let mut verdict = None;
    for t in 1..=path.horizon {
        let v = detector.observe(path.at(t))?;
        if let Some(w) = dump.as_mut() {
            detector.state().frame().write_csv_rows(w)?;
        }
        if v.is_some() {
            verdict = v;
            break;
        }
    }
    if let Some(mut w) = dump {
        w.flush()?;
    }
    let verdict = verdict.unwrap_or_else(|| detector.censor());
    write_json(io::stdout().lock(), &verdict.summary())?;
    Ok(if verdict.stopped() {
        Status::Ok
    } else {
        Status::Censored
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// A single path with a change in `stream` (1-based) after `nu`.
#[derive(Debug, Clone, Copy)]
pub struct PathRequest {
    pub stream: usize,
    pub nu: i64,
    pub theta: Option<f64>,
    pub length: Option<usize>,
}

pub fn emit_path(config: &RunConfig, request: PathRequest, out: &Path) -> Result<Status> {
    let models = config.models()?;
    ensure!(
        (1..=models.len()).contains(&request.stream),
        "--stream must lie in 1..={}",
        models.len()
    );
    let theta = match request.theta {
        Some(t) => t,
        None => *config
            .experiment
            .thetas
            .first()
            .context("--theta is required when experiment.thetas is empty")?,
    };
    let length = request.length.unwrap_or(config.experiment.horizon);
    let mut rng = trial_rng(config.experiment.seed, 0, 0);
    let path = models::simulate(&models, Some((request.stream - 1, request.nu, theta)), length, &mut rng)?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    data::write_path(BufWriter::new(file), &path)?;
    Ok(Status::Ok)
}

pub fn simulate(config: &RunConfig) -> Result<Status> {
    let setup = config.setup()?;
    let (thresholds, _) = config.thresholds(setup.prior().head_mass())?;
    let experiment = Experiment::new(setup, thresholds, config.plan())?;
    let report = experiment.report()?;

    let dir = &config.output.dir;
    write_json(create(dir, "report.json")?, &report)?;
    let mut csv = csv::Writer::from_writer(create(dir, "report.csv")?);
    for row in report.rows() {
        csv.serialize(row)?;
    }
    csv.flush()?;
    create(dir, "config.toml")?.write_all(config.to_toml()?.as_bytes())?;

    let summary = Summary::from_report(&serde_json::to_value(&report)?)?;
    summary.print(&mut io::stdout().lock())?;
    println!("wrote {}", dir.join("report.json").display());
    Ok(summary.status())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Bound checks and censoring read back from a report JSON. Pass/fail is
/// recomputed from the stored numbers rather than trusted.
#[derive(Debug)]
pub struct Summary {
    checks: Vec<(String, f64, f64, f64, bool)>,
    delays: Vec<(u64, f64, u64, f64, f64, f64)>,
    censored: u64,
    change_trials: u64,
    fraction: f64,
    budget: f64,
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).with_context(|| format!("report is missing `{key}`"))
}

fn num(v: &Value, key: &str) -> Result<f64> {
    field(v, key)?
        .as_f64()
        .with_context(|| format!("report field `{key}` is not a number"))
}

fn count(v: &Value, key: &str) -> Result<u64> {
    field(v, key)?
        .as_u64()
        .with_context(|| format!("report field `{key}` is not a count"))
}

impl Summary {
    pub fn from_report(report: &Value) -> Result<Self> {
        let checks = field(report, "checks")?
            .as_array()
            .context("`checks` is not an array")?
            .iter()
            .map(|c| {
                let name = field(c, "name")?.as_str().context("check name")?.to_string();
                let (estimate, upper, bound) = (num(c, "estimate")?, num(c, "ci_upper")?, num(c, "bound")?);
                Ok((name, estimate, upper, bound, upper <= bound))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut delays = Vec::new();
        for c in field(report, "change")?
            .as_array()
            .context("`change` is not an array")?
        {
            for d in field(c, "delay")?.as_array().context("`delay` is not an array")? {
                let est = field(d, "estimate")?;
                let ratio = field(field(d, "ratio")?, "value")?.as_f64().unwrap_or(f64::NAN);
                delays.push((
                    count(c, "stream")?,
                    num(c, "theta")?,
                    count(d, "r")?,
                    est.get("mean").and_then(Value::as_f64).unwrap_or(f64::NAN),
                    num(d, "psi_r")?,
                    ratio,
                ));
            }
        }
        let censor = field(report, "censor")?;
        let censored = count(censor, "censored")?;
        let change_trials = count(censor, "change_trials")?;
        Ok(Self {
            checks,
            delays,
            censored,
            change_trials,
            fraction: num(censor, "fraction")?,
            budget: num(censor, "budget")?,
        })
    }

    pub fn status(&self) -> Status {
        if self.checks.iter().any(|c| !c.4) {
            Status::BoundFailure
        } else if self.fraction > self.budget {
            Status::Censored
        } else {
            Status::Ok
        }
    }

    pub fn print(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(
            out,
            "{:<28} {:>11} {:>11} {:>11}  result",
            "check", "estimate", "ci_upper", "bound"
        )?;
        for (name, est, upper, bound, pass) in &self.checks {
            let tag = if *pass { "PASS" } else { "FAIL" };
            writeln!(out, "{name:<28} {est:>11.6} {upper:>11.6} {bound:>11.6}  {tag}")?;
        }
        if !self.delays.is_empty() {
            writeln!(out)?;
            writeln!(
                out,
                "{:<6} {:>8} {:>3} {:>12} {:>12} {:>8}",
                "stream", "theta", "r", "delay", "psi_r", "ratio"
            )?;
            for (i, theta, r, est, psi, ratio) in &self.delays {
                writeln!(out, "{i:<6} {theta:>8.4} {r:>3} {est:>12.4} {psi:>12.4} {ratio:>8.4}")?;
            }
        }
        writeln!(out)?;
        let tag = if self.fraction > self.budget { "EXCEEDED" } else { "ok" };
        writeln!(
            out,
            "censored {}/{} change-present runs ({:.4} vs budget {}): {tag}",
            self.censored, self.change_trials, self.fraction, self.budget
        )?;
        let failed = self.checks.iter().filter(|c| !c.4).count();
        writeln!(
            out,
            "{} of {} bound checks passed",
            self.checks.len() - failed,
            self.checks.len()
        )
    }
}

pub fn report(path: &Path) -> Result<Status> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let summary = Summary::from_report(&value)?;
    summary.print(&mut io::stdout().lock())?;
    Ok(summary.status())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct UnitMean {
    stream: usize,
    theta: f64,
    n: usize,
    trials: u64,
    mean: f64,
    std_error: f64,
    z: f64,
}

#[derive(Debug, Serialize)]
struct SupportGap {
    stream: usize,
    gap: f64,
}

#[derive(Debug, Serialize)]
struct Validation {
    conditions: Vec<ConditionDiagnostic>,
    flagged: usize,
    support_gap: Vec<SupportGap>,
    unit_mean: Vec<UnitMean>,
    ladder: Vec<LadderRung>,
}

/// Trials of the likelihood-ratio unit-mean check per diagnostic path. Its
/// length is chosen so that `2 I n` is about one, keeping the second moment
/// of the ratio near `e`.
const UNIT_MEAN_TRIALS_PER_PATH: usize = 10;

pub fn validate(config: &RunConfig) -> Result<Status> {
    let setup = config.setup()?;
    let e = &config.experiment;
    let v = &config.validate;
    ensure!(v.paths > 0, "validate.paths must be at least 1");
    ensure!(!e.thetas.is_empty(), "experiment.thetas is empty");
    let models = setup.models();

    let conditions = validate_conditions(models, &e.thetas, &v.ks, &v.ns, v.paths, e.seed, e.threads)?;
    let support_gap = models
        .iter()
        .zip(setup.mixing())
        .enumerate()
        .map(|(i, (m, w))| SupportGap {
            stream: i + 1,
            gap: w.support_gap(m.theta_range()),
        })
        .collect();
    let mut unit_mean = Vec::new();
    for (i, m) in models.iter().enumerate() {
        for &theta in &e.thetas {
            let trials = v.paths * UNIT_MEAN_TRIALS_PER_PATH;
            let n = ((0.5 / m.info_number(theta)?).floor() as usize).max(1);
            let est = lr_expectation(
                m.as_ref(),
                theta,
                0,
                n,
                trials,
                e.seed.wrapping_add(i as u64),
                e.threads,
            )?;
            unit_mean.push(UnitMean {
                stream: i + 1,
                theta,
                n,
                trials: est.count,
                mean: est.mean,
                std_error: est.std_error,
                z: (est.mean - 1.0) / est.std_error,
            });
        }
    }
    let ladder = if v.ladder.is_empty() {
        Vec::new()
    } else {
        ensure!(
            (1..=setup.streams()).contains(&v.ladder_stream),
            "validate.ladder_stream must lie in 1..={}",
            setup.streams()
        );
        let (thresholds, _) = config.thresholds(setup.prior().head_mass())?;
        let experiment = Experiment::new(setup.clone(), thresholds, config.plan())?;
        delay_ladder(&experiment, &v.ladder, v.ladder_stream - 1, v.ladder_theta)?
    };

    let flagged = conditions.iter().filter(|c| c.flagged).count();
    let dir = &config.output.dir;
    let mut csv = csv::Writer::from_writer(create(dir, "validate.csv")?);
    for c in &conditions {
        csv.serialize(c)?;
    }
    csv.flush()?;
    let out = Validation {
        conditions,
        flagged,
        support_gap,
        unit_mean,
        ladder,
    };
    write_json(create(dir, "validate.json")?, &out)?;

    let mut stdout = io::stdout().lock();
    writeln!(
        stdout,
        "{:<12} {:>6} {:>4} {:>8} {:>6} {:>7} {:>10} {:>10} {:>8}  result",
        "kind", "stream", "vs", "theta", "k", "n", "mean", "target", "rel_dev"
    )?;
    for c in &out.conditions {
        let kind = match c.kind {
            multidetect::montecarlo::DiagnosticKind::PostChange => "post_change",
            multidetect::montecarlo::DiagnosticKind::Pair => "pair",
            multidetect::montecarlo::DiagnosticKind::PreChange => "pre_change",
        };
        let vs = c.competitor.map_or("-".to_string(), |j| j.to_string());
        let tag = if c.flagged { "FAIL" } else { "PASS" };
        writeln!(
            stdout,
            "{kind:<12} {:>6} {vs:>4} {:>8.4} {:>6} {:>7} {:>10.5} {:>10.5} {:>8.4}  {tag}",
            c.stream, c.theta, c.k, c.n, c.mean, c.target, c.relative_deviation
        )?;
    }
    for u in &out.unit_mean {
        writeln!(
            stdout,
            "E[LR] stream {} theta {} n {}: {:.4} (se {:.4}, z {:.2})",
            u.stream, u.theta, u.n, u.mean, u.std_error, u.z
        )?;
    }
    for r in &out.ladder {
        let ratios: Vec<String> = r
            .moments
            .iter()
            .map(|m| format!("r={} {:.3}", m.r, m.ratio.value))
            .collect();
        writeln!(stdout, "ladder log A = {}: {}", r.log_a0, ratios.join(", "))?;
    }
    writeln!(stdout, "{flagged} of {} diagnostics flagged", out.conditions.len())?;
    Ok(if flagged > 0 { Status::BoundFailure } else { Status::Ok })
}
