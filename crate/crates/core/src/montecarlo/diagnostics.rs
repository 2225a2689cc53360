//! Law-of-large-numbers checks on the normalized log-likelihood ratios, and
//! the unit-mean check of the likelihood ratio under no change.

use serde::Serialize;

use super::stats::{KahanSum, MeanEstimate};
use super::{run_trials, trial_rng, Tag};
use crate::error::{domain, Result};
use crate::models::{simulate, SharedModel, StreamModel};

/// Relative deviation above which a diagnostic is flagged.
pub const DIAGNOSTIC_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// `lambda_i(k, k+n)/n` after a change in `i`, against `I_i`.
    PostChange,
    /// `(lambda_i - lambda_j)(k, k+n)/n` after a change in `i`, both at the
    /// same parameter, against `I_i + I_0j`.
    Pair,
    /// `lambda_i(k, k+n)/n` with no change, against `-I_0i`.
    PreChange,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionDiagnostic {
    pub kind: DiagnosticKind,
    /// 1-based.
    pub stream: usize,
    pub competitor: Option<usize>,
    pub theta: f64,
    pub k: usize,
    pub n: usize,
    pub paths: usize,
    pub mean: f64,
    pub std_error: f64,
    pub target: f64,
    pub relative_deviation: f64,
    pub flagged: bool,
}

/// Cumulative `lambda_theta(k, k + n)` of one stream, read off at each of
/// `ns` (ascending).
pub fn cumulative_llr(model: &dyn StreamModel<f64>, theta: f64, x: &[f64], k: usize, ns: &[usize]) -> Result<Vec<f64>> {
    let memory = model.memory();
    let mut out = Vec::with_capacity(ns.len());
    let mut sum = KahanSum::new();
    let mut next = 0;
    for t in (k + 1)..=x.len() {
        let start = t.saturating_sub(memory + 1);
        sum.add(model.llr_increment(theta, t, &x[start..t])?);
        while next < ns.len() && t - k == ns[next] {
            out.push(sum.value());
            next += 1;
        }
        if next == ns.len() {
            break;
        }
    }
    if out.len() != ns.len() {
        return domain("path too short for the requested lengths");
    }
    Ok(out)
}

fn relative(mean: f64, target: f64) -> f64 {
    (mean - target).abs() / target.abs()
}

/// Estimates `lambda(k, k+n)/n` over `paths` simulated paths for every
/// stream, parameter, `k` and `n`.
pub fn validate_conditions(
    models: &[SharedModel<f64>],
    thetas: &[f64],
    ks: &[usize],
    ns: &[usize],
    paths: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<ConditionDiagnostic>> {
    if paths == 0 || ns.is_empty() || ks.is_empty() {
        return domain("diagnostics need paths, lengths and change points");
    }
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let n_max = *ns.last().expect("nonempty");
    let streams = models.len();
    let mut out = Vec::new();
    for i in 0..streams {
        for &theta in thetas {
            models[i].theta_range().check(theta)?;
            let info = models[i].info_number(theta)?;
            let null_info = models[i].null_info_number(theta)?;
            for &k in ks {
                let post = run_trials(threads, paths, |p| {
                    let mut rng = trial_rng(
                        seed ^ ((k as u64) << 32),
                        Tag::Diagnostic {
                            stream: i,
                            theta,
                            pre_change: false,
                        }
                        .value(),
                        p,
                    );
                    let path = simulate(models, Some((i, k as i64, theta)), k + n_max, &mut rng)?;
                    let own = cumulative_llr(models[i].as_ref(), theta, &path.stream_values(i), k, &ns)?;
                    let others = (0..streams)
                        .map(|j| {
                            if j == i {
                                return Ok(Vec::new());
                            }
                            cumulative_llr(models[j].as_ref(), theta, &path.stream_values(j), k, &ns)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok((own, others))
                })?;
                let pre = run_trials(threads, paths, |p| {
                    let mut rng = trial_rng(
                        seed ^ ((k as u64) << 32),
                        Tag::Diagnostic {
                            stream: i,
                            theta,
                            pre_change: true,
                        }
                        .value(),
                        p,
                    );
                    let x = models[i].simulate(k + n_max, None, &mut rng);
                    cumulative_llr(models[i].as_ref(), theta, &x, k, &ns)
                })?;

                for (idx, &n) in ns.iter().enumerate() {
                    let nf = n as f64;
                    let mut push = |kind, competitor, values: Vec<f64>, target: f64| {
                        let est = MeanEstimate::two_sided(&values, 0.95);
                        let dev = relative(est.mean, target);
                        let wrong_sign = kind == DiagnosticKind::PreChange && est.mean >= 0.0;
                        out.push(ConditionDiagnostic {
                            kind,
                            stream: i + 1,
                            competitor,
                            theta,
                            k,
                            n,
                            paths,
                            mean: est.mean,
                            std_error: est.std_error,
                            target,
                            relative_deviation: dev,
                            flagged: dev > DIAGNOSTIC_TOLERANCE || wrong_sign,
                        });
                    };
                    push(
                        DiagnosticKind::PostChange,
                        None,
                        post.iter().map(|(own, _)| own[idx] / nf).collect(),
                        info,
                    );
                    for j in (0..streams).filter(|&j| j != i) {
                        let target = info + models[j].null_info_number(theta)?;
                        push(
                            DiagnosticKind::Pair,
                            Some(j + 1),
                            post.iter()
                                .map(|(own, others)| (own[idx] - others[j][idx]) / nf)
                                .collect(),
                            target,
                        );
                    }
                    push(
                        DiagnosticKind::PreChange,
                        None,
                        pre.iter().map(|v| v[idx] / nf).collect(),
                        -null_info,
                    );
                }
            }
        }
    }
    Ok(out)
}

/// `E_inf[LR_theta(k, n)]` over `trials` pre-change paths of one stream.
pub fn lr_expectation(
    model: &dyn StreamModel<f64>,
    theta: f64,
    k: usize,
    n: usize,
    trials: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<MeanEstimate> {
    if n <= k {
        return domain("need n > k");
    }
    let values = run_trials(threads, trials, |t| {
        let mut rng = trial_rng(seed, Tag::Martingale.value(), t);
        let x = model.simulate(n, None, &mut rng);
        Ok(cumulative_llr(model, theta, &x, k, &[n - k])?[0].exp())
    })?;
    Ok(MeanEstimate::two_sided(&values, 0.95))
}
