//! Closed-form operating characteristics of the rule: PFA/PMI upper bounds,
//! first-order delay expressions and the Bayes risk coefficients.

use serde::Serialize;

use crate::engine::{Competitor, MixingMeasure};
use crate::error::{domain, Error, Result};
use crate::models::{info_number_pair_inf, PairInfimum, SharedModel};
use crate::rule::ThresholdMatrix;
use crate::scalar::{logistic_complement, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfaBound<T> {
    /// `1 / (1 + A_i0)` per stream.
    pub per_stream: Vec<T>,
    pub total: T,
}

/// `PFA_i <= 1 / (1 + A_i0)` and their sum.
pub fn pfa_bound<T: Scalar>(a: &ThresholdMatrix<T>) -> PfaBound<T> {
    let per_stream: Vec<T> = (0..a.streams())
        .map(|i| logistic_complement(a.log(i, Competitor::NoChange)))
        .collect();
    let total = per_stream.iter().copied().sum();
    PfaBound { per_stream, total }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmiBound<T> {
    /// `pairwise[i][j]` bounds deciding `j` when the change is in `i`; zero
    /// on the diagonal.
    pub pairwise: Vec<Vec<T>>,
    /// Row sums.
    pub per_stream: Vec<T>,
}

/// `PMI_ij <= (1 + A_i0) / (A_i0 A_ji)`.
pub fn pmi_bound<T: Scalar>(a: &ThresholdMatrix<T>) -> PmiBound<T> {
    let n = a.streams();
    let pairwise: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let prefactor = T::one() + (-a.log(i, Competitor::NoChange)).exp();
            (0..n)
                .map(|j| {
                    if i == j {
                        T::zero()
                    } else {
                        prefactor * (-a.log(j, Competitor::Stream(i))).exp()
                    }
                })
                .collect()
        })
        .collect();
    let per_stream = pairwise.iter().map(|r| r.iter().copied().sum()).collect();
    PmiBound { pairwise, per_stream }
}

/// Which infimum of `I_ij` over the competitor's parameters to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Infimum {
    /// Minimum over the competitor's mixing grid.
    Grid,
    /// Infimum over the whole parameter half-line.
    #[default]
    Analytic,
}

/// Information numbers seen by stream `i` at `theta_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoProfile<T> {
    pub stream: usize,
    pub theta: T,
    /// `I_i(theta_i)`.
    pub info: T,
    /// `inf I_ij(theta_i, .)` for every `j`; `None` at `j = i`.
    pub pair_inf: Vec<Option<PairInfimum<T>>>,
}

impl<T: Scalar> InfoProfile<T> {
    pub fn new(models: &[SharedModel<T>], mixing: &[MixingMeasure<T>], stream: usize, theta: T) -> Result<Self> {
        if mixing.len() != models.len() {
            return Err(Error::Dimension {
                expected: models.len(),
                got: mixing.len(),
            });
        }
        let model = models
            .get(stream)
            .ok_or_else(|| Error::Domain(format!("stream index {stream} out of range")))?;
        let info = model.info_number(theta)?;
        if !(info > T::zero()) {
            return domain(format!("information number must be positive, got {info}"));
        }
        let pair_inf = (0..models.len())
            .map(|j| {
                if j == stream {
                    return Ok(None);
                }
                let grid: Vec<T> = mixing[j]
                    .grid()
                    .iter()
                    .zip(mixing[j].weights())
                    .filter(|(_, w)| **w > T::zero())
                    .map(|(g, _)| *g)
                    .collect();
                info_number_pair_inf(models, stream, theta, j, &grid).map(Some)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            stream,
            theta,
            info,
            pair_inf,
        })
    }

    /// Builds a profile from plain numbers; `pair_inf[stream]` is ignored.
    pub fn from_numbers(stream: usize, theta: T, info: T, pair_inf: &[T]) -> Self {
        let pair_inf = pair_inf
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                (j != stream).then_some(PairInfimum {
                    on_grid: v,
                    analytic: v,
                })
            })
            .collect();
        Self {
            stream,
            theta,
            info,
            pair_inf,
        }
    }

    pub fn pair(&self, j: usize, which: Infimum) -> Option<T> {
        self.pair_inf.get(j).copied().flatten().map(|p| match which {
            Infimum::Grid => p.on_grid,
            Infimum::Analytic => p.analytic,
        })
    }

    /// `min_j inf I_ij`; infinite for a single stream.
    pub fn min_pair(&self, which: Infimum) -> T {
        (0..self.pair_inf.len())
            .filter_map(|j| self.pair(j, which))
            .fold(T::infinity(), T::min)
    }
}

/// `max{ num_0 / (I + mu), max_j num_j / inf I_ij }`.
fn psi_max<T: Scalar>(num0: T, profile: &InfoProfile<T>, mu: T, which: Infimum, num: impl Fn(usize) -> T) -> T {
    let mut psi = num0 / (profile.info + mu);
    for j in 0..profile.pair_inf.len() {
        if let Some(d) = profile.pair(j, which) {
            psi = psi.max(num(j) / d);
        }
    }
    psi
}

/// `Psi_i(A, theta_i, mu)`: first-order approximation of the expected delay.
pub fn psi_threshold<T: Scalar>(a: &ThresholdMatrix<T>, profile: &InfoProfile<T>, mu: T, which: Infimum) -> T {
    let i = profile.stream;
    psi_max(a.log(i, Competitor::NoChange), profile, mu, which, |j| {
        a.log(i, Competitor::Stream(j))
    })
}

/// `Psi_i(alpha, beta)` with `beta[j][i]` the target for deciding `i` when
/// the change is in `j`.
pub fn psi_class<T: Scalar>(alpha: &[T], beta: &[Vec<T>], profile: &InfoProfile<T>, mu: T, which: Infimum) -> T {
    let i = profile.stream;
    psi_max(alpha[i].ln().abs(), profile, mu, which, |j| beta[j][i].ln().abs())
}

/// `Psi*_i(alpha, beta_bar)` for the symmetric targets.
pub fn psi_star<T: Scalar>(alpha: T, beta_bar: &[T], profile: &InfoProfile<T>, mu: T, which: Infimum) -> T {
    psi_max(alpha.ln().abs(), profile, mu, which, |j| beta_bar[j].ln().abs())
}

/// `|log alpha_i| / I_i(theta_i)`, the form `Psi_i(alpha, beta)` takes when
/// `mu = 0`, `beta_ji >= alpha_i` and `inf I_ij >= I_i`.
pub fn heavy_tail_psi<T: Scalar>(alpha_i: T, info: T) -> T {
    alpha_i.ln().abs() / info
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BayesGammas<T> {
    pub gamma0: T,
    pub gamma1: T,
}

/// `gamma_0 = sum_i p_i sum_g w_g / (I_i(theta_g) + mu)` and
/// `gamma_1 = sum_i p_i sum_g w_g / min_j inf I_ij(theta_g, .)`, with the
/// information numbers supplied per `(stream, grid value)`.
pub fn bayes_gammas_with<T: Scalar>(
    p: &[T],
    mixing: &[MixingMeasure<T>],
    mu: T,
    mut info: impl FnMut(usize, T) -> Result<(T, T)>,
) -> Result<BayesGammas<T>> {
    if p.len() != mixing.len() {
        return Err(Error::Dimension {
            expected: mixing.len(),
            got: p.len(),
        });
    }
    if p.iter().any(|v| !(*v >= T::zero())) || (p.iter().copied().sum::<T>() - T::one()).abs() > T::of(1e-9) {
        return domain("hypothesis prior must be a probability vector");
    }
    let mut gamma0 = T::zero();
    let mut gamma1 = T::zero();
    for (i, (&pi, w)) in p.iter().zip(mixing).enumerate() {
        if pi == T::zero() {
            continue;
        }
        let mut g0 = T::zero();
        let mut g1 = T::zero();
        for (&theta, &wg) in w.grid().iter().zip(w.weights()) {
            if wg == T::zero() {
                continue;
            }
            let (ii, pair) = info(i, theta)?;
            g0 = g0 + wg / (ii + mu);
            g1 = g1 + wg / pair;
        }
        gamma0 = gamma0 + pi * g0;
        gamma1 = gamma1 + pi * g1;
    }
    Ok(BayesGammas { gamma0, gamma1 })
}

/// [`bayes_gammas_with`] using the models' information numbers.
pub fn bayes_gammas<T: Scalar>(
    p: &[T],
    models: &[SharedModel<T>],
    mixing: &[MixingMeasure<T>],
    mu: T,
    which: Infimum,
) -> Result<BayesGammas<T>> {
    bayes_gammas_with(p, mixing, mu, |i, theta| {
        let profile = InfoProfile::new(models, mixing, i, theta)?;
        Ok((profile.info, profile.min_pair(which)))
    })
}

/// Theory columns for one `(stream, theta)` evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiRow<T> {
    pub stream: usize,
    pub theta: T,
    pub info: T,
    pub mu: T,
    pub psi_grid: T,
    pub psi_analytic: T,
}

pub fn psi_table<T: Scalar>(
    a: &ThresholdMatrix<T>,
    models: &[SharedModel<T>],
    mixing: &[MixingMeasure<T>],
    mu: T,
    thetas: &[T],
) -> Result<Vec<PsiRow<T>>> {
    let mut rows = Vec::new();
    for i in 0..models.len() {
        for &theta in thetas {
            let profile = InfoProfile::new(models, mixing, i, theta)?;
            rows.push(PsiRow {
                stream: i + 1,
                theta,
                info: profile.info,
                mu,
                psi_grid: psi_threshold(a, &profile, mu, Infimum::Grid),
                psi_analytic: psi_threshold(a, &profile, mu, Infimum::Analytic),
            });
        }
    }
    Ok(rows)
}
