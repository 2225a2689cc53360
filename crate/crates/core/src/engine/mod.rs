//! Recursive computation of the mixture and sup statistics.
//!
//! For every stream the state keeps a table of `log LR_theta(k, n)` over the
//! candidate change points `k` still inside the window and the grid points
//! of the stream's mixing measure. Each step adds the new increment to every
//! cell, opens the row `k = n - 1` and re-aggregates:
//!
//! ```text
//! log Lambda_mix(i)  = logsumexp_{k,g} (log pi_k + log w_g + log LR_g(k, n))
//! log Lambda_sup(j)  = logsumexp_k     (log pi_k + max_g log LR_g(k, n))
//! log Lbar(i, 0)     = log Lambda_mix(i) - log P(nu >= n)
//! log Lbar(i, j)     = log Lambda_mix(i) - log Lambda_sup(j)
//! ```
//!
//! The head mass `pi_{-1}` is folded into `k = 0`.

mod mixing;

pub use mixing::{MixingMeasure, Spacing};

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::models::SharedModel;
use crate::prior::ChangePointPrior;
use crate::scalar::{log_add_exp, logistic_complement, LogSumExp, Scalar};

/// Immutable ingredients of a detector: one model and mixing measure per
/// stream plus the change-point prior.
#[derive(Debug, Clone)]
pub struct DetectorSetup<T: Scalar> {
    models: Vec<SharedModel<T>>,
    mixing: Vec<MixingMeasure<T>>,
    prior: ChangePointPrior<T>,
}

impl<T: Scalar> DetectorSetup<T> {
    pub fn new(models: Vec<SharedModel<T>>, mixing: Vec<MixingMeasure<T>>, prior: ChangePointPrior<T>) -> Result<Self> {
        if models.is_empty() {
            return domain("need at least one stream");
        }
        if models.len() != mixing.len() {
            return Err(Error::Dimension {
                expected: models.len(),
                got: mixing.len(),
            });
        }
        for (i, (m, w)) in models.iter().zip(&mixing).enumerate() {
            let range = m.theta_range();
            if let Some(bad) = w.grid().iter().find(|&&g| !range.contains(g)) {
                return domain(format!(
                    "stream {i}: grid point {bad} outside parameter range [{}, {}]",
                    range.min, range.max
                ));
            }
        }
        Ok(Self { models, mixing, prior })
    }

    pub fn streams(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[SharedModel<T>] {
        &self.models
    }

    pub fn mixing(&self) -> &[MixingMeasure<T>] {
        &self.mixing
    }

    pub fn prior(&self) -> &ChangePointPrior<T> {
        &self.prior
    }
}

/// Which competitor a ratio statistic is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Competitor {
    /// No change yet; denominator `P(nu >= n)`.
    NoChange,
    /// Change in another stream (0-based index); denominator its sup
    /// statistic.
    Stream(usize),
}

impl Competitor {
    /// Column in [`StatisticFrame::log_ratio`].
    pub fn column(self) -> usize {
        match self {
            Competitor::NoChange => 0,
            Competitor::Stream(j) => j + 1,
        }
    }

    /// All competitors of stream `i` among `streams` streams.
    pub fn of(i: usize, streams: usize) -> impl Iterator<Item = Competitor> {
        std::iter::once(Competitor::NoChange).chain((0..streams).filter(move |&j| j != i).map(Competitor::Stream))
    }
}

/// Snapshot of all statistics at time `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticFrame<T> {
    pub n: usize,
    /// `log Lambda_mix(i)` per stream.
    pub log_mixture: Vec<T>,
    /// `log sum_k pi_k sup_theta LR_theta(k, n)` per stream.
    pub log_sup: Vec<T>,
    /// `log P(nu >= n)`.
    pub log_survivor: T,
    /// `log_ratio[i][c]`: column 0 against no change, column `j + 1` against
    /// stream `j`. The diagonal column `i + 1` is NaN.
    pub log_ratio: Vec<Vec<T>>,
    /// Every candidate change point in the window carries zero prior mass,
    /// so the statistics are uninformative.
    pub degraded: bool,
}

impl<T: Scalar> StatisticFrame<T> {
    fn empty(streams: usize) -> Self {
        Self {
            n: 0,
            log_mixture: vec![T::neg_infinity(); streams],
            log_sup: vec![T::neg_infinity(); streams],
            log_survivor: T::zero(),
            log_ratio: vec![vec![T::nan(); streams + 1]; streams],
            degraded: false,
        }
    }

    pub fn streams(&self) -> usize {
        self.log_mixture.len()
    }

    /// `log Lbar(i, c)`.
    pub fn ratio(&self, i: usize, c: Competitor) -> T {
        self.log_ratio[i][c.column()]
    }

    /// Posterior probability, under stream `i`'s model, that the change has
    /// not happened by time `n`: `1 / (1 + Lbar(i, 0))`.
    pub fn posterior_no_change(&self, i: usize) -> T {
        logistic_complement(self.ratio(i, Competitor::NoChange))
    }

    /// Appends `n,stream,j,logLambdaBar` rows (1-based streams, `j = 0` for
    /// no change).
    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let streams = self.streams();
        for i in 0..streams {
            for c in Competitor::of(i, streams) {
                writeln!(out, "{},{},{},{}", self.n, i + 1, c.column(), self.ratio(i, c))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Row<T> {
    k: usize,
    log_prior: T,
    values: Vec<T>,
}

#[derive(Debug, Clone)]
struct StreamTable<T> {
    rows: VecDeque<Row<T>>,
    recent: VecDeque<T>,
    increments: Vec<T>,
}

/// Mutable detector state for one run.
#[derive(Debug, Clone)]
pub struct DetectorState<T: Scalar> {
    setup: Arc<DetectorSetup<T>>,
    window: Option<usize>,
    n: usize,
    tables: Vec<StreamTable<T>>,
    evicted_log_mass: T,
    frame: StatisticFrame<T>,
}

impl<T: Scalar> DetectorState<T> {
    /// `window = None` sums over every candidate change point.
    pub fn new(setup: Arc<DetectorSetup<T>>, window: Option<usize>) -> Result<Self> {
        check_window(window)?;
        let streams = setup.streams();
        let tables = setup
            .mixing
            .iter()
            .zip(&setup.models)
            .map(|(w, m)| StreamTable {
                rows: VecDeque::new(),
                recent: VecDeque::with_capacity(m.memory() + 1),
                increments: vec![T::zero(); w.len()],
            })
            .collect();
        Ok(Self {
            setup,
            window,
            n: 0,
            tables,
            evicted_log_mass: T::neg_infinity(),
            frame: StatisticFrame::empty(streams),
        })
    }

    pub fn setup(&self) -> &Arc<DetectorSetup<T>> {
        &self.setup
    }

    /// Current time (number of observations consumed).
    pub fn time(&self) -> usize {
        self.n
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    /// Restricts future frames to the `window` most recent candidates
    /// (`None` lifts the restriction; evicted rows do not come back).
    pub fn set_window(&mut self, window: Option<usize>) -> Result<()> {
        check_window(window)?;
        self.window = window;
        Ok(())
    }

    /// Prior mass of the candidates evicted from the window so far.
    pub fn evicted_mass(&self) -> T {
        self.evicted_log_mass.exp()
    }

    /// Most recent frame (time 0 before the first step).
    pub fn frame(&self) -> &StatisticFrame<T> {
        &self.frame
    }

    /// Consumes the observation vector for time `n + 1`.
    pub fn step(&mut self, observation: &[T]) -> Result<&StatisticFrame<T>> {
        let streams = self.setup.streams();
        if observation.len() != streams {
            return Err(Error::Dimension {
                expected: streams,
                got: observation.len(),
            });
        }
        if let Some(i) = observation.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                time: self.n + 1,
                stream: i,
            });
        }
        self.n += 1;
        let n = self.n;
        let new_k = n - 1;
        let log_prior_new = self.setup.prior.log_merged_weight(new_k);
        let mut all_mass_gone = true;

        for (i, table) in self.tables.iter_mut().enumerate() {
            let model = &self.setup.models[i];
            let mixing = &self.setup.mixing[i];

            table.recent.push_back(observation[i]);
            while table.recent.len() > model.memory() + 1 {
                table.recent.pop_front();
            }
            let recent = table.recent.make_contiguous();
            model.llr_increments(n, recent, mixing.grid(), &mut table.increments)?;

            // open row k = n - 1, reusing an evicted row's buffer when possible
            let mut fresh = match self.window {
                Some(l) if table.rows.len() >= l => {
                    let old = table.rows.pop_front().expect("window holds at least one row");
                    if i == 0 {
                        self.evicted_log_mass = log_add_exp(self.evicted_log_mass, old.log_prior);
                    }
                    old
                }
                _ => Row {
                    k: 0,
                    log_prior: T::zero(),
                    values: Vec::with_capacity(mixing.len()),
                },
            };
            fresh.k = new_k;
            fresh.log_prior = log_prior_new;
            fresh.values.clear();
            fresh.values.resize(mixing.len(), T::zero());
            table.rows.push_back(fresh);
            while let Some(l) = self.window {
                if table.rows.len() <= l {
                    break;
                }
                let old = table.rows.pop_front().expect("nonempty");
                if i == 0 {
                    self.evicted_log_mass = log_add_exp(self.evicted_log_mass, old.log_prior);
                }
            }

            let log_w = mixing.log_weights();
            let mut mixture = LogSumExp::new();
            let mut sup = LogSumExp::new();
            for row in table.rows.iter_mut() {
                let mut row_max = T::neg_infinity();
                for ((v, &inc), &lw) in row.values.iter_mut().zip(&table.increments).zip(log_w) {
                    *v = *v + inc;
                    if lw > T::neg_infinity() {
                        mixture.push(row.log_prior + lw + *v);
                        row_max = row_max.max(*v);
                    }
                }
                sup.push(row.log_prior + row_max);
                if row.log_prior > T::neg_infinity() {
                    all_mass_gone = false;
                }
            }
            self.frame.log_mixture[i] = mixture.value();
            self.frame.log_sup[i] = sup.value();
        }

        let frame = &mut self.frame;
        frame.n = n;
        frame.log_survivor = self.setup.prior.log_survivor(n);
        frame.degraded = all_mass_gone;
        for i in 0..streams {
            let mix = frame.log_mixture[i];
            frame.log_ratio[i][0] = mix - frame.log_survivor;
            for j in 0..streams {
                frame.log_ratio[i][j + 1] = if i == j { T::nan() } else { mix - frame.log_sup[j] };
            }
        }
        Ok(&self.frame)
    }

    /// Current `log LR_g(k, n)` entries of stream `i`, oldest `k` first, as
    /// `(k, values)` pairs.
    pub fn table(&self, i: usize) -> impl Iterator<Item = (usize, &[T])> {
        self.tables[i].rows.iter().map(|r| (r.k, r.values.as_slice()))
    }
}

fn check_window(window: Option<usize>) -> Result<()> {
    match window {
        Some(0) => domain("window length must be at least 1"),
        _ => Ok(()),
    }
}
