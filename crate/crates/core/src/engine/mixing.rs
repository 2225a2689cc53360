use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::models::ThetaRange;
use crate::scalar::Scalar;

/// Grid spacing for generated mixing measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// Discretized mixing measure `W` over a stream's parameter space.
///
/// Points with zero weight are kept on the grid but take part in neither the
/// mixture nor the sup statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingMeasure<T> {
    grid: Vec<T>,
    weights: Vec<T>,
    #[serde(skip)]
    log_weights: Vec<T>,
}

impl<T: Scalar> MixingMeasure<T> {
    /// Builds a measure from a strictly increasing grid and nonnegative
    /// weights; the weights are rescaled to sum to one.
    pub fn new(grid: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if grid.is_empty() || grid.len() != weights.len() {
            return domain(format!(
                "mixing grid and weights must be nonempty and of equal length ({} vs {})",
                grid.len(),
                weights.len()
            ));
        }
        if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return domain("mixing grid must be finite and strictly increasing");
        }
        if weights.iter().any(|w| !(*w >= T::zero() && w.is_finite())) {
            return domain("mixing weights must be finite and nonnegative");
        }
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return domain("mixing weights must have positive total");
        }
        let weights: Vec<T> = weights.into_iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            grid,
            weights,
            log_weights,
        })
    }

    /// A point mass.
    pub fn single(theta: T) -> Result<Self> {
        Self::new(vec![theta], vec![T::one()])
    }

    /// `count` points spanning `range` with equal weights.
    pub fn uniform(range: ThetaRange<T>, count: usize, spacing: Spacing) -> Result<Self> {
        let grid = span(range, count, spacing)?;
        let weights = vec![T::one(); grid.len()];
        Self::new(grid, weights)
    }

    /// Discretization of the half-normal `W(theta) = F(theta / scale)`: each
    /// grid point receives the normal mass of its cell, cells split at the
    /// midpoints and clipped to `range`.
    pub fn gaussian_conjugate(range: ThetaRange<T>, count: usize, spacing: Spacing, scale: T) -> Result<Self> {
        if !(scale > T::zero() && scale.is_finite()) {
            return domain(format!("conjugate mixing scale must be positive, got {scale}"));
        }
        let grid = span(range, count, spacing)?;
        let mut edges = Vec::with_capacity(grid.len() + 1);
        edges.push(range.min);
        edges.extend(grid.windows(2).map(|w| (w[0] + w[1]) / T::of(2.0)));
        edges.push(range.max);
        let cdf = |x: T| {
            let z = (x / scale).to_f64_lossy();
            T::of(0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2))
        };
        let mut weights: Vec<T> = edges.windows(2).map(|e| cdf(e[1]) - cdf(e[0])).collect();
        if grid.len() == 1 {
            weights = vec![T::one()];
        }
        Self::new(grid, weights)
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Largest distance from a point of `range` to the nearest grid point
    /// carrying positive weight. Every `kappa`-neighborhood inside the range
    /// holds mass once `kappa` exceeds this gap.
    pub fn support_gap(&self, range: ThetaRange<T>) -> T {
        let support: Vec<T> = self
            .grid
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > T::zero())
            .map(|(g, _)| *g)
            .collect();
        let first = support[0];
        let last = support[support.len() - 1];
        let mut gap = (first - range.min).max(range.max - last).max(T::zero());
        for w in support.windows(2) {
            gap = gap.max((w[1] - w[0]) / T::of(2.0));
        }
        gap
    }
}

fn span<T: Scalar>(range: ThetaRange<T>, count: usize, spacing: Spacing) -> Result<Vec<T>> {
    if count == 0 {
        return domain("mixing grid needs at least one point");
    }
    if count == 1 {
        return Ok(vec![range.min]);
    }
    if range.min == range.max {
        return domain("a multi-point grid needs min < max");
    }
    let last = T::of_usize(count - 1);
    let grid = (0..count)
        .map(|g| {
            let u = T::of_usize(g) / last;
            match spacing {
                Spacing::Linear => range.min + (range.max - range.min) * u,
                Spacing::Log => (range.min.ln() + (range.max.ln() - range.min.ln()) * u).exp(),
            }
        })
        .collect::<Vec<_>>();
    // pin the end points against rounding
    let mut grid = grid;
    grid[0] = range.min;
    grid[count - 1] = range.max;
    Ok(grid)
}
