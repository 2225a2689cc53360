//! Mixture-based joint change detection and identification across multiple
//! data streams.
//!
//! The math is generic over [`Scalar`]; the aliases below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod engine;
pub mod error;
pub mod models;
pub mod montecarlo;
pub mod prior;
pub mod rule;
pub mod scalar;
pub mod theory;

pub use engine::{Competitor, Spacing};
pub use error::{Error, Result};
pub use montecarlo::{Experiment, ExperimentPlan, RiskReport};
pub use rule::Outcome;
pub use scalar::Scalar;

pub type Prior = prior::ChangePointPrior<f64>;
pub type MixingMeasure = engine::MixingMeasure<f64>;
pub type DetectorSetup = engine::DetectorSetup<f64>;
pub type DetectorState = engine::DetectorState<f64>;
pub type StatisticFrame = engine::StatisticFrame<f64>;
pub type ThresholdMatrix = rule::ThresholdMatrix<f64>;
pub type Detector = rule::Detector<f64>;
pub type Verdict = rule::Verdict<f64>;
pub type SharedModel = models::SharedModel<f64>;
pub type ThetaRange = models::ThetaRange<f64>;
pub type TrialPath = models::TrialPath<f64>;
pub type IidGaussian = models::IidGaussian<f64>;
pub type ArGaussian = models::ArGaussian<f64>;
pub type Signal = models::Signal<f64>;
