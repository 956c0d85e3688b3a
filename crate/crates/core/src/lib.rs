//! Sequential aggregation of ensemble forecasts.
//!
//! One-step-ahead point forecasts combine the `N` member forecasts with
//! weights learned online (exponentially weighted average, ridge or Lasso
//! regression), with the hyperparameter tuned on past cumulative loss.
//! Multi-step forecasts run the same aggregation over a cone of plausible
//! continuations and report the hull of the resulting forecasts.

pub mod aggregators;
pub mod error;
pub mod eval;
pub mod interval;
pub mod io;
pub mod par;
pub mod synth;
pub mod tuning;
pub mod types;

pub use error::{Error, Result};
pub use par::Parallelism;
pub use types::{
    validate_pair, AggregationTrace, Algorithm, EnsembleMatrix, ObservationSeries, PropertyKind, SeriesId,
    StepRecord, WeightFlavor, WeightVector,
};
