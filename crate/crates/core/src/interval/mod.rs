//! Multi-step interval forecasts.
//!
//! Observations are known on the learning steps `1..T-1` (`L = T - 1` of
//! them). A scenario is any continuation `z_T, ..., z_{T+K}` inside the
//! [`ScenarioCone`]. For each offset `k` the emitted interval bounds the
//! aggregated forecast `z_hat_{T+k}` obtained by running the one-step
//! forecaster on `y_1..y_{T-1}, z_T..z_{T+k-1}`, over every scenario. Ridge
//! bounds are exact, EWA bounds are a guaranteed superset.
//!
//! The raw hull is then enlarged to a half-width of at least `sigma_max`
//! around its center, and finally shifted by the initial mismatch.

mod cone;
mod forecast;
mod noise;

pub use cone::{build_cone, Clamp, ConeSlope, ScenarioCone, CONE_WINDOW};
pub use forecast::{
    enlarge, ewa_interval_forecast, ewa_raw_bounds, ewa_weight_box, initial_mismatch, ridge_interval_forecast,
    ridge_raw_bounds, IntervalSeries, IntervalStep, RawBounds,
};
pub use noise::{estimate_noise, filter_models, ModelFilter, NoiseEstimate, DEFAULT_STABILITY_THRESHOLD, STABILITY_WINDOW};
