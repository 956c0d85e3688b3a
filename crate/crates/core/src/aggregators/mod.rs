//! One-step-ahead point aggregation.
//!
//! Each algorithm keeps a small online state. `weights()` returns the weights
//! for the next step using only what `update()` has revealed so far, and the
//! aggregated forecast is the dot product of those weights with the current
//! ensemble column.

mod ewa;
mod lasso;
mod ridge;
mod stats;

pub use ewa::{softmin_weights, EwaState};
pub use lasso::{
    coordinate_descent, lasso_kkt_residual, lasso_objective, lasso_solutions, LassoSolution, LassoState, LASSO_MAX_SWEEPS,
};
pub use ridge::{RidgeState, RidgeSystem};
pub use stats::SufficientStats;

use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::tuning::{HyperGrid, Tuner};
use crate::types::{validate_pair, Algorithm, AggregationTrace, EnsembleMatrix, ObservationSeries, StepRecord, WeightVector};

/// Common interface of the fixed-hyperparameter forecasters.
pub trait OnlineAggregator {
    fn algorithm(&self) -> Algorithm;
    fn hyperparameter(&self) -> f64;
    fn n_models(&self) -> usize;
    fn steps_seen(&self) -> usize;

    /// Weights for step `steps_seen()`, computed from the revealed past only.
    fn weights(&mut self) -> Result<WeightVector>;

    /// Reveals the observation `y` and ensemble column of the current step.
    fn update(&mut self, y: f64, column: &[f64]);
}

/// `sum_j w_j m_j`.
pub fn aggregate(weights: &[f64], column: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), column.len());
    weights.iter().zip(column).map(|(w, m)| w * m).sum()
}

/// Constant uniform weights; the baseline every other forecaster starts from.
#[derive(Debug, Clone)]
pub struct UniformState {
    n_models: usize,
    steps_seen: usize,
}

impl UniformState {
    pub fn new(n_models: usize) -> Self {
        UniformState { n_models, steps_seen: 0 }
    }
}

impl OnlineAggregator for UniformState {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Uniform
    }

    fn hyperparameter(&self) -> f64 {
        0.0
    }

    fn n_models(&self) -> usize {
        self.n_models
    }

    fn steps_seen(&self) -> usize {
        self.steps_seen
    }

    fn weights(&mut self) -> Result<WeightVector> {
        Ok(WeightVector::uniform(self.n_models, Algorithm::Uniform, 0.0, self.steps_seen))
    }

    fn update(&mut self, _y: f64, _column: &[f64]) {
        self.steps_seen += 1;
    }
}

/// How the hyperparameter of a run is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperMode {
    Fixed(f64),
    Adaptive(HyperGrid),
}

/// Fixed-hyperparameter forecaster for `algorithm`.
pub fn fixed_aggregator(algorithm: Algorithm, hyperparameter: f64, n_models: usize) -> Result<Box<dyn OnlineAggregator + Send>> {
    Ok(match algorithm {
        Algorithm::Ewa => Box::new(EwaState::new(hyperparameter, n_models)?),
        Algorithm::Ridge => Box::new(RidgeState::new(hyperparameter, n_models)?),
        Algorithm::Lasso => Box::new(LassoState::new(hyperparameter, n_models)?),
        Algorithm::Uniform => Box::new(UniformState::new(n_models)),
    })
}

/// Runs the sequential protocol over every step of the pair: weights from
/// strictly earlier data, forecast, then reveal `y_t`.
pub fn run_online(
    obs: &ObservationSeries,
    ens: &EnsembleMatrix,
    algorithm: Algorithm,
    mode: &HyperMode,
    parallelism: Parallelism,
) -> Result<AggregationTrace> {
    validate_pair(obs, ens)?;
    let grid = match mode {
        HyperMode::Fixed(value) => HyperGrid::single(*value)?,
        HyperMode::Adaptive(grid) => grid.clone(),
    };
    let mut tuner = Tuner::new(algorithm, grid, ens.n_models())?.with_parallelism(parallelism);
    run_with_tuner(obs, ens, &mut tuner, 0..obs.len())
}

/// Drives `tuner` over steps `range` (0-based) of a validated pair.
pub(crate) fn run_with_tuner(
    obs: &ObservationSeries,
    ens: &EnsembleMatrix,
    tuner: &mut Tuner,
    range: std::ops::Range<usize>,
) -> Result<AggregationTrace> {
    let mut trace = AggregationTrace::new();
    for t in range {
        let column = ens.column(t);
        let choice = tuner.select_and_forecast(column).map_err(|e| e.at_step(t + 1))?;
        let y = obs.values()[t];
        let loss = (choice.forecast - y).powi(2);
        tuner.update(y, column).map_err(|e| e.at_step(t + 1))?;
        trace.push(StepRecord {
            step: t,
            weights: choice.weights,
            forecast: choice.forecast,
            observation: y,
            loss,
            hyperparameter: choice.hyperparameter,
        })?;
    }
    Ok(trace)
}

/// Runs one fixed forecaster by hand, without the tuner. Returns the
/// per-step forecasts.
pub fn run_fixed(aggregator: &mut dyn OnlineAggregator, obs: &[f64], ens: &EnsembleMatrix) -> Result<Vec<f64>> {
    if obs.len() > ens.n_steps() {
        return Err(Error::LengthMismatch {
            observations: obs.len(),
            ensemble: ens.n_steps(),
        });
    }
    let mut out = Vec::with_capacity(obs.len());
    for (t, &y) in obs.iter().enumerate() {
        let column = ens.column(t);
        let w = aggregator.weights().map_err(|e| e.at_step(t + 1))?;
        out.push(aggregate(w.weights(), column));
        aggregator.update(y, column);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{PropertyKind, SeriesId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn id() -> SeriesId {
        SeriesId::new(PropertyKind::Other, "W", "u").unwrap()
    }

    fn pair(obs: Vec<f64>, trajs: &[Vec<f64>]) -> (ObservationSeries, EnsembleMatrix) {
        let o = ObservationSeries::on_unit_grid(id(), obs).unwrap();
        let e = EnsembleMatrix::from_trajectories(id(), trajs, o.step_times().to_vec()).unwrap();
        (o, e)
    }

    fn random_pair(rng: &mut ChaCha8Rng, n: usize, t: usize) -> (ObservationSeries, EnsembleMatrix) {
        let obs: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let trajs: Vec<Vec<f64>> = (0..n).map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        pair(obs, &trajs)
    }

    #[test]
    fn aggregate_is_a_dot_product() {
        assert_eq!(aggregate(&[0.5, 0.5], &[2.0, 4.0]), 3.0);
        assert_eq!(aggregate(&[1.0, 0.0], &[7.0, 9.0]), 7.0);
        assert_eq!(aggregate(&[0.5, -0.5], &[10.0, 4.0]), 3.0);
    }

    #[test]
    fn perfect_expert_gives_zero_loss_everywhere() {
        let y: Vec<f64> = (0..30).map(|t| (t as f64 * 0.3).sin() * 10.0 + 50.0).collect();
        let (o, e) = pair(y.clone(), &[y.clone(), y.clone(), y]);
        let trace = run_online(&o, &e, Algorithm::Ewa, &HyperMode::Fixed(0.5), Parallelism::Sequential).unwrap();
        // All forecasts coincide; only summation rounding remains.
        assert!(trace.records().iter().all(|r| r.loss <= (1e-13 * r.observation).powi(2)));
    }

    #[test]
    fn ewa_weight_on_correct_constant_model_increases() {
        let (o, e) = pair(vec![3.0; 40], &[vec![3.0; 40], vec![4.0; 40]]);
        let trace = run_online(&o, &e, Algorithm::Ewa, &HyperMode::Fixed(0.1), Parallelism::Sequential).unwrap();
        let w: Vec<f64> = trace.records().iter().map(|r| r.weights.weights()[0]).collect();
        assert_eq!(w[0], 0.5);
        assert!(w.windows(2).all(|p| p[1] > p[0]), "{w:?}");
    }

    #[test]
    fn forecasts_are_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (o, e) = random_pair(&mut rng, 4, 25);
        for alg in [Algorithm::Ewa, Algorithm::Ridge, Algorithm::Lasso] {
            let grid = HyperGrid::log_spaced(1e-3, 1e2, 4).unwrap();
            let base = run_online(&o, &e, alg, &HyperMode::Adaptive(grid.clone()), Parallelism::Sequential).unwrap();
            for t in [0, 5, 24] {
                let mutated = o.with_value(t, o.values()[t] + 123.0).unwrap();
                let other = run_online(&mutated, &e, alg, &HyperMode::Adaptive(grid.clone()), Parallelism::Sequential).unwrap();
                assert_eq!(base.forecasts()[..=t], other.forecasts()[..=t], "{alg} step {t}");
            }
        }
    }

    #[test]
    fn trace_matches_manual_fixed_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (o, e) = random_pair(&mut rng, 3, 20);
        for alg in [Algorithm::Ewa, Algorithm::Ridge, Algorithm::Lasso, Algorithm::Uniform] {
            let mut agg = fixed_aggregator(alg, 0.7, 3).unwrap();
            let manual = run_fixed(agg.as_mut(), o.values(), &e).unwrap();
            let trace = run_online(&o, &e, alg, &HyperMode::Fixed(0.7), Parallelism::Parallel).unwrap();
            assert_eq!(trace.forecasts(), manual);
            assert!(trace.cumulative_losses().windows(2).all(|p| p[1] >= p[0]));
            let total: f64 = trace.records().iter().map(|r| r.loss).sum();
            assert!((total - trace.cumulative_loss()).abs() <= 1e-12 * total.max(1.0));
        }
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let (o, _) = pair(vec![1.0; 5], &[vec![1.0; 5]]);
        let (_, e) = pair(vec![1.0; 4], &[vec![1.0; 4]]);
        assert!(run_online(&o, &e, Algorithm::Ewa, &HyperMode::Fixed(1.0), Parallelism::Sequential).is_err());
    }
}
