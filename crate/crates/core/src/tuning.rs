//! Online hyperparameter selection by grid search on past cumulative loss.
//!
//! Every grid point is a complete fixed-parameter run. At each step the
//! tuner forecasts with the point whose own cumulative loss on past steps is
//! smallest (ties go to the smallest parameter value), then advances every
//! point with the revealed observation.
//!
//! Ridge and Lasso points share one set of sufficient statistics; Ridge
//! additionally shares one eigendecomposition per step across the grid.

use crate::aggregators::{aggregate, lasso_solutions, softmin_weights, EwaState, OnlineAggregator, RidgeSystem, SufficientStats};
use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::types::{Algorithm, WeightVector};

/// Candidate hyperparameter values, in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    points: Vec<f64>,
}

impl HyperGrid {
    /// `count` points equally spaced in log scale over `[lo, hi]`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo > 0.0 && hi.is_finite() && lo.is_finite()) || count == 0 {
            return Err(Error::invalid("grid", format!("{lo}:{hi}:{count}")));
        }
        if count == 1 {
            return if lo == hi {
                Ok(HyperGrid { points: vec![lo] })
            } else {
                Err(Error::invalid("grid", "a single-point grid needs lo == hi"))
            };
        }
        if !(hi > lo) {
            return Err(Error::invalid("grid", format!("hi {hi} must exceed lo {lo}")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|i| (a + step * i as f64).exp()).collect();
        points[0] = lo;
        points[count - 1] = hi;
        Ok(HyperGrid { points })
    }

    pub fn single(value: f64) -> Result<Self> {
        Self::log_spaced(value, value, 1)
    }

    /// Arbitrary positive points, no spacing requirement. Sorted on input.
    pub fn from_points(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("grid", format!("{points:?}")));
        }
        points.sort_by(f64::total_cmp);
        Ok(HyperGrid { points })
    }

    /// Default grids: EWA 300 points on `[1e-20, 1e10]`, Lasso 100 points on
    /// `[1e-20, 1e10]`, Ridge 100 points on `[1e-30, 1e30]`.
    pub fn default_for(algorithm: Algorithm) -> Result<Self> {
        match algorithm {
            Algorithm::Ewa => Self::log_spaced(1e-20, 1e10, 300),
            Algorithm::Lasso => Self::log_spaced(1e-20, 1e10, 100),
            Algorithm::Ridge => Self::log_spaced(1e-30, 1e30, 100),
            Algorithm::Uniform => Self::single(1.0),
        }
    }

    /// Every `stride`-th point, always keeping both ends.
    pub fn subsample(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let last = self.points.len() - 1;
        let mut points: Vec<f64> = self.points.iter().copied().step_by(stride).collect();
        if last % stride != 0 {
            points.push(self.points[last]);
        }
        HyperGrid { points }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Members {
    Ewa(Vec<EwaState>),
    Ridge(SufficientStats),
    /// Statistics, raw history, and the previous step's solutions.
    Lasso(SufficientStats, Vec<(f64, Vec<f64>)>, Vec<Vec<f64>>),
    Uniform,
}

/// Outcome of [`Tuner::select_and_forecast`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub hyperparameter: f64,
    pub weights: WeightVector,
    pub forecast: f64,
}

/// A bank of fixed-parameter runs, one per grid point.
#[derive(Debug, Clone)]
pub struct Tuner {
    algorithm: Algorithm,
    grid: HyperGrid,
    n_models: usize,
    members: Members,
    losses: Vec<f64>,
    /// Per-point weights for the current step, filled by `select_and_forecast`.
    pending: Option<Vec<Vec<f64>>>,
    steps: usize,
    parallelism: Parallelism,
}

impl Tuner {
    pub fn new(algorithm: Algorithm, grid: HyperGrid, n_models: usize) -> Result<Self> {
        if n_models == 0 {
            return Err(Error::invalid("ensemble", "need at least one model"));
        }
        let members = match algorithm {
            Algorithm::Ewa => Members::Ewa(
                grid.points()
                    .iter()
                    .map(|&eta| EwaState::new(eta, n_models))
                    .collect::<Result<_>>()?,
            ),
            Algorithm::Ridge => Members::Ridge(SufficientStats::new(n_models)),
            Algorithm::Lasso => Members::Lasso(SufficientStats::new(n_models), Vec::new(), Vec::new()),
            Algorithm::Uniform => Members::Uniform,
        };
        Ok(Tuner {
            algorithm,
            losses: vec![0.0; grid.len()],
            grid,
            n_models,
            members,
            pending: None,
            steps: 0,
            parallelism: Parallelism::default(),
        })
    }

    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn grid(&self) -> &HyperGrid {
        &self.grid
    }

    /// `L_{T-1}` of every grid point.
    pub fn cumulative_losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn point_weights(&mut self) -> Result<Vec<Vec<f64>>> {
        let n = self.n_models;
        let points = self.grid.points();
        let par = self.parallelism;
        if self.steps == 0 {
            return Ok(vec![vec![1.0 / n as f64; n]; points.len()]);
        }
        match &mut self.members {
            Members::Ewa(states) => Ok(states.iter().map(|s| softmin_weights(s.eta(), s.cumulative_losses())).collect()),
            Members::Ridge(stats) => {
                let system = RidgeSystem::new(stats).map_err(|_| Error::SolveFailure { step: self.steps + 1 })?;
                par.map(points, |&lambda| system.weights(lambda))
                    .into_iter()
                    .collect::<Result<Vec<_>>>()
                    .map_err(|_| Error::SolveFailure { step: self.steps + 1 })
            }
            Members::Lasso(stats, history, previous) => {
                let starts = (!previous.is_empty()).then_some(previous.as_slice());
                let weights: Vec<Vec<f64>> = lasso_solutions(stats, history, points, starts, par)?.into_iter().map(|sol| sol.weights).collect();
                previous.clone_from(&weights);
                Ok(weights)
            }
            Members::Uniform => Ok(vec![vec![1.0 / n as f64; n]; points.len()]),
        }
    }

    /// Forecast for the current step: the weights of the grid point with the
    /// smallest past cumulative loss.
    pub fn select_and_forecast(&mut self, column: &[f64]) -> Result<Selection> {
        if column.len() != self.n_models {
            return Err(Error::invalid("ensemble column", format!("{} entries for {} models", column.len(), self.n_models)));
        }
        if self.pending.is_none() {
            self.pending = Some(self.point_weights()?);
        }
        let index = argmin_smallest(&self.losses, self.grid.points());
        let weights = self.pending.as_ref().expect("filled above")[index].clone();
        let forecast = aggregate(&weights, column);
        let hyperparameter = self.grid.points()[index];
        let weights = WeightVector::new(weights, self.algorithm.flavor(), self.algorithm, hyperparameter, self.steps)?;
        Ok(Selection {
            index,
            hyperparameter,
            weights,
            forecast,
        })
    }

    /// Per-point forecasts for the current step (computing the weights if
    /// needed).
    pub fn point_forecasts(&mut self, column: &[f64]) -> Result<Vec<f64>> {
        if self.pending.is_none() {
            self.pending = Some(self.point_weights()?);
        }
        Ok(self.pending.as_ref().expect("filled above").iter().map(|w| aggregate(w, column)).collect())
    }

    /// Reveals `y` for the current step: charges every grid point the loss of
    /// its own forecast, then advances its state.
    pub fn update(&mut self, y: f64, column: &[f64]) -> Result<()> {
        let forecasts = self.point_forecasts(column)?;
        for (l, f) in self.losses.iter_mut().zip(&forecasts) {
            *l += (f - y).powi(2);
        }
        match &mut self.members {
            Members::Ewa(states) => self.parallelism.for_each_mut(states, |s| s.update(y, column)),
            Members::Ridge(stats) => stats.update(y, column),
            Members::Lasso(stats, history, _) => {
                stats.update(y, column);
                history.push((y, column.to_vec()));
            }
            Members::Uniform => {}
        }
        self.pending = None;
        self.steps += 1;
        Ok(())
    }
}

/// Index of the smallest loss; ties go to the smallest grid value, then the
/// lowest index.
pub fn argmin_smallest(losses: &[f64], points: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..losses.len() {
        let better = losses[i] < losses[best] || (losses[i] == losses[best] && points[i] < points[best]);
        if better {
            best = i;
        }
    }
    best
}
