//! Domain types shared by every module: series identity, observations,
//! ensemble forecasts, weight vectors and the per-step aggregation trace.
//!
//! Steps are an abstract integer grid. Internally they are 0-based
//! (`t = 0..len`); everything written to files or reported in errors uses
//! the 1-based step number `t + 1`. `step_times` is carried as metadata only.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tolerance on `sum(w) == 1` for convex weights.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PropertyKind {
    BottomholePressure,
    OilRate,
    WaterRate,
    Other,
}

impl PropertyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PropertyKind::BottomholePressure => "bottomhole_pressure",
            PropertyKind::OilRate => "oil_rate",
            PropertyKind::WaterRate => "water_rate",
            PropertyKind::Other => "other",
        }
    }
}

impl fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PropertyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bottomhole_pressure" | "bhp" => Ok(PropertyKind::BottomholePressure),
            "oil_rate" | "qo" => Ok(PropertyKind::OilRate),
            "water_rate" | "qw" => Ok(PropertyKind::WaterRate),
            "other" => Ok(PropertyKind::Other),
            _ => Err(Error::invalid("property kind", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeriesId {
    pub kind: PropertyKind,
    pub well: String,
    pub units: String,
}

impl SeriesId {
    pub fn new(kind: PropertyKind, well: impl Into<String>, units: impl Into<String>) -> Result<Self> {
        let well = well.into();
        let units = units.into();
        if well.trim().is_empty() {
            return Err(Error::invalid("series id", "well label is empty"));
        }
        if units.trim().is_empty() {
            return Err(Error::invalid("series id", "units are empty"));
        }
        Ok(SeriesId { kind, well, units })
    }

    /// File-system friendly name, e.g. `BHP_P3` or `QO_P19`.
    pub fn name(&self) -> String {
        let prefix = match self.kind {
            PropertyKind::BottomholePressure => "BHP",
            PropertyKind::OilRate => "QO",
            PropertyKind::WaterRate => "QW",
            PropertyKind::Other => "X",
        };
        format!("{prefix}_{}", self.well)
    }
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.name(), self.units)
    }
}

/// Reference measurements `y_t` of one property at one well.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    id: SeriesId,
    values: Vec<f64>,
    step_times: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(id: SeriesId, values: Vec<f64>, step_times: Vec<f64>) -> Result<Self> {
        if values.len() != step_times.len() {
            return Err(Error::LengthMismatch {
                observations: values.len(),
                ensemble: step_times.len(),
            });
        }
        if values.len() < 2 {
            return Err(Error::invalid("observation series", "need at least 2 steps"));
        }
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                model: None,
                step: t + 1,
            });
        }
        if let Some(t) = step_times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "observation series",
                format!("step times not strictly increasing at step {}", t + 2),
            ));
        }
        Ok(ObservationSeries {
            id,
            values,
            step_times,
        })
    }

    /// Series on the default monthly grid (`time = 30 * step` days).
    pub fn on_unit_grid(id: SeriesId, values: Vec<f64>) -> Result<Self> {
        let times = default_step_times(values.len());
        Self::new(id, values, times)
    }

    pub fn id(&self) -> &SeriesId {
        &self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn step_times(&self) -> &[f64] {
        &self.step_times
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with `values[t]` replaced. Used by causality checks.
    pub fn with_value(&self, t: usize, value: f64) -> Result<Self> {
        let mut values = self.values.clone();
        values[t] = value;
        Self::new(self.id.clone(), values, self.step_times.clone())
    }
}

pub(crate) fn default_step_times(len: usize) -> Vec<f64> {
    (1..=len).map(|t| 30.0 * t as f64).collect()
}

/// Forecast trajectories `m_{j,t}` of the `N` ensemble members.
///
/// Stored step-major so that the column `m_{., t}` used by every aggregation
/// step is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMatrix {
    id: SeriesId,
    n_models: usize,
    n_steps: usize,
    columns: Vec<f64>,
    step_times: Vec<f64>,
}

impl EnsembleMatrix {
    /// Builds the matrix from one trajectory per model.
    pub fn from_trajectories(id: SeriesId, trajectories: &[Vec<f64>], step_times: Vec<f64>) -> Result<Self> {
        let n_models = trajectories.len();
        if n_models == 0 {
            return Err(Error::invalid("ensemble", "need at least one model"));
        }
        let n_steps = step_times.len();
        for (j, traj) in trajectories.iter().enumerate() {
            if traj.len() != n_steps {
                return Err(Error::invalid(
                    "ensemble",
                    format!("model {} has {} steps, expected {n_steps}", j + 1, traj.len()),
                ));
            }
        }
        let mut columns = Vec::with_capacity(n_models * n_steps);
        for t in 0..n_steps {
            for traj in trajectories {
                columns.push(traj[t]);
            }
        }
        Self::from_columns(id, n_models, columns, step_times)
    }

    /// `columns` holds `n_steps` consecutive columns of length `n_models`.
    pub fn from_columns(id: SeriesId, n_models: usize, columns: Vec<f64>, step_times: Vec<f64>) -> Result<Self> {
        if n_models == 0 {
            return Err(Error::invalid("ensemble", "need at least one model"));
        }
        let n_steps = step_times.len();
        if columns.len() != n_models * n_steps {
            return Err(Error::invalid(
                "ensemble",
                format!("{} values for {n_models} models x {n_steps} steps", columns.len()),
            ));
        }
        if let Some(i) = columns.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                model: Some(i % n_models + 1),
                step: i / n_models + 1,
            });
        }
        Ok(EnsembleMatrix {
            id,
            n_models,
            n_steps,
            columns,
            step_times,
        })
    }

    pub fn id(&self) -> &SeriesId {
        &self.id
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step_times(&self) -> &[f64] {
        &self.step_times
    }

    /// Forecasts of all models at step `t` (0-based).
    pub fn column(&self, t: usize) -> &[f64] {
        &self.columns[t * self.n_models..(t + 1) * self.n_models]
    }

    pub fn value(&self, model: usize, t: usize) -> f64 {
        self.columns[t * self.n_models + model]
    }

    pub fn trajectory(&self, model: usize) -> Vec<f64> {
        (0..self.n_steps).map(|t| self.value(model, t)).collect()
    }

    /// Ensemble restricted to the given models, in the given order.
    pub fn select_models(&self, models: &[usize]) -> Result<Self> {
        let mut columns = Vec::with_capacity(models.len() * self.n_steps);
        for t in 0..self.n_steps {
            let col = self.column(t);
            columns.extend(models.iter().map(|&j| col[j]));
        }
        Self::from_columns(self.id.clone(), models.len(), columns, self.step_times.clone())
    }

    /// Ensemble restricted to steps `range` (0-based, half-open).
    pub fn slice_steps(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let columns = self.columns[range.start * self.n_models..range.end * self.n_models].to_vec();
        Self::from_columns(self.id.clone(), self.n_models, columns, self.step_times[range].to_vec())
    }
}

/// Checks that an observation series and an ensemble describe the same
/// series on the same step grid, reporting the first violation.
pub fn validate_pair(obs: &ObservationSeries, ens: &EnsembleMatrix) -> Result<()> {
    if obs.len() != ens.n_steps() {
        return Err(Error::LengthMismatch {
            observations: obs.len(),
            ensemble: ens.n_steps(),
        });
    }
    if obs.id() != ens.id() {
        return Err(Error::IdMismatch {
            observations: obs.id().to_string(),
            ensemble: ens.id().to_string(),
        });
    }
    if let Some(t) = obs.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            model: None,
            step: t + 1,
        });
    }
    for t in 0..ens.n_steps() {
        if let Some(j) = ens.column(t).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                model: Some(j + 1),
                step: t + 1,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightFlavor {
    Convex,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ewa,
    Ridge,
    Lasso,
    Uniform,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ewa => "ewa",
            Algorithm::Ridge => "ridge",
            Algorithm::Lasso => "lasso",
            Algorithm::Uniform => "uniform",
        }
    }

    pub fn flavor(self) -> WeightFlavor {
        match self {
            Algorithm::Ewa | Algorithm::Uniform => WeightFlavor::Convex,
            Algorithm::Ridge | Algorithm::Lasso => WeightFlavor::Linear,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ewa" => Ok(Algorithm::Ewa),
            "ridge" => Ok(Algorithm::Ridge),
            "lasso" => Ok(Algorithm::Lasso),
            "uniform" => Ok(Algorithm::Uniform),
            _ => Err(Error::invalid("algorithm", s)),
        }
    }
}

/// Weights `w_{., t}` picked at one step, with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    flavor: WeightFlavor,
    algorithm: Algorithm,
    hyperparameter: f64,
    step: usize,
}

impl WeightVector {
    pub fn new(
        weights: Vec<f64>,
        flavor: WeightFlavor,
        algorithm: Algorithm,
        hyperparameter: f64,
        step: usize,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("weight vector", "empty"));
        }
        if !(hyperparameter >= 0.0) {
            return Err(Error::invalid("weight vector", format!("hyperparameter {hyperparameter}")));
        }
        if let Some(j) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFiniteValue {
                model: Some(j + 1),
                step: step + 1,
            });
        }
        if flavor == WeightFlavor::Convex && !is_on_simplex(&weights) {
            return Err(Error::invalid(
                "weight vector",
                format!("convex weights off the simplex (sum {})", weights.iter().sum::<f64>()),
            ));
        }
        Ok(WeightVector {
            weights,
            flavor,
            algorithm,
            hyperparameter,
            step,
        })
    }

    pub fn uniform(n: usize, algorithm: Algorithm, hyperparameter: f64, step: usize) -> Self {
        WeightVector {
            weights: vec![1.0 / n as f64; n],
            flavor: algorithm.flavor(),
            algorithm,
            hyperparameter,
            step,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn flavor(&self) -> WeightFlavor {
        self.flavor
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn hyperparameter(&self) -> f64 {
        self.hyperparameter
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Nonnegative with unit sum (within [`SIMPLEX_TOLERANCE`]).
pub fn is_on_simplex(weights: &[f64]) -> bool {
    weights.iter().all(|&w| w >= 0.0) && (weights.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub weights: WeightVector,
    pub forecast: f64,
    pub observation: f64,
    pub loss: f64,
    pub hyperparameter: f64,
}

/// Per-step output of a sequential run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregationTrace {
    records: Vec<StepRecord>,
    cumulative: Vec<f64>,
}

impl AggregationTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        let expected = self.records.last().map_or(record.step, |r| r.step + 1);
        if record.step != expected {
            return Err(Error::NonContiguousSteps(expected + 1));
        }
        if !(record.loss >= 0.0) {
            return Err(Error::invalid("trace", format!("loss {} at step {}", record.loss, record.step + 1)));
        }
        let total = self.cumulative_loss() + record.loss;
        self.cumulative.push(total);
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn forecasts(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.forecast).collect()
    }

    pub fn cumulative_loss(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Running sums of per-step losses.
    pub fn cumulative_losses(&self) -> &[f64] {
        &self.cumulative
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id() -> SeriesId {
        SeriesId::new(PropertyKind::OilRate, "P1", "bbl/day").unwrap()
    }

    fn ens(n: usize, t: usize) -> EnsembleMatrix {
        let trajs: Vec<Vec<f64>> = (0..n).map(|j| (0..t).map(|s| (j * t + s) as f64).collect()).collect();
        EnsembleMatrix::from_trajectories(id(), &trajs, default_step_times(t)).unwrap()
    }

    #[test]
    fn validate_pair_accepts_consistent_shapes() {
        let obs = ObservationSeries::on_unit_grid(id(), vec![1.0; 5]).unwrap();
        validate_pair(&obs, &ens(3, 5)).unwrap();
    }

    #[test]
    fn validate_pair_reports_length_mismatch() {
        let obs = ObservationSeries::on_unit_grid(id(), vec![1.0; 5]).unwrap();
        let err = validate_pair(&obs, &ens(3, 4)).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { observations: 5, ensemble: 4 }));
    }

    #[test]
    fn validate_pair_reports_id_mismatch() {
        let other = SeriesId::new(PropertyKind::OilRate, "P2", "bbl/day").unwrap();
        let obs = ObservationSeries::on_unit_grid(other, vec![1.0; 5]).unwrap();
        assert!(matches!(validate_pair(&obs, &ens(3, 5)), Err(Error::IdMismatch { .. })));
    }

    #[test]
    fn non_finite_entry_is_located() {
        let mut trajs: Vec<Vec<f64>> = vec![vec![0.0; 5]; 3];
        trajs[1][2] = f64::NAN;
        let err = EnsembleMatrix::from_trajectories(id(), &trajs, default_step_times(5)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { model: Some(2), step: 3 }));
    }

    #[test]
    fn series_invariants() {
        assert!(SeriesId::new(PropertyKind::Other, "", "psi").is_err());
        assert!(SeriesId::new(PropertyKind::Other, "I1", " ").is_err());
        assert!(ObservationSeries::on_unit_grid(id(), vec![1.0]).is_err());
        assert!(ObservationSeries::new(id(), vec![1.0, 2.0], vec![1.0, 1.0]).is_err());
        assert!(ObservationSeries::on_unit_grid(id(), vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn column_and_trajectory_views_agree() {
        let e = ens(3, 4);
        assert_eq!(e.column(2), &[2.0, 6.0, 10.0]);
        assert_eq!(e.trajectory(1), vec![4.0, 5.0, 6.0, 7.0]);
        let sub = e.select_models(&[2, 0]).unwrap();
        assert_eq!(sub.column(1), &[9.0, 1.0]);
        let tail = e.slice_steps(2..4).unwrap();
        assert_eq!(tail.column(0), e.column(2));
    }

    #[test]
    fn convex_weights_must_lie_on_simplex() {
        assert!(WeightVector::new(vec![0.5, 0.5], WeightFlavor::Convex, Algorithm::Ewa, 1.0, 0).is_ok());
        assert!(WeightVector::new(vec![0.5, 0.5 + 2e-9], WeightFlavor::Convex, Algorithm::Ewa, 1.0, 0).is_err());
        assert!(WeightVector::new(vec![1.5, -0.5], WeightFlavor::Convex, Algorithm::Ewa, 1.0, 0).is_err());
        assert!(WeightVector::new(vec![1.5, -0.5], WeightFlavor::Linear, Algorithm::Ridge, 1.0, 0).is_ok());
        assert!(WeightVector::new(vec![f64::NAN], WeightFlavor::Linear, Algorithm::Ridge, 1.0, 0).is_err());
    }

    #[test]
    fn trace_tracks_cumulative_loss() {
        let mut trace = AggregationTrace::new();
        for (t, loss) in [1.0, 0.0, 2.5].into_iter().enumerate() {
            trace
                .push(StepRecord {
                    step: t,
                    weights: WeightVector::uniform(2, Algorithm::Uniform, 0.0, t),
                    forecast: 0.0,
                    observation: 0.0,
                    loss,
                    hyperparameter: 0.0,
                })
                .unwrap();
        }
        assert_eq!(trace.cumulative_losses(), &[1.0, 1.0, 3.5]);
        let bad = StepRecord {
            step: 7,
            weights: WeightVector::uniform(2, Algorithm::Uniform, 0.0, 7),
            forecast: 0.0,
            observation: 0.0,
            loss: 0.0,
            hyperparameter: 0.0,
        };
        assert!(trace.push(bad).is_err());
    }
}
