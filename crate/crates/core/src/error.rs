use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: observations have {observations} steps, ensemble has {ensemble}")]
    LengthMismatch { observations: usize, ensemble: usize },

    #[error("series id mismatch: observations `{observations}`, ensemble `{ensemble}`")]
    IdMismatch { observations: String, ensemble: String },

    /// `model` is `None` for the observation series. Indices are 1-based.
    #[error("non-finite value at model {model:?}, step {step}")]
    NonFiniteValue { model: Option<usize>, step: usize },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("regularized system is numerically singular at step {step}")]
    SolveFailure { step: usize },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("series {series}: {source}")]
    InSeries {
        series: String,
        #[source]
        source: Box<Error>,
    },

    #[error("need at least {required} learning steps, got {available}")]
    InsufficientHistory { required: usize, available: usize },

    #[error("scenario cone is empty at horizon offset {offset} after clamping")]
    EmptyCone { offset: usize },

    #[error("weight box does not intersect the simplex at horizon offset {offset} (sum of lower bounds {lower_sum}, upper {upper_sum})")]
    InfeasibleWeightBox {
        offset: usize,
        lower_sum: f64,
        upper_sum: f64,
    },

    #[error("{algorithm} regret bound violated: average loss {lhs:e} exceeds bound {rhs:e}")]
    BoundViolated {
        algorithm: &'static str,
        lhs: f64,
        rhs: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("steps are not contiguous: expected step {0}")]
    NonContiguousSteps(usize),

    #[error("algorithm `{0}` does not support interval forecasts")]
    UnsupportedAlgorithm(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn in_series(self, series: impl Into<String>) -> Self {
        match self {
            e @ Error::InSeries { .. } => e,
            e => Error::InSeries {
                series: series.into(),
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, past step and series context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::InSeries { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
