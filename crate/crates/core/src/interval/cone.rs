use crate::error::{Error, Result};
use crate::types::EnsembleMatrix;

/// Number of steps over which variations are averaged.
pub const CONE_WINDOW: usize = 10;

/// Extreme average one-step variations, downwards and upwards. Either may be
/// negative or positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSlope {
    pub down: f64,
    pub up: f64,
}

impl ConeSlope {
    pub fn new(down: f64, up: f64) -> Result<Self> {
        if !(down <= up) || !down.is_finite() || !up.is_finite() {
            return Err(Error::invalid("cone slope", format!("[{down}, {up}]")));
        }
        Ok(ConeSlope { down, up })
    }

    /// Same center, half-width scaled by `factor >= 1`.
    pub fn widened(self, factor: f64) -> Self {
        let center = 0.5 * (self.down + self.up);
        let half = 0.5 * (self.up - self.down) * factor;
        ConeSlope {
            down: center - half,
            up: center + half,
        }
    }
}

/// Physical bounds applied to every step of the cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamp {
    pub lo: f64,
    pub hi: f64,
}

impl Clamp {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid("clamp", format!("{lo}:{hi}")));
        }
        Ok(Clamp { lo, hi })
    }
}

/// `S_T x ... x S_{T+K}` with `S_{T+k} = [a + k down, a + k up]`,
/// `a = y_{T-1}`, intersected with the clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCone {
    anchor: f64,
    slope: ConeSlope,
    clamp: Option<Clamp>,
    intervals: Vec<(f64, f64)>,
}

impl ScenarioCone {
    /// Cone over offsets `k = 0..horizon`.
    pub fn new(anchor: f64, slope: ConeSlope, horizon: usize, clamp: Option<Clamp>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("cone", "horizon must be at least 1"));
        }
        let mut intervals = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let kf = k as f64;
            let (mut lo, mut hi) = (anchor + kf * slope.down, anchor + kf * slope.up);
            if let Some(c) = clamp {
                lo = lo.max(c.lo);
                hi = hi.min(c.hi);
            }
            if !(lo <= hi) {
                return Err(Error::EmptyCone { offset: k });
            }
            intervals.push((lo, hi));
        }
        Ok(ScenarioCone {
            anchor,
            slope,
            clamp,
            intervals,
        })
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn slope(&self) -> ConeSlope {
        self.slope
    }

    pub fn clamp(&self) -> Option<Clamp> {
        self.clamp
    }

    /// `K + 1`.
    pub fn horizon(&self) -> usize {
        self.intervals.len()
    }

    /// `(lower, upper)` for offsets `k = 0..=K`.
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Same anchor, horizon and clamp with a different slope.
    pub fn with_slope(&self, slope: ConeSlope) -> Result<Self> {
        Self::new(self.anchor, slope, self.horizon(), self.clamp)
    }
}

fn window_variations(values: impl Iterator<Item = f64>) -> impl Iterator<Item = f64> {
    let values: Vec<f64> = values.collect();
    (0..values.len().saturating_sub(CONE_WINDOW))
        .map(move |t| (values[t + CONE_WINDOW] - values[t]) / CONE_WINDOW as f64)
}

/// Builds the cone from the learning observations and the ensemble.
///
/// The slope range covers every overlapping 10-step average variation of the
/// observations on the learning steps and of each single model trajectory on
/// the prediction steps `T..T+K`, where `T - 1 = learning.len()` and
/// `T + K` is the last step of `ens`.
pub fn build_cone(learning: &[f64], ens: &EnsembleMatrix, clamp: Option<Clamp>) -> Result<ScenarioCone> {
    let l = learning.len();
    if l < CONE_WINDOW + 1 {
        return Err(Error::InsufficientHistory {
            required: CONE_WINDOW + 1,
            available: l,
        });
    }
    if ens.n_steps() <= l {
        return Err(Error::invalid("ensemble", "no prediction steps after the learning part"));
    }
    let mut down = f64::INFINITY;
    let mut up = f64::NEG_INFINITY;
    let mut take = |v: f64| {
        down = down.min(v);
        up = up.max(v);
    };
    window_variations(learning.iter().copied()).for_each(&mut take);
    for j in 0..ens.n_models() {
        window_variations((l..ens.n_steps()).map(|t| ens.value(j, t))).for_each(&mut take);
    }
    let slope = ConeSlope::new(down, up)?;
    ScenarioCone::new(learning[l - 1], slope, ens.n_steps() - l, clamp)
}
