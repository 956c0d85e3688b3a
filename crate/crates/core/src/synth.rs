//! Synthetic ensemble-versus-reference data.
//!
//! Each series has a latent truth drawn from a regime profile. Every model
//! trajectory is the same profile with perturbed parameters plus a smooth
//! wiggle, so the ensemble brackets the truth without containing it. The
//! reference series is the truth plus Gaussian noise and an optional
//! constant bias, clamped to the regime's documented range.
//!
//! Randomness comes from ChaCha8 seeded with `seed` through
//! `seed_from_u64`, with the series index as the stream number. Output
//! therefore depends only on the config, not on platform or thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::types::{default_step_times, EnsembleMatrix, ObservationSeries, PropertyKind, SeriesId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Pressure decline towards a plateau.
    SmoothPressure,
    /// Water rate, zero until a jump at the breakthrough time.
    RateWithBreakthrough,
    /// Declining oil rate with a shared zero segment.
    RateWithShutin,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SmoothPressure => "smooth_pressure",
            Regime::RateWithBreakthrough => "rate_with_breakthrough",
            Regime::RateWithShutin => "rate_with_shutin",
        }
    }

    /// Range every generated value is clamped to.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Regime::SmoothPressure => (0.0, 600.0),
            Regime::RateWithBreakthrough => (0.0, 2000.0),
            Regime::RateWithShutin => (0.0, 3000.0),
        }
    }

    pub fn kind(self) -> PropertyKind {
        match self {
            Regime::SmoothPressure => PropertyKind::BottomholePressure,
            Regime::RateWithBreakthrough => PropertyKind::WaterRate,
            Regime::RateWithShutin => PropertyKind::OilRate,
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            Regime::SmoothPressure => "bar",
            Regime::RateWithBreakthrough | Regime::RateWithShutin => "m3/day",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth_pressure" => Ok(Regime::SmoothPressure),
            "rate_with_breakthrough" => Ok(Regime::RateWithBreakthrough),
            "rate_with_shutin" => Ok(Regime::RateWithShutin),
            _ => Err(Error::invalid("regime", format!("unknown regime `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_models: usize,
    pub n_steps: usize,
    pub n_series: usize,
    pub regime: Regime,
    /// Standard deviation of the observation noise, native units.
    pub noise_sigma: f64,
    /// Constant offset of the reference from the truth the ensemble is
    /// built around.
    pub ensemble_bias: f64,
    /// Replace model 1 by the exact truth.
    pub include_truth: bool,
    /// Relative size of the model perturbations.
    pub model_spread: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, regime: Regime) -> Self {
        SynthConfig {
            seed,
            n_models: 20,
            n_steps: 127,
            n_series: 1,
            regime,
            noise_sigma: 0.0,
            ensemble_bias: 0.0,
            include_truth: false,
            model_spread: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_models < 2 {
            return Err(Error::invalid("synth config", format!("n_models = {} (need at least 2)", self.n_models)));
        }
        if self.n_steps < 40 {
            return Err(Error::invalid("synth config", format!("n_steps = {} (need at least 40)", self.n_steps)));
        }
        if self.n_series == 0 {
            return Err(Error::invalid("synth config", "n_series = 0"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("synth config", format!("noise_sigma = {}", self.noise_sigma)));
        }
        if !self.ensemble_bias.is_finite() {
            return Err(Error::invalid("synth config", "non-finite ensemble_bias"));
        }
        if !(self.model_spread >= 0.0) || !self.model_spread.is_finite() {
            return Err(Error::invalid("synth config", format!("model_spread = {}", self.model_spread)));
        }
        Ok(())
    }
}

/// One generated pair, with the latent truth kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSeries {
    pub observations: ObservationSeries,
    pub ensemble: EnsembleMatrix,
    pub truth: Vec<f64>,
}

/// Generates `config.n_series` series named `S1`, `S2`, ...
pub fn generate(config: &SynthConfig, parallelism: Parallelism) -> Result<Vec<SynthSeries>> {
    config.validate()?;
    parallelism
        .map_range(config.n_series, |i| {
            let id = SeriesId::new(config.regime.kind(), format!("S{}", i + 1), config.regime.units())?;
            let spec = SeriesSpec {
                regime: config.regime,
                n_models: config.n_models,
                n_steps: config.n_steps,
                noise_sigma: config.noise_sigma,
                ensemble_bias: config.ensemble_bias,
                include_truth: config.include_truth,
                model_spread: config.model_spread,
            };
            generate_series(&spec, id, config.seed, i as u64)
        })
        .into_iter()
        .collect()
}

/// Settings of a field-like bundle: 10 injector pressures, then 20 producer
/// pressures, oil rates and water rates.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleConfig {
    pub seed: u64,
    pub n_models: usize,
    pub n_steps: usize,
    /// Multiplies the per-regime noise levels (1 bar for pressures,
    /// 5 m3/day for rates).
    pub noise_scale: f64,
    pub model_spread: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            seed: 0,
            n_models: 104,
            n_steps: 127,
            noise_scale: 1.0,
            model_spread: 0.1,
        }
    }
}

/// Generates the 70-series bundle `BHP_I1..10`, `BHP_P1..20`, `QO_P1..20`,
/// `QW_P1..20`, in that order.
pub fn generate_bundle(config: &BundleConfig, parallelism: Parallelism) -> Result<Vec<SynthSeries>> {
    let mut layout = Vec::with_capacity(70);
    for i in 1..=10 {
        layout.push((Regime::SmoothPressure, format!("I{i}")));
    }
    for regime in [Regime::SmoothPressure, Regime::RateWithShutin, Regime::RateWithBreakthrough] {
        for i in 1..=20 {
            layout.push((regime, format!("P{i}")));
        }
    }
    let base = SynthConfig {
        seed: config.seed,
        n_models: config.n_models,
        n_steps: config.n_steps,
        n_series: layout.len(),
        regime: Regime::SmoothPressure,
        noise_sigma: config.noise_scale,
        ensemble_bias: 0.0,
        include_truth: false,
        model_spread: config.model_spread,
    };
    base.validate()?;
    parallelism
        .map(&layout.iter().enumerate().collect::<Vec<_>>(), |&(i, (regime, well))| {
            let id = SeriesId::new(regime.kind(), well.clone(), regime.units())?;
            let noise = match regime {
                Regime::SmoothPressure => 1.0,
                _ => 5.0,
            } * config.noise_scale;
            let spec = SeriesSpec {
                regime: *regime,
                n_models: config.n_models,
                n_steps: config.n_steps,
                noise_sigma: noise,
                ensemble_bias: 0.0,
                include_truth: false,
                model_spread: config.model_spread,
            };
            generate_series(&spec, id, config.seed, i as u64)
        })
        .into_iter()
        .collect()
}

struct SeriesSpec {
    regime: Regime,
    n_models: usize,
    n_steps: usize,
    noise_sigma: f64,
    ensemble_bias: f64,
    include_truth: bool,
    model_spread: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Profile parameters; models reuse the truth's draw with perturbations.
#[derive(Debug, Clone, Copy)]
enum Profile {
    Pressure { p0: f64, drop: f64, tau: f64, ripple: f64, freq: f64, phase: f64 },
    Breakthrough { q: f64, tb: f64, rise: f64 },
    Shutin { q0: f64, decline: f64 },
}

impl Profile {
    fn draw(regime: Regime, rng: &mut ChaCha8Rng) -> Self {
        match regime {
            Regime::SmoothPressure => Profile::Pressure {
                p0: rng.random_range(200.0..300.0),
                drop: rng.random_range(40.0..120.0),
                tau: rng.random_range(0.1..0.4),
                ripple: rng.random_range(0.0..5.0),
                freq: rng.random_range(1.0..3.0),
                phase: rng.random_range(0.0..1.0),
            },
            Regime::RateWithBreakthrough => Profile::Breakthrough {
                q: rng.random_range(200.0..800.0),
                tb: rng.random_range(0.25..0.6),
                rise: rng.random_range(0.05..0.3),
            },
            Regime::RateWithShutin => Profile::Shutin {
                q0: rng.random_range(500.0..1500.0),
                decline: rng.random_range(0.5..2.0),
            },
        }
    }

    fn perturbed(self, spread: f64, rng: &mut ChaCha8Rng) -> Self {
        let (z1, z2, z3) = (normal(rng), normal(rng), normal(rng));
        match self {
            Profile::Pressure { p0, drop, tau, ripple, freq, phase } => Profile::Pressure {
                p0: p0 + spread * 0.1 * p0 * z1,
                drop: drop * (1.0 + spread * z2),
                tau: tau * (spread * z3).exp(),
                ripple,
                freq,
                phase,
            },
            Profile::Breakthrough { q, tb, rise } => Profile::Breakthrough {
                q: q * (1.0 + spread * z1),
                tb: (tb + spread * 0.5 * z2).clamp(0.05, 0.95),
                rise: rise * (spread * z3).exp(),
            },
            Profile::Shutin { q0, decline } => Profile::Shutin {
                q0: q0 * (1.0 + spread * z1),
                decline: decline * (spread * z2).exp(),
            },
        }
    }

    /// Value at normalized time `s` in `[0, 1]`.
    fn at(self, s: f64) -> f64 {
        match self {
            Profile::Pressure { p0, drop, tau, ripple, freq, phase } => {
                p0 - drop * (1.0 - (-s / tau).exp()) + ripple * (std::f64::consts::TAU * (freq * s + phase)).sin()
            }
            Profile::Breakthrough { q, tb, rise } => {
                if s < tb {
                    0.0
                } else {
                    q * (0.3 + 0.7 * (1.0 - (-(s - tb) / rise).exp()))
                }
            }
            Profile::Shutin { q0, decline } => q0 * (-decline * s).exp(),
        }
    }

    /// Typical magnitude used to size the smooth model wiggle.
    fn amplitude(self) -> f64 {
        match self {
            Profile::Pressure { drop, .. } => drop,
            Profile::Breakthrough { q, .. } => q,
            Profile::Shutin { q0, .. } => q0,
        }
    }
}

fn generate_series(spec: &SeriesSpec, id: SeriesId, seed: u64, stream: u64) -> Result<SynthSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (lo, hi) = spec.regime.bounds();
    let t_len = spec.n_steps;
    let s_of = |t: usize| t as f64 / (t_len - 1) as f64;

    let truth_profile = Profile::draw(spec.regime, &mut rng);
    // Shared shut-in window, as step indices.
    let shutin = match spec.regime {
        Regime::RateWithShutin => {
            let start = rng.random_range(0.3..0.7);
            let len = rng.random_range(0.05..0.15);
            let a = (start * t_len as f64) as usize;
            let b = ((start + len) * t_len as f64) as usize;
            Some(a..b.max(a + 1).min(t_len))
        }
        _ => None,
    };
    let shape = |profile: Profile, t: usize| -> f64 {
        if shutin.as_ref().is_some_and(|w| w.contains(&t)) {
            0.0
        } else {
            profile.at(s_of(t))
        }
    };
    let truth: Vec<f64> = (0..t_len).map(|t| shape(truth_profile, t).clamp(lo, hi)).collect();

    let mut trajectories = Vec::with_capacity(spec.n_models);
    for j in 0..spec.n_models {
        let profile = truth_profile.perturbed(spec.model_spread, &mut rng);
        let wiggle = spec.model_spread * 0.3 * truth_profile.amplitude() * normal(&mut rng);
        let freq = rng.random_range(0.5..2.0);
        let phase = rng.random_range(0.0..1.0);
        if j == 0 && spec.include_truth {
            trajectories.push(truth.clone());
            continue;
        }
        let traj = (0..t_len)
            .map(|t| {
                let base = shape(profile, t);
                let v = if base == 0.0 {
                    0.0
                } else {
                    base + wiggle * (std::f64::consts::TAU * (freq * s_of(t) + phase)).sin()
                };
                v.clamp(lo, hi)
            })
            .collect();
        trajectories.push(traj);
    }

    let values: Vec<f64> = truth
        .iter()
        .map(|&x| {
            let noise = if spec.noise_sigma > 0.0 { spec.noise_sigma * normal(&mut rng) } else { 0.0 };
            (x + spec.ensemble_bias + noise).clamp(lo, hi)
        })
        .collect();
    let times = default_step_times(t_len);
    Ok(SynthSeries {
        observations: ObservationSeries::new(id.clone(), values, times.clone())?,
        ensemble: EnsembleMatrix::from_trajectories(id, &trajectories, times)?,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::{run_online, HyperMode};
    use crate::types::Algorithm;

    #[test]
    fn regime_names_round_trip() {
        for r in [Regime::SmoothPressure, Regime::RateWithBreakthrough, Regime::RateWithShutin] {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
        }
        assert!("flat".parse::<Regime>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = SynthConfig::new(1, Regime::SmoothPressure);
        assert!(c.validate().is_ok());
        c.n_models = 1;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::new(1, Regime::SmoothPressure);
        c.n_steps = 39;
        assert!(c.validate().is_err());
        c.n_steps = 40;
        c.noise_sigma = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_bits() {
        for regime in [Regime::SmoothPressure, Regime::RateWithBreakthrough, Regime::RateWithShutin] {
            let mut c = SynthConfig::new(99, regime);
            c.n_series = 3;
            c.noise_sigma = 2.0;
            let a = generate(&c, Parallelism::Parallel).unwrap();
            let b = generate(&c, Parallelism::Sequential).unwrap();
            assert_eq!(a, b);
            c.seed = 100;
            assert_ne!(generate(&c, Parallelism::Sequential).unwrap(), a);
        }
    }

    #[test]
    fn values_stay_in_regime_bounds() {
        for regime in [Regime::SmoothPressure, Regime::RateWithBreakthrough, Regime::RateWithShutin] {
            let mut c = SynthConfig::new(5, regime);
            c.n_series = 5;
            c.noise_sigma = 50.0;
            c.model_spread = 1.0;
            let (lo, hi) = regime.bounds();
            for s in generate(&c, Parallelism::Sequential).unwrap() {
                assert!(s.observations.values().iter().all(|v| (lo..=hi).contains(v)));
                for j in 0..c.n_models {
                    assert!(s.ensemble.trajectory(j).iter().all(|v| (lo..=hi).contains(v)));
                }
            }
        }
    }

    #[test]
    fn perfect_expert_drives_ewa_loss_to_zero() {
        let mut c = SynthConfig::new(3, Regime::SmoothPressure);
        c.include_truth = true;
        let s = generate(&c, Parallelism::Sequential).unwrap().remove(0);
        assert_eq!(s.observations.values(), &s.truth[..]);
        assert_eq!(s.ensemble.trajectory(0), s.truth);
        let trace = run_online(&s.observations, &s.ensemble, Algorithm::Ewa, &HyperMode::Fixed(1.0), Parallelism::Sequential).unwrap();
        let tail = &trace.records()[60..];
        assert!(tail.iter().all(|r| r.loss < 1e-12), "{:?}", tail.iter().map(|r| r.loss).collect::<Vec<_>>());
    }

    #[test]
    fn breakthrough_times_differ_between_models() {
        let c = SynthConfig::new(8, Regime::RateWithBreakthrough);
        let s = generate(&c, Parallelism::Sequential).unwrap().remove(0);
        let first_nonzero = |v: &[f64]| v.iter().position(|&x| x > 0.0);
        let mut times: Vec<_> = (0..c.n_models).map(|j| first_nonzero(&s.ensemble.trajectory(j))).collect();
        times.sort();
        times.dedup();
        assert!(times.len() > 3);
        // A jump, not a ramp from zero.
        let t = first_nonzero(&s.truth).unwrap();
        assert!(s.truth[t] > 0.25 * s.truth.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn shutin_segment_is_shared() {
        let c = SynthConfig::new(12, Regime::RateWithShutin);
        let s = generate(&c, Parallelism::Sequential).unwrap().remove(0);
        let zeros: Vec<usize> = (0..c.n_steps).filter(|&t| s.truth[t] == 0.0).collect();
        assert!(!zeros.is_empty());
        for j in 0..c.n_models {
            for &t in &zeros {
                assert_eq!(s.ensemble.value(j, t), 0.0);
            }
        }
    }

    #[test]
    fn large_bias_leaves_the_hull() {
        let mut c = SynthConfig::new(21, Regime::SmoothPressure);
        c.ensemble_bias = 150.0;
        c.n_series = 4;
        for s in generate(&c, Parallelism::Sequential).unwrap() {
            let outside = (0..c.n_steps)
                .filter(|&t| {
                    let col = s.ensemble.column(t);
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let y = s.observations.values()[t];
                    y < lo || y > hi
                })
                .count();
            assert!(outside as f64 >= 0.9 * c.n_steps as f64, "{outside}");
        }
    }

    #[test]
    fn bundle_layout() {
        let c = BundleConfig {
            n_models: 5,
            n_steps: 60,
            ..BundleConfig::default()
        };
        let b = generate_bundle(&c, Parallelism::Sequential).unwrap();
        assert_eq!(b.len(), 70);
        assert_eq!(b[0].observations.id().name(), "BHP_I1");
        assert_eq!(b[10].observations.id().name(), "BHP_P1");
        assert_eq!(b[30].observations.id().name(), "QO_P1");
        assert_eq!(b[69].observations.id().name(), "QW_P20");
        assert_eq!(b, generate_bundle(&c, Parallelism::Parallel).unwrap());
    }
}
