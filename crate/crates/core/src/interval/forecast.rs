use super::ScenarioCone;
use crate::aggregators::{aggregate, fixed_aggregator, softmin_weights, RidgeSystem, SufficientStats};
use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::types::{Algorithm, EnsembleMatrix};

/// Slack allowed on `sum(lower) <= 1 <= sum(upper)` for EWA weight boxes.
const BOX_TOLERANCE: f64 = 1e-9;

/// Multiple of `N * eps * max |m_j|` added on both sides of EWA bounds.
const ROUNDING_FACTOR: f64 = 4.0;

/// Hull of the aggregated forecasts over all scenarios, before enlargement
/// and shift. Index `k` is the offset from the first prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalStep {
    /// 1-based step number `T + k`.
    pub step: usize,
    pub raw_lo: f64,
    pub raw_hi: f64,
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    /// `sigma_max` when the enlargement widened this interval, else 0.
    pub sigma_applied: f64,
    pub shift: f64,
}

/// Emitted interval forecasts. Enlargement is applied before the shift.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSeries {
    pub algorithm: Algorithm,
    pub hyperparameter: f64,
    pub sigma_max: f64,
    pub shift: f64,
    pub steps: Vec<IntervalStep>,
}

impl IntervalSeries {
    fn assemble(algorithm: Algorithm, hyperparameter: f64, first_step: usize, raw: RawBounds, sigma_max: f64, shift: f64) -> Self {
        let steps = raw
            .lo
            .iter()
            .zip(&raw.hi)
            .enumerate()
            .map(|(k, (&raw_lo, &raw_hi))| {
                let (lo, hi) = enlarge(raw_lo, raw_hi, sigma_max);
                let widened = lo < raw_lo || hi > raw_hi;
                let (lo, hi) = (lo + shift, hi + shift);
                IntervalStep {
                    step: first_step + k,
                    raw_lo,
                    raw_hi,
                    lo,
                    hi,
                    center: 0.5 * (lo + hi),
                    sigma_applied: if widened { sigma_max } else { 0.0 },
                    shift,
                }
            })
            .collect();
        IntervalSeries {
            algorithm,
            hyperparameter,
            sigma_max,
            shift,
            steps,
        }
    }
}

/// Inclusion-maximum of `[lo, hi]` and `[c - sigma, c + sigma]`, `c` the
/// center of `[lo, hi]`.
pub fn enlarge(lo: f64, hi: f64, sigma: f64) -> (f64, f64) {
    let c = 0.5 * (lo + hi);
    (lo.min(c - sigma), hi.max(c + sigma))
}

fn check_shapes(learning: &[f64], ens: &EnsembleMatrix, cone: &ScenarioCone) -> Result<()> {
    if learning.is_empty() {
        return Err(Error::InsufficientHistory { required: 1, available: 0 });
    }
    if ens.n_steps() < learning.len() + cone.horizon() {
        return Err(Error::invalid(
            "ensemble",
            format!(
                "{} steps cannot cover {} learning and {} prediction steps",
                ens.n_steps(),
                learning.len(),
                cone.horizon()
            ),
        ));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact ridge bounds.
///
/// With the model forecasts and `lambda` fixed, the putative Gram matrix at
/// offset `k` does not depend on the scenario, so the forecast is affine in
/// it: `z_hat_{T+k} = u . b_0 + sum_{s<k} z_{T+s} (u . m_{T+s})` with
/// `u = (lambda I + G_k)^{-1} m_{T+k}`. Each coordinate then sits at the cone
/// endpoint picked by the sign of its coefficient.
pub fn ridge_raw_bounds(
    learning: &[f64],
    ens: &EnsembleMatrix,
    cone: &ScenarioCone,
    lambda: f64,
    parallelism: Parallelism,
) -> Result<RawBounds> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("regularization factor", format!("{lambda}")));
    }
    check_shapes(learning, ens, cone)?;
    let n = ens.n_models();
    let l = learning.len();
    let mut stats = SufficientStats::new(n);
    for (t, &y) in learning.iter().enumerate() {
        stats.update(y, ens.column(t));
    }
    let moment = stats.moment().to_vec();
    let mut grams = Vec::with_capacity(cone.horizon());
    let mut gram = stats.gram().to_vec();
    for k in 0..cone.horizon() {
        grams.push(gram.clone());
        let m = ens.column(l + k);
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] += m[i] * m[j];
            }
        }
    }
    let bounds = parallelism.map_range(cone.horizon(), |k| -> Result<(f64, f64)> {
        let system = RidgeSystem::from_parts(n, &grams[k], &moment).map_err(|_| Error::SolveFailure { step: l + k + 1 })?;
        let u = system.solve(lambda, ens.column(l + k)).map_err(|_| Error::SolveFailure { step: l + k + 1 })?;
        let base = dot(&u, &moment);
        let (mut lo, mut hi) = (base, base);
        for (s, &(zl, zh)) in cone.intervals()[..k].iter().enumerate() {
            let a = dot(&u, ens.column(l + s));
            lo += (a * zl).min(a * zh);
            hi += (a * zl).max(a * zh);
        }
        Ok((lo, hi))
    });
    let mut raw = RawBounds {
        lo: Vec::with_capacity(bounds.len()),
        hi: Vec::with_capacity(bounds.len()),
    };
    for b in bounds {
        let (lo, hi) = b?;
        raw.lo.push(lo);
        raw.hi.push(hi);
    }
    Ok(raw)
}

/// Per-model bounds on the EWA weights given bounds on every cumulative loss:
/// `w_j = 1 / (1 + sum_{i != j} exp(eta (L_j - L_i)))` is smallest at
/// `L_j = max_j, L_i = min_i` and largest the other way round.
pub fn ewa_weight_box(eta: f64, loss_min: &[f64], loss_max: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = loss_min.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for j in 0..n {
        let (mut s_lo, mut s_hi) = (0.0, 0.0);
        for i in (0..n).filter(|&i| i != j) {
            s_lo += (eta * (loss_max[j] - loss_min[i])).exp();
            s_hi += (eta * (loss_min[j] - loss_max[i])).exp();
        }
        lower[j] = 1.0 / (1.0 + s_lo);
        upper[j] = 1.0 / (1.0 + s_hi);
    }
    (lower, upper)
}

/// Extremes of `sum_j w_j m_j` over the simplex intersected with the box,
/// from the dual `max = min_tau tau + sum_j u_j (m_j - tau)+ - l_j (tau - m_j)+`
/// and its mirror for the minimum, with `tau` ranging over the forecasts.
/// Every candidate is monotone in the box, so a wider box never gives a
/// narrower result even after rounding.
fn box_extremes(lower: &[f64], upper: &[f64], column: &[f64]) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for &tau in column {
        let (mut below, mut above) = (tau, tau);
        for ((&l, &u), &m) in lower.iter().zip(upper).zip(column) {
            let (up, down) = ((m - tau).max(0.0), (tau - m).max(0.0));
            above += u * up - l * down;
            below += l * up - u * down;
        }
        hi = hi.min(above);
        lo = lo.max(below);
    }
    (lo, hi)
}

/// Outward margin covering the rounding of a convex combination of
/// `column`.
fn rounding_margin(column: &[f64]) -> f64 {
    let scale = column.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    ROUNDING_FACTOR * column.len() as f64 * f64::EPSILON * scale
}

/// Guaranteed enclosure of the EWA forecasts by propagating, for every
/// model, an interval on its cumulative loss over all scenarios.
pub fn ewa_raw_bounds(learning: &[f64], ens: &EnsembleMatrix, cone: &ScenarioCone, eta: f64) -> Result<RawBounds> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid("learning rate", format!("{eta}")));
    }
    check_shapes(learning, ens, cone)?;
    let n = ens.n_models();
    let l = learning.len();
    let mut loss_min = vec![0.0; n];
    for (t, &y) in learning.iter().enumerate() {
        for (acc, m) in loss_min.iter_mut().zip(ens.column(t)) {
            *acc += (y - m).powi(2);
        }
    }
    let mut loss_max = loss_min.clone();
    let first = aggregate(&softmin_weights(eta, &loss_min), ens.column(l));
    let pad = rounding_margin(ens.column(l));
    let mut raw = RawBounds {
        lo: vec![first - pad],
        hi: vec![first + pad],
    };
    for k in 1..cone.horizon() {
        let (a, b) = cone.intervals()[k - 1];
        for (j, &m) in ens.column(l + k - 1).iter().enumerate() {
            let near = if m < a {
                (a - m).powi(2)
            } else if m > b {
                (m - b).powi(2)
            } else {
                0.0
            };
            loss_min[j] += near;
            loss_max[j] += (a - m).powi(2).max((b - m).powi(2));
        }
        let (lower, upper) = ewa_weight_box(eta, &loss_min, &loss_max);
        let (lower_sum, upper_sum) = (lower.iter().sum::<f64>(), upper.iter().sum::<f64>());
        if lower_sum > 1.0 + BOX_TOLERANCE || upper_sum < 1.0 - BOX_TOLERANCE {
            return Err(Error::InfeasibleWeightBox {
                offset: k,
                lower_sum,
                upper_sum,
            });
        }
        let (lo, hi) = box_extremes(&lower, &upper, ens.column(l + k));
        let pad = rounding_margin(ens.column(l + k));
        raw.lo.push(lo - pad);
        raw.hi.push(hi + pad);
    }
    Ok(raw)
}

/// `Delta_t = y_hat_t - y_t` for the last `count` steps of `observed`, from a
/// fixed-hyperparameter one-step run over all of `observed`.
pub fn initial_mismatch(
    observed: &[f64],
    ens: &EnsembleMatrix,
    algorithm: Algorithm,
    hyperparameter: f64,
    count: usize,
) -> Result<Vec<f64>> {
    if count == 0 || observed.len() < count {
        return Err(Error::InsufficientHistory {
            required: count.max(1),
            available: observed.len(),
        });
    }
    let mut agg = fixed_aggregator(algorithm, hyperparameter, ens.n_models())?;
    let forecasts = crate::aggregators::run_fixed(agg.as_mut(), observed, ens)?;
    let start = observed.len() - count;
    Ok((start..observed.len()).map(|t| forecasts[t] - observed[t]).collect())
}

/// Ridge interval forecasts for steps `T..=T+K`. `shift` is added after
/// enlargement; the usual choice is minus the mean of the last five
/// one-step errors (see [`initial_mismatch`]).
pub fn ridge_interval_forecast(
    learning: &[f64],
    ens: &EnsembleMatrix,
    cone: &ScenarioCone,
    lambda: f64,
    sigma_max: f64,
    shift: f64,
    parallelism: Parallelism,
) -> Result<IntervalSeries> {
    let raw = ridge_raw_bounds(learning, ens, cone, lambda, parallelism)?;
    Ok(IntervalSeries::assemble(Algorithm::Ridge, lambda, learning.len() + 1, raw, sigma_max, shift))
}

/// EWA interval forecasts for steps `T..=T+K`. `shift` is usually minus the
/// one-step error at `T`.
pub fn ewa_interval_forecast(
    learning: &[f64],
    ens: &EnsembleMatrix,
    cone: &ScenarioCone,
    eta: f64,
    sigma_max: f64,
    shift: f64,
) -> Result<IntervalSeries> {
    let raw = ewa_raw_bounds(learning, ens, cone, eta)?;
    Ok(IntervalSeries::assemble(Algorithm::Ewa, eta, learning.len() + 1, raw, sigma_max, shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::{EwaState, OnlineAggregator, RidgeState};
    use crate::interval::{ConeSlope, ScenarioCone};
    use crate::types::{default_step_times, PropertyKind, SeriesId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(rng: &mut ChaCha8Rng, n: usize, l: usize, horizon: usize) -> (Vec<f64>, EnsembleMatrix, ScenarioCone) {
        let total = l + horizon;
        let trajs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let slope = rng.random_range(-0.05..0.05);
                let off = rng.random_range(-0.5..0.5);
                (0..total).map(|t| 1.0 + off + slope * t as f64 + rng.random_range(-0.1..0.1)).collect()
            })
            .collect();
        let learning: Vec<f64> = (0..l).map(|t| 1.0 + 0.01 * t as f64 + rng.random_range(-0.1..0.1)).collect();
        let id = SeriesId::new(PropertyKind::Other, "W", "u").unwrap();
        let ens = EnsembleMatrix::from_trajectories(id, &trajs, default_step_times(total)).unwrap();
        let slope = ConeSlope::new(rng.random_range(-0.2..0.0), rng.random_range(0.0..0.2)).unwrap();
        let cone = ScenarioCone::new(learning[l - 1], slope, horizon, None).unwrap();
        (learning, ens, cone)
    }

    /// Forecast at offset `k` for one scenario, by replaying the learning
    /// part and the scenario through a fresh forecaster.
    fn scenario_forecasts(agg: &mut dyn OnlineAggregator, learning: &[f64], ens: &EnsembleMatrix, z: &[f64]) -> Vec<f64> {
        let l = learning.len();
        for (t, &y) in learning.iter().enumerate() {
            agg.update(y, ens.column(t));
        }
        let mut out = Vec::new();
        for (k, &zk) in z.iter().enumerate() {
            let w = agg.weights().unwrap();
            out.push(aggregate(w.weights(), ens.column(l + k)));
            agg.update(zk, ens.column(l + k));
        }
        out
    }

    #[test]
    fn ridge_matches_corner_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (learning, ens, cone) = random_case(&mut rng, 3, 20, 5);
        let raw = ridge_raw_bounds(&learning, &ens, &cone, 0.5, Parallelism::Sequential).unwrap();
        let k_max = cone.horizon() - 1;
        let mut lo = vec![f64::INFINITY; cone.horizon()];
        let mut hi = vec![f64::NEG_INFINITY; cone.horizon()];
        for mask in 0..(1u32 << k_max) {
            let z: Vec<f64> = (0..cone.horizon())
                .map(|k| {
                    let (a, b) = cone.intervals()[k];
                    if k < k_max && mask & (1 << k) != 0 { b } else { a }
                })
                .collect();
            let mut agg = RidgeState::new(0.5, 3).unwrap();
            for (k, f) in scenario_forecasts(&mut agg, &learning, &ens, &z).into_iter().enumerate() {
                lo[k] = lo[k].min(f);
                hi[k] = hi[k].max(f);
            }
        }
        for k in 0..cone.horizon() {
            assert!((raw.lo[k] - lo[k]).abs() <= 1e-8, "k={k}: {} vs {}", raw.lo[k], lo[k]);
            assert!((raw.hi[k] - hi[k]).abs() <= 1e-8, "k={k}: {} vs {}", raw.hi[k], hi[k]);
        }
    }

    #[test]
    fn degenerate_cone_collapses_both_algorithms() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (learning, ens, cone) = random_case(&mut rng, 4, 15, 6);
        let flat = cone.with_slope(ConeSlope::new(0.0, 0.0).unwrap()).unwrap();
        let r = ridge_interval_forecast(&learning, &ens, &flat, 1.0, 0.0, 0.0, Parallelism::Sequential).unwrap();
        let e = ewa_interval_forecast(&learning, &ens, &flat, 2.0, 0.0, 0.0).unwrap();
        for s in &r.steps {
            assert_eq!(s.lo, s.hi);
        }
        for s in &e.steps {
            assert!(s.hi - s.lo <= 1e-13);
        }
        let z = vec![flat.anchor(); flat.horizon()];
        let mut agg = EwaState::new(2.0, 4).unwrap();
        let exact = scenario_forecasts(&mut agg, &learning, &ens, &z);
        for (s, f) in e.steps.iter().zip(&exact) {
            assert!((s.lo - f).abs() <= 1e-12);
        }
    }

    #[test]
    fn ewa_contains_sampled_scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (learning, ens, cone) = random_case(&mut rng, 3, 20, 5);
        let raw = ewa_raw_bounds(&learning, &ens, &cone, 3.0).unwrap();
        for _ in 0..2000 {
            let z: Vec<f64> = cone.intervals().iter().map(|&(a, b)| if a < b { rng.random_range(a..=b) } else { a }).collect();
            let mut agg = EwaState::new(3.0, 3).unwrap();
            for (k, f) in scenario_forecasts(&mut agg, &learning, &ens, &z).into_iter().enumerate() {
                assert!(f >= raw.lo[k] - 1e-12 && f <= raw.hi[k] + 1e-12);
            }
        }
    }

    #[test]
    fn tiny_eta_gives_uniform_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (learning, ens, cone) = random_case(&mut rng, 3, 20, 5);
        let raw = ewa_raw_bounds(&learning, &ens, &cone, 1e-20).unwrap();
        for k in 0..cone.horizon() {
            let mean = ens.column(learning.len() + k).iter().sum::<f64>() / 3.0;
            assert!((raw.lo[k] - mean).abs() < 1e-12 && (raw.hi[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn enlargement_dominates_narrow_interval() {
        assert_eq!(enlarge(8.0, 12.0, 5.0), (5.0, 15.0));
        assert_eq!(enlarge(0.0, 20.0, 5.0), (0.0, 20.0));
        let raw = RawBounds {
            lo: vec![0.0, 1.0, 8.0, 3.0],
            hi: vec![0.0, 2.0, 12.0, 30.0],
        };
        let s = IntervalSeries::assemble(Algorithm::Ridge, 1.0, 85, raw, 5.0, 0.0);
        assert_eq!((s.steps[2].lo, s.steps[2].hi), (5.0, 15.0));
        assert_eq!(s.steps[2].sigma_applied, 5.0);
        assert_eq!(s.steps[3].sigma_applied, 0.0);
        assert_eq!(s.steps[0].step, 85);
        assert!(s.steps.iter().all(|st| st.hi - st.lo >= 10.0));
    }

    #[test]
    fn shift_translates_exactly() {
        let raw = RawBounds {
            lo: vec![1.0, 2.0],
            hi: vec![3.0, 7.0],
        };
        let a = IntervalSeries::assemble(Algorithm::Ewa, 1.0, 1, raw.clone(), 0.5, 0.0);
        let b = IntervalSeries::assemble(Algorithm::Ewa, 1.0, 1, raw, 0.5, -2.5);
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert!((y.lo - (x.lo - 2.5)).abs() <= 1e-12 && (y.hi - (x.hi - 2.5)).abs() <= 1e-12);
        }
    }

    #[test]
    fn weight_box_brackets_exact_weights() {
        let (lower, upper) = ewa_weight_box(0.7, &[1.0, 2.0, 0.5], &[1.0, 2.0, 0.5]);
        let exact = softmin_weights(0.7, &[1.0, 2.0, 0.5]);
        for j in 0..3 {
            assert!((lower[j] - exact[j]).abs() < 1e-15 && (upper[j] - exact[j]).abs() < 1e-15);
        }
        let (lower, upper) = ewa_weight_box(1e10, &[0.0, 0.0], &[5.0, 5.0]);
        assert_eq!(lower, vec![0.0, 0.0]);
        assert_eq!(upper, vec![1.0, 1.0]);
    }

    #[test]
    fn mismatch_uses_one_step_errors() {
        let id = SeriesId::new(PropertyKind::Other, "W", "u").unwrap();
        let ens = EnsembleMatrix::from_trajectories(id, &[vec![1.0; 6], vec![3.0; 6]], default_step_times(6)).unwrap();
        let d = initial_mismatch(&[2.0, 2.0, 2.0, 5.0], &ens, Algorithm::Ewa, 1.0, 1).unwrap();
        assert_eq!(d, vec![2.0 - 5.0]);
        assert!(initial_mismatch(&[2.0], &ens, Algorithm::Ridge, 1.0, 5).is_err());
    }
}
