use crate::error::{Error, Result};
use crate::types::EnsembleMatrix;

/// Half-width of the local stability window.
pub const STABILITY_WINDOW: usize = 15;

/// Default stability threshold, in the series' native units.
pub const DEFAULT_STABILITY_THRESHOLD: f64 = 150.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub sigma_max: f64,
    pub stability_threshold: f64,
    pub stability_window: usize,
    /// Locally stable steps, 1-based.
    pub stable_steps: Vec<usize>,
}

/// Noise level from locally stable steps.
///
/// A step `t` is stable when `|y_t - y_s| <= threshold` for every `s` within
/// `window` steps of `t` (indices outside the series are skipped). Only steps
/// whose centered 5-point mean exists are candidates. `sigma_max` is the
/// largest `|y_t - mean(y_{t-2..=t+2})|` over stable steps, or 0 when there
/// are none.
pub fn estimate_noise(learning: &[f64], threshold: f64, window: usize) -> Result<NoiseEstimate> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("stability threshold", format!("{threshold}")));
    }
    let n = learning.len();
    let mut stable_steps = Vec::new();
    let mut sigma_max = 0.0f64;
    for t in 2..n.saturating_sub(2) {
        let lo = t.saturating_sub(window);
        let hi = (t + window).min(n - 1);
        let stable = learning[lo..=hi].iter().all(|&y| (learning[t] - y).abs() <= threshold);
        if !stable {
            continue;
        }
        stable_steps.push(t + 1);
        let mean = learning[t - 2..=t + 2].iter().sum::<f64>() / 5.0;
        sigma_max = sigma_max.max((learning[t] - mean).abs());
    }
    Ok(NoiseEstimate {
        sigma_max,
        stability_threshold: threshold,
        stability_window: window,
        stable_steps,
    })
}

/// Models kept for ridge intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFilter {
    /// 0-based model indices, increasing.
    pub kept: Vec<usize>,
    pub rmse: Vec<f64>,
    pub best_rmse: f64,
    /// The best model fits the learning part exactly, so only exact models
    /// survive the factor-10 rule.
    pub zero_best: bool,
}

/// Keeps the models whose learning-part RMSE is at most 10 times the best.
pub fn filter_models(learning: &[f64], ens: &EnsembleMatrix) -> Result<ModelFilter> {
    let l = learning.len();
    if l == 0 || ens.n_steps() < l {
        return Err(Error::InsufficientHistory {
            required: 1,
            available: l.min(ens.n_steps()),
        });
    }
    let rmse: Vec<f64> = (0..ens.n_models())
        .map(|j| {
            let sse: f64 = learning.iter().enumerate().map(|(t, y)| (ens.value(j, t) - y).powi(2)).sum();
            (sse / l as f64).sqrt()
        })
        .collect();
    let best_rmse = rmse.iter().copied().fold(f64::INFINITY, f64::min);
    let kept = (0..rmse.len()).filter(|&j| rmse[j] <= 10.0 * best_rmse).collect();
    Ok(ModelFilter {
        kept,
        rmse,
        best_rmse,
        zero_best: best_rmse == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{default_step_times, PropertyKind, SeriesId};

    #[test]
    fn constant_series_has_zero_noise() {
        let est = estimate_noise(&[42.0; 40], 150.0, STABILITY_WINDOW).unwrap();
        assert_eq!(est.sigma_max, 0.0);
        assert_eq!(est.stable_steps, (3..=38).collect::<Vec<_>>());
    }

    #[test]
    fn single_spike_example() {
        let est = estimate_noise(&[0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0], 150.0, STABILITY_WINDOW).unwrap();
        assert!(est.stable_steps.contains(&4));
        assert_eq!(est.sigma_max, 4.0);
    }

    #[test]
    fn wild_sawtooth_has_no_stable_step() {
        let y: Vec<f64> = (0..60).map(|t| if t % 2 == 0 { 0.0 } else { 1000.0 }).collect();
        let est = estimate_noise(&y, 150.0, STABILITY_WINDOW).unwrap();
        assert!(est.stable_steps.is_empty());
        assert_eq!(est.sigma_max, 0.0);
    }

    #[test]
    fn threshold_must_be_positive() {
        assert!(estimate_noise(&[1.0; 10], 0.0, 15).is_err());
    }

    fn ens(trajs: &[Vec<f64>]) -> EnsembleMatrix {
        let id = SeriesId::new(PropertyKind::Other, "W", "u").unwrap();
        EnsembleMatrix::from_trajectories(id, trajs, default_step_times(trajs[0].len())).unwrap()
    }

    #[test]
    fn filter_keeps_models_within_factor_ten() {
        let y = vec![0.0; 4];
        let f = filter_models(&y, &ens(&[vec![1.0; 4], vec![5.0; 4], vec![11.0; 4]])).unwrap();
        assert_eq!(f.kept, vec![0, 1]);
        assert_eq!(f.best_rmse, 1.0);
        assert!(!f.zero_best);
    }

    #[test]
    fn filter_with_exact_model_keeps_only_exact_ones() {
        let y = vec![1.0, 2.0, 3.0];
        let f = filter_models(&y, &ens(&[vec![1.5, 2.0, 3.0], y.clone(), y.clone()])).unwrap();
        assert_eq!(f.kept, vec![1, 2]);
        assert!(f.zero_best);
    }

    #[test]
    fn identical_models_all_kept() {
        let f = filter_models(&[0.0, 1.0], &ens(&vec![vec![3.0, 3.0]; 4])).unwrap();
        assert_eq!(f.kept, vec![0, 1, 2, 3]);
    }
}
