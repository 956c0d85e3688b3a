use super::OnlineAggregator;
use crate::error::{Error, Result};
use crate::types::{Algorithm, WeightFlavor, WeightVector};

/// Exponentially weighted average forecaster with a fixed learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EwaState {
    eta: f64,
    cumulative_losses: Vec<f64>,
    steps_seen: usize,
}

impl EwaState {
    pub fn new(eta: f64, n_models: usize) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::invalid("learning rate", format!("{eta}")));
        }
        if n_models == 0 {
            return Err(Error::invalid("ensemble", "need at least one model"));
        }
        Ok(EwaState {
            eta,
            cumulative_losses: vec![0.0; n_models],
            steps_seen: 0,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn cumulative_losses(&self) -> &[f64] {
        &self.cumulative_losses
    }
}

/// `exp(-eta L_j) / sum_k exp(-eta L_k)`, shifted by `min_k L_k` so the
/// largest term is exactly 1.
pub fn softmin_weights(eta: f64, losses: &[f64]) -> Vec<f64> {
    let n = losses.len();
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = losses.iter().map(|&l| (-eta * (l - min)).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        // Unreachable after the shift: the minimizing model contributes exp(0).
        return vec![1.0 / n as f64; n];
    }
    w.iter_mut().for_each(|x| *x /= total);
    w
}

impl OnlineAggregator for EwaState {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ewa
    }

    fn hyperparameter(&self) -> f64 {
        self.eta
    }

    fn n_models(&self) -> usize {
        self.cumulative_losses.len()
    }

    fn steps_seen(&self) -> usize {
        self.steps_seen
    }

    fn weights(&mut self) -> Result<WeightVector> {
        let n = self.n_models();
        if self.steps_seen == 0 {
            return Ok(WeightVector::uniform(n, Algorithm::Ewa, self.eta, 0));
        }
        WeightVector::new(
            softmin_weights(self.eta, &self.cumulative_losses),
            WeightFlavor::Convex,
            Algorithm::Ewa,
            self.eta,
            self.steps_seen,
        )
    }

    fn update(&mut self, y: f64, column: &[f64]) {
        for (l, m) in self.cumulative_losses.iter_mut().zip(column) {
            *l += (y - m).powi(2);
        }
        self.steps_seen += 1;
    }
}
