use nalgebra::{DMatrix, DVector};

use super::{OnlineAggregator, SufficientStats};
use crate::error::{Error, Result};
use crate::types::{Algorithm, WeightFlavor, WeightVector};

/// Spectral form of `lambda I + G` for a fixed Gram matrix, reusable across
/// any number of regularization factors.
///
/// Eigenvalues below `n * eps * max_eigenvalue` are treated as numerically
/// zero. Along those directions the regularized inverse is `1 / lambda` when
/// `lambda` exceeds that floor and `0` otherwise (minimum-norm solution), so
/// rounding noise in a rank-deficient Gram is never amplified by a tiny
/// `lambda`.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    floor: f64,
    /// `Q^T b` for the moment the system was built with.
    projected_moment: Vec<f64>,
}

impl RidgeSystem {
    pub fn new(stats: &SufficientStats) -> Result<Self> {
        Self::from_parts(stats.n(), stats.gram(), stats.moment())
    }

    /// `gram` is row-major `n x n` and symmetric positive semidefinite.
    ///
    /// Models whose diagonal entry is zero have an all-zero row, so only the
    /// remaining block is decomposed and each such model contributes a unit
    /// eigenvector with eigenvalue 0.
    pub fn from_parts(n: usize, gram: &[f64], moment: &[f64]) -> Result<Self> {
        let active: Vec<usize> = (0..n).filter(|&j| gram[j * n + j] != 0.0).collect();
        let mut eigenvalues = vec![0.0; n];
        let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
        if !active.is_empty() {
            let block = DMatrix::from_fn(active.len(), active.len(), |r, c| gram[active[r] * n + active[c]]);
            let eig = block
                .try_symmetric_eigen(f64::EPSILON, 10_000)
                .ok_or(Error::SolveFailure { step: 0 })?;
            if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|d| !d.is_finite()) {
                return Err(Error::SolveFailure { step: 0 });
            }
            for (k, &d) in eig.eigenvalues.iter().enumerate() {
                eigenvalues[k] = d;
                for (r, &row) in active.iter().enumerate() {
                    eigenvectors[(row, k)] = eig.eigenvectors[(r, k)];
                }
            }
        }
        for (k, j) in (0..n).filter(|&j| gram[j * n + j] == 0.0).enumerate() {
            eigenvectors[(j, active.len() + k)] = 1.0;
        }
        let max = eigenvalues.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
        let floor = max * n as f64 * f64::EPSILON;
        let projected_moment = (eigenvectors.transpose() * DVector::from_column_slice(moment))
            .iter()
            .copied()
            .collect();
        Ok(RidgeSystem {
            eigenvalues,
            eigenvectors,
            floor,
            projected_moment,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    fn inverse_eigenvalue(&self, lambda: f64, d: f64) -> f64 {
        if d > self.floor {
            1.0 / (lambda + d)
        } else if lambda > self.floor {
            1.0 / (lambda + d.max(0.0))
        } else {
            0.0
        }
    }

    fn apply(&self, lambda: f64, projected: &[f64]) -> Result<Vec<f64>> {
        let scaled = DVector::from_iterator(
            self.n(),
            projected
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, &d)| c * self.inverse_eigenvalue(lambda, d)),
        );
        let x = &self.eigenvectors * scaled;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolveFailure { step: 0 });
        }
        Ok(x.iter().copied().collect())
    }

    /// Ridge weights `(lambda I + G)^{-1} b`.
    pub fn weights(&self, lambda: f64) -> Result<Vec<f64>> {
        self.apply(lambda, &self.projected_moment)
    }

    /// `(lambda I + G)^{-1} rhs`.
    pub fn solve(&self, lambda: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let projected: Vec<f64> = (self.eigenvectors.transpose() * DVector::from_column_slice(rhs))
            .iter()
            .copied()
            .collect();
        self.apply(lambda, &projected)
    }
}

/// Online ridge regression with a fixed regularization factor.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeState {
    lambda: f64,
    stats: SufficientStats,
}

impl RidgeState {
    pub fn new(lambda: f64, n_models: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("regularization factor", format!("{lambda}")));
        }
        if n_models == 0 {
            return Err(Error::invalid("ensemble", "need at least one model"));
        }
        Ok(RidgeState {
            lambda,
            stats: SufficientStats::new(n_models),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }
}

impl OnlineAggregator for RidgeState {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ridge
    }

    fn hyperparameter(&self) -> f64 {
        self.lambda
    }

    fn n_models(&self) -> usize {
        self.stats.n()
    }

    fn steps_seen(&self) -> usize {
        self.stats.steps()
    }

    fn weights(&mut self) -> Result<WeightVector> {
        let step = self.stats.steps();
        if step == 0 {
            return Ok(WeightVector::uniform(self.n_models(), Algorithm::Ridge, self.lambda, 0));
        }
        let w = RidgeSystem::new(&self.stats)
            .and_then(|s| s.weights(self.lambda))
            .map_err(|_| Error::SolveFailure { step: step + 1 })?;
        WeightVector::new(w, WeightFlavor::Linear, Algorithm::Ridge, self.lambda, step)
    }

    fn update(&mut self, y: f64, column: &[f64]) {
        self.stats.update(y, column);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Penalized normal equations formed from the raw history and solved by LU.
    fn dense_oracle(lambda: f64, history: &[(f64, Vec<f64>)], n: usize) -> Vec<f64> {
        let mut a = DMatrix::<f64>::identity(n, n) * lambda;
        let mut b = DVector::<f64>::zeros(n);
        for (y, m) in history {
            let m = DVector::from_column_slice(m);
            a += &m * m.transpose();
            b += &m * *y;
        }
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn no_history_is_uniform() {
        let mut s = RidgeState::new(1.0, 4).unwrap();
        assert_eq!(s.weights().unwrap().weights(), &[0.25; 4]);
    }

    #[test]
    fn scalar_hand_example() {
        // (1 + 2) w = 2
        let mut s = RidgeState::new(1.0, 1).unwrap();
        s.update(1.0, &[1.0]);
        s.update(1.0, &[1.0]);
        let w = s.weights().unwrap();
        assert!((w.weights()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, t) = (5, 30);
        let history: Vec<(f64, Vec<f64>)> = (0..t)
            .map(|_| (rng.random_range(-1.0..1.0), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        for lambda in [0.01, 1.0, 30.0] {
            let mut s = RidgeState::new(lambda, n).unwrap();
            for (y, m) in &history {
                s.update(*y, m);
            }
            let got = s.weights().unwrap();
            let want = dense_oracle(lambda, &history, n);
            for (g, w) in got.weights().iter().zip(&want) {
                assert!((g - w).abs() <= 1e-8, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn huge_lambda_sends_weights_to_zero() {
        let mut s = RidgeState::new(1e30, 3).unwrap();
        for t in 0..10 {
            s.update((t as f64).sin(), &[1.0, 0.5, -0.25]);
        }
        let w = s.weights().unwrap();
        let norm: f64 = w.weights().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-25);
    }

    #[test]
    fn rank_deficient_history_with_tiny_lambda_stays_finite() {
        let mut s = RidgeState::new(1e-30, 4).unwrap();
        // Duplicate models and a single observation: Gram has rank one.
        s.update(2.0, &[1.0, 1.0, 1.0, 1.0]);
        let w = s.weights().unwrap();
        let fit = aggregate_one(w.weights(), &[1.0; 4]);
        assert!((fit - 2.0).abs() < 1e-9, "{fit}");
        assert!(w.weights().iter().all(|x| (x - 0.5).abs() < 1e-9));
    }

    fn aggregate_one(w: &[f64], m: &[f64]) -> f64 {
        w.iter().zip(m).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn models_stuck_at_zero_are_decomposed_separately() {
        // Most models forecast exactly 0 so far; their Gram rows vanish.
        let n = 40;
        let mut history = Vec::new();
        let mut stats = SufficientStats::new(n);
        for t in 0..12 {
            let mut m = vec![0.0; n];
            m[3] = 10.0 + t as f64;
            m[17] = 2.0 * t as f64;
            m[30] = 50.0 + 20.0 * (t as f64).sin();
            let y = 5.0 + t as f64;
            stats.update(y, &m);
            history.push((y, m));
        }
        for lambda in [1e-3, 1.0, 1e4] {
            let got = RidgeSystem::new(&stats).unwrap().weights(lambda).unwrap();
            let want = dense_oracle(lambda, &history, n);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-9 * (1.0 + w.abs()), "{g} vs {w}");
            }
        }
        let empty = RidgeSystem::new(&SufficientStats::new(3)).unwrap();
        assert_eq!(empty.weights(1.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn solve_and_weights_agree() {
        let mut stats = SufficientStats::new(3);
        stats.update(1.0, &[1.0, 2.0, 0.0]);
        stats.update(-1.0, &[0.0, 1.0, 1.0]);
        let sys = RidgeSystem::new(&stats).unwrap();
        let a = sys.weights(0.3).unwrap();
        let b = sys.solve(0.3, stats.moment()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
