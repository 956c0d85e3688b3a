//! Accuracy evaluation and regret-bound certification.
//!
//! RMSEs are taken over steps `burn_in + 1 ..= T` (1-based), i.e. the first
//! `burn_in` forecasts are left out. The bound checks compare a fixed
//! hyperparameter run against the worst-case guarantees of EWA (best single
//! model) and Ridge (best weight vector in a Euclidean ball).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::aggregators::aggregate;
use crate::types::{is_on_simplex, AggregationTrace, Algorithm, EnsembleMatrix, ObservationSeries, SeriesId, WeightFlavor, WeightVector};

/// Iteration cap of the convex oracle.
pub const ORACLE_MAX_ITERATIONS: usize = 50_000;

/// Certification tolerance on the Frank-Wolfe gap, relative to the
/// gradient scale.
pub const ORACLE_GAP_TOLERANCE: f64 = 1e-6;

/// Relative slack allowed on the right-hand side of a bound check to absorb
/// summation rounding.
const BOUND_SLACK: f64 = 1e-12;

/// Default number of leading forecasts excluded from evaluation.
pub fn default_burn_in(n_steps: usize) -> usize {
    n_steps / 4
}

/// Root mean squared error of `forecasts` against `obs` over steps
/// `burn_in + 1 ..= T`.
pub fn rmse(forecasts: &[f64], obs: &[f64], burn_in: usize) -> Result<f64> {
    if forecasts.len() != obs.len() {
        return Err(Error::LengthMismatch {
            observations: obs.len(),
            ensemble: forecasts.len(),
        });
    }
    if burn_in >= obs.len() {
        return Err(Error::invalid(
            "burn-in",
            format!("{burn_in} leaves no step to evaluate out of {}", obs.len()),
        ));
    }
    let n = (obs.len() - burn_in) as f64;
    let sse: f64 = forecasts[burn_in..]
        .iter()
        .zip(&obs[burn_in..])
        .map(|(f, y)| (f - y).powi(2))
        .sum();
    Ok((sse / n).sqrt())
}

/// Best fixed convex combination over the evaluated window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexOracle {
    pub weights: Vec<f64>,
    pub rmse: f64,
    /// Mean squared error at `weights`.
    pub objective: f64,
    /// Frank-Wolfe gap `max_j grad . (w - e_j)` at `weights`.
    pub gap: f64,
    /// Scale the gap is certified against.
    pub scale: f64,
    pub iterations: usize,
}

/// Quadratic `w' Q w - 2 c' w + d` giving the mean squared error of the
/// combination `w` over a window.
#[derive(Debug, Clone)]
struct WindowQuadratic {
    n: usize,
    q: Vec<f64>,
    c: Vec<f64>,
    d: f64,
}

impl WindowQuadratic {
    fn new(obs: &[f64], ens: &EnsembleMatrix, burn_in: usize) -> Self {
        let n = ens.n_models();
        let count = (obs.len() - burn_in) as f64;
        let mut q = vec![0.0; n * n];
        let mut c = vec![0.0; n];
        let mut d = 0.0;
        for (t, &y) in obs.iter().enumerate().skip(burn_in) {
            let m = ens.column(t);
            for i in 0..n {
                c[i] += y * m[i];
                for j in i..n {
                    q[i * n + j] += m[i] * m[j];
                }
            }
            d += y * y;
        }
        for i in 0..n {
            for j in i..n {
                q[i * n + j] /= count;
                q[j * n + i] = q[i * n + j];
            }
            c[i] /= count;
        }
        WindowQuadratic { n, q, c, d: d / count }
    }

    fn value(&self, w: &[f64]) -> f64 {
        let n = self.n;
        let mut v = self.d;
        for i in 0..n {
            let row = &self.q[i * n..(i + 1) * n];
            let qw: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            v += w[i] * qw - 2.0 * self.c[i] * w[i];
        }
        v.max(0.0)
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.q[i * n..(i + 1) * n];
            out[i] = 2.0 * (row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - self.c[i]);
        }
    }

    fn lipschitz(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.n, self.n, &self.q);
        let top = SymmetricEigen::new(m).eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x));
        2.0 * top
    }

    fn gap_scale(&self) -> f64 {
        let qmax = self.q.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let cmax = self.c.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        1.0 + 2.0 * (qmax + cmax)
    }

    fn frank_wolfe_gap(&self, w: &[f64]) -> f64 {
        let mut g = vec![0.0; self.n];
        self.gradient(w, &mut g);
        let gw: f64 = g.iter().zip(w).map(|(a, b)| a * b).sum();
        let gmin = g.iter().fold(f64::INFINITY, |a, &x| a.min(x));
        (gw - gmin).max(0.0)
    }

    /// Stationary point of the quadratic on the affine hull of the face
    /// `support`, or `None` when it leaves the face.
    fn face_minimizer(&self, support: &[usize]) -> Option<Vec<f64>> {
        let k = support.len();
        let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = 2.0 * self.q[i * self.n + j];
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
            rhs[a] = 2.0 * self.c[i];
        }
        rhs[k] = 1.0;
        let sol = kkt.svd(true, true).solve(&rhs, 1e-13).ok()?;
        let mut w = vec![0.0; self.n];
        for (a, &i) in support.iter().enumerate() {
            if !(sol[a] >= 0.0) {
                return None;
            }
            w[i] = sol[a];
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= sum);
        Some(w)
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumulative += ui;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if ui - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Best convex combination of the models on the evaluated window.
///
/// Accelerated projected gradient with exact simplex projection and
/// adaptive restart. Stops when a pass of `N` iterations improves the
/// objective by less than `1e-12` relative, or after
/// [`ORACLE_MAX_ITERATIONS`]. The result is then polished on its support by
/// solving the face's KKT system, and certified by a Frank-Wolfe gap below
/// [`ORACLE_GAP_TOLERANCE`] times the gradient scale.
pub fn best_convex_oracle(obs: &[f64], ens: &EnsembleMatrix, burn_in: usize) -> Result<ConvexOracle> {
    let n = ens.n_models();
    if n == 0 {
        return Err(Error::invalid("ensemble", "no models"));
    }
    if obs.len() > ens.n_steps() {
        return Err(Error::LengthMismatch {
            observations: obs.len(),
            ensemble: ens.n_steps(),
        });
    }
    if burn_in >= obs.len() {
        return Err(Error::invalid(
            "burn-in",
            format!("{burn_in} leaves no step to evaluate out of {}", obs.len()),
        ));
    }
    let quad = WindowQuadratic::new(obs, ens, burn_in);
    let lipschitz = quad.lipschitz();
    let scale = quad.gap_scale();

    let mut w = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    if n > 1 && lipschitz > 0.0 {
        let step = 1.0 / lipschitz;
        let mut y = w.clone();
        let mut momentum = 1.0f64;
        let mut grad = vec![0.0; n];
        let mut f = quad.value(&w);
        let mut checkpoint = f;
        while iterations < ORACLE_MAX_ITERATIONS {
            iterations += 1;
            quad.gradient(&y, &mut grad);
            let trial: Vec<f64> = y.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let next = project_to_simplex(&trial);
            let f_next = quad.value(&next);
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            // Restart when the momentum direction points uphill.
            let uphill: f64 = grad.iter().zip(next.iter().zip(&w)).map(|(g, (a, b))| g * (a - b)).sum();
            if uphill > 0.0 || f_next > f {
                momentum = 1.0;
                y.clone_from(&w);
                if f_next > f {
                    continue;
                }
            } else {
                let beta = (momentum - 1.0) / next_momentum;
                y = next.iter().zip(&w).map(|(a, b)| a + beta * (a - b)).collect();
                momentum = next_momentum;
            }
            w = next;
            f = f_next;
            if iterations % n == 0 {
                if checkpoint - f <= 1e-12 * checkpoint.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
                checkpoint = f;
            }
        }
        let support: Vec<usize> = (0..n).filter(|&j| w[j] > 0.0).collect();
        if let Some(polished) = quad.face_minimizer(&support) {
            if quad.value(&polished) <= quad.value(&w) {
                w = polished;
            }
        }
    }
    // Report the error of the combination itself, and fall back to the best
    // vertex when rounding leaves the iterate behind it.
    let fit = |w: &[f64]| -> Result<f64> {
        let forecasts: Vec<f64> = (0..obs.len()).map(|t| aggregate(w, ens.column(t))).collect();
        rmse(&forecasts, obs, burn_in)
    };
    let mut error = fit(&w)?;
    for (j, r) in model_rmses(obs, ens, burn_in)?.into_iter().enumerate() {
        if r < error {
            error = r;
            w = vec![0.0; n];
            w[j] = 1.0;
        }
    }
    let objective = error * error;
    let gap = quad.frank_wolfe_gap(&w);
    if gap > ORACLE_GAP_TOLERANCE * scale {
        return Err(Error::NoConvergence {
            solver: "convex oracle",
            iterations,
            residual: gap,
        });
    }
    debug_assert!(is_on_simplex(&w));
    Ok(ConvexOracle {
        rmse: error,
        weights: w,
        objective,
        gap,
        scale,
        iterations,
    })
}

/// RMSE of every model over the evaluated window.
pub fn model_rmses(obs: &[f64], ens: &EnsembleMatrix, burn_in: usize) -> Result<Vec<f64>> {
    (0..ens.n_models())
        .map(|j| rmse(&ens.trajectory(j)[..obs.len()], obs, burn_in))
        .collect()
}

/// Accuracy of one run next to the best single model and the best convex
/// combination, all over steps `burn_in + 1 ..= T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub series: SeriesId,
    pub algorithm: Algorithm,
    /// Number of leading steps excluded; the first evaluated step is
    /// `burn_in + 1`.
    pub burn_in: usize,
    pub rmse_algorithm: f64,
    pub rmse_best_model: f64,
    /// 0-based; ties go to the lowest index.
    pub best_model_index: usize,
    pub rmse_best_convex: f64,
    pub convex_oracle_weights: WeightVector,
}

impl RmseReport {
    pub fn ratio_to_convex(&self) -> f64 {
        self.rmse_algorithm / self.rmse_best_convex
    }

    pub fn ratio_to_best_model(&self) -> f64 {
        self.rmse_algorithm / self.rmse_best_model
    }
}

/// Algorithm-independent references of one series: per-model RMSEs and the
/// convex oracle, computed once and shared by every run on the series.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub burn_in: usize,
    pub model_rmse: Vec<f64>,
    pub best_model_index: usize,
    pub rmse_best_model: f64,
    pub oracle: ConvexOracle,
}

impl Baseline {
    pub fn new(obs: &[f64], ens: &EnsembleMatrix, burn_in: usize) -> Result<Self> {
        let model_rmse = model_rmses(obs, ens, burn_in)?;
        let (best_model_index, rmse_best_model) = model_rmse
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (j, r)| if r < best.1 { (j, r) } else { best });
        let oracle = best_convex_oracle(obs, ens, burn_in)?;
        Ok(Baseline {
            burn_in,
            model_rmse,
            best_model_index,
            rmse_best_model,
            oracle,
        })
    }

    pub fn report(&self, trace: &AggregationTrace, obs: &ObservationSeries, algorithm: Algorithm) -> Result<RmseReport> {
        let y = obs.values();
        if trace.len() != y.len() {
            return Err(Error::LengthMismatch {
                observations: y.len(),
                ensemble: trace.len(),
            });
        }
        let convex_oracle_weights =
            WeightVector::new(self.oracle.weights.clone(), WeightFlavor::Convex, Algorithm::Uniform, 0.0, y.len() - 1)?;
        Ok(RmseReport {
            series: obs.id().clone(),
            algorithm,
            burn_in: self.burn_in,
            rmse_algorithm: rmse(&trace.forecasts(), y, self.burn_in)?,
            rmse_best_model: self.rmse_best_model,
            best_model_index: self.best_model_index,
            // The simplex holds every vertex, so this only trims rounding.
            rmse_best_convex: self.oracle.rmse.min(self.rmse_best_model),
            convex_oracle_weights,
        })
    }
}

pub fn rmse_report(
    trace: &AggregationTrace,
    obs: &ObservationSeries,
    ens: &EnsembleMatrix,
    algorithm: Algorithm,
    burn_in: usize,
) -> Result<RmseReport> {
    Baseline::new(obs.values(), ens, burn_in)?.report(trace, obs, algorithm)
}

/// Inputs of a regret-bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretBoundParams {
    /// Bound on the absolute value of every observation and model forecast.
    pub b: f64,
    /// Radius of the Ridge comparator ball; ignored for EWA.
    pub v: f64,
    pub t: usize,
    pub n: usize,
    pub hyperparameter: f64,
}

impl RegretBoundParams {
    /// Takes `B` as the largest absolute observation or model forecast over
    /// the steps covered by `trace`.
    pub fn from_data(trace: &AggregationTrace, ens: &EnsembleMatrix, hyperparameter: f64, v: f64) -> Result<Self> {
        let t = trace.len();
        if t == 0 || t > ens.n_steps() {
            return Err(Error::invalid("trace", format!("{t} steps for an ensemble of {}", ens.n_steps())));
        }
        let mut b = 0.0f64;
        for (s, r) in trace.records().iter().enumerate() {
            b = b.max(r.observation.abs());
            b = ens.column(s).iter().fold(b, |a, x| a.max(x.abs()));
        }
        let params = RegretBoundParams {
            b,
            v,
            t,
            n: ens.n_models(),
            hyperparameter,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(Error::invalid("bound B", format!("{}", self.b)));
        }
        if !(self.v >= 1.0) || !self.v.is_finite() {
            return Err(Error::invalid("ball radius V", format!("{} (must be at least 1)", self.v)));
        }
        if self.t == 0 || self.n == 0 {
            return Err(Error::invalid("bound check", "empty trace or ensemble"));
        }
        if !(self.hyperparameter > 0.0) || !self.hyperparameter.is_finite() {
            return Err(Error::invalid("hyperparameter", format!("{}", self.hyperparameter)));
        }
        Ok(())
    }
}

/// Both sides of a regret-bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub algorithm: Algorithm,
    /// Average squared loss of the run.
    pub lhs: f64,
    /// Average squared loss of the best comparator.
    pub comparator: f64,
    pub epsilon: f64,
    /// `comparator + epsilon`.
    pub rhs: f64,
    /// `rhs - lhs`; nonnegative when the bound holds.
    pub margin: f64,
}

impl BoundReport {
    fn new(algorithm: Algorithm, lhs: f64, comparator: f64, epsilon: f64) -> Result<Self> {
        let rhs = comparator + epsilon;
        let report = BoundReport {
            algorithm,
            lhs,
            comparator,
            epsilon,
            rhs,
            margin: rhs - lhs,
        };
        if lhs > rhs + BOUND_SLACK * (1.0 + rhs.abs()) {
            return Err(Error::BoundViolated {
                algorithm: algorithm.as_str(),
                lhs,
                rhs,
            });
        }
        Ok(report)
    }
}

fn check_trace(trace: &AggregationTrace, ens: &EnsembleMatrix, params: &RegretBoundParams) -> Result<()> {
    params.validate()?;
    if trace.len() != params.t || ens.n_models() != params.n || trace.len() > ens.n_steps() {
        return Err(Error::invalid(
            "bound check",
            format!(
                "trace has {} steps and ensemble {} models, parameters say T = {} and N = {}",
                trace.len(),
                ens.n_models(),
                params.t,
                params.n
            ),
        ));
    }
    if let Some(r) = trace.records().iter().find(|r| r.hyperparameter != params.hyperparameter) {
        return Err(Error::invalid(
            "bound check",
            format!("trace uses hyperparameter {} at step {}, expected a fixed {}", r.hyperparameter, r.step + 1, params.hyperparameter),
        ));
    }
    Ok(())
}

fn average_loss(trace: &AggregationTrace) -> f64 {
    let sum: f64 = trace.records().iter().map(|r| (r.forecast - r.observation).powi(2)).sum();
    sum / trace.len() as f64
}

/// Regret term of EWA for data in `[0, B]`.
///
/// For `eta > 1/(2B^2)` the second term is `eta * max(B^2, B^4) / 8`: squared
/// losses range over `[0, B^2]`, so `B^4` is what the Hoeffding argument
/// gives once `B > 1`.
pub fn ewa_epsilon(params: &RegretBoundParams) -> f64 {
    let RegretBoundParams { b, t, n, hyperparameter: eta, .. } = *params;
    let base = (n as f64).ln() / (eta * t as f64);
    let b2 = b * b;
    if eta <= 1.0 / (2.0 * b2) {
        base
    } else {
        base + eta * b2.max(b2 * b2) / 8.0
    }
}

/// Regret term of Ridge for data in `[-B, B]` against the ball of radius `V`.
pub fn ridge_epsilon(params: &RegretBoundParams) -> f64 {
    let RegretBoundParams { b, v, t, n, hyperparameter: lambda } = *params;
    let (b2, t, n) = (b * b, t as f64, n as f64);
    (lambda * v * v + 4.0 * n * b2 * (1.0 + n * b2 * t / lambda) * (b2 * t / lambda).ln_1p() + 5.0 * b2) / t
}

/// Checks a fixed-`eta` EWA trace against the best single model.
///
/// Losses are recomputed from the forecast and observation columns.
pub fn check_ewa_bound(trace: &AggregationTrace, ens: &EnsembleMatrix, params: &RegretBoundParams) -> Result<BoundReport> {
    check_trace(trace, ens, params)?;
    let negative = trace.records().iter().any(|r| r.observation < 0.0)
        || (0..params.t).any(|s| ens.column(s).iter().any(|&m| m < 0.0));
    if negative {
        return Err(Error::invalid("bound check", "EWA bound needs nonnegative data"));
    }
    let comparator = (0..params.n)
        .map(|j| {
            trace
                .records()
                .iter()
                .enumerate()
                .map(|(s, r)| (ens.value(j, s) - r.observation).powi(2))
                .sum::<f64>()
                / params.t as f64
        })
        .fold(f64::INFINITY, f64::min);
    BoundReport::new(Algorithm::Ewa, average_loss(trace), comparator, ewa_epsilon(params))
}

/// Checks a fixed-`lambda` Ridge trace against the best weight vector in the
/// ball of radius `V`.
pub fn check_ridge_bound(trace: &AggregationTrace, ens: &EnsembleMatrix, params: &RegretBoundParams) -> Result<BoundReport> {
    check_trace(trace, ens, params)?;
    let obs: Vec<f64> = trace.records().iter().map(|r| r.observation).collect();
    let (_, comparator) = ball_constrained_least_squares(&obs, ens, params.v)?;
    BoundReport::new(Algorithm::Ridge, average_loss(trace), comparator, ridge_epsilon(params))
}

/// Minimizes `(1/T) sum_t (v . m_t - y_t)^2` over `|v| <= radius`, for the
/// first `T = obs.len()` steps. Returns the minimizer and the minimum.
///
/// When the minimum-norm least-squares solution lies in the ball it is the
/// answer; otherwise the multiplier `mu` of `(Q + mu I) v = c` is found by
/// bisection so that `|v| = radius`.
pub fn ball_constrained_least_squares(obs: &[f64], ens: &EnsembleMatrix, radius: f64) -> Result<(Vec<f64>, f64)> {
    if obs.is_empty() || obs.len() > ens.n_steps() {
        return Err(Error::invalid("least squares", format!("{} steps", obs.len())));
    }
    let quad = WindowQuadratic::new(obs, ens, 0);
    let n = quad.n;
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &quad.q));
    let c = eig.eigenvectors.transpose() * DVector::from_column_slice(&quad.c);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x));
    let floor = n as f64 * f64::EPSILON * top;
    let coords = |mu: f64| -> Vec<f64> {
        eig.eigenvalues
            .iter()
            .zip(c.iter())
            .map(|(&l, &ci)| {
                if mu > 0.0 {
                    ci / (l.max(0.0) + mu)
                } else if l > floor {
                    ci / l
                } else {
                    0.0
                }
            })
            .collect()
    };
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut x = coords(0.0);
    if norm(&x) > radius {
        let mut lo = 0.0;
        let mut hi = 1.0f64;
        while norm(&coords(hi)) > radius {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::NoConvergence {
                    solver: "trust-region multiplier",
                    iterations: 0,
                    residual: f64::INFINITY,
                });
            }
        }
        let mut iterations = 0;
        while hi - lo > 1e-10 * hi.max(f64::MIN_POSITIVE) {
            let mid = 0.5 * (lo + hi);
            if norm(&coords(mid)) > radius {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
            if iterations > 10_000 {
                return Err(Error::NoConvergence {
                    solver: "trust-region multiplier",
                    iterations,
                    residual: hi - lo,
                });
            }
        }
        x = coords(hi);
    }
    let v = (eig.eigenvectors * DVector::from_vec(x)).as_slice().to_vec();
    let value = obs
        .iter()
        .enumerate()
        .map(|(t, &y)| (ens.column(t).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - y).powi(2))
        .sum::<f64>()
        / obs.len() as f64;
    Ok((v, value))
}
