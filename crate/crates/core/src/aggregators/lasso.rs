use std::collections::VecDeque;

use super::{OnlineAggregator, SufficientStats};
use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::types::{Algorithm, WeightFlavor, WeightVector};

/// Sweep cap for [`coordinate_descent`].
pub const LASSO_MAX_SWEEPS: usize = 100_000;

/// Relative tolerance on the largest coordinate move in a full sweep.
const LASSO_TOLERANCE: f64 = 1e-10;

/// Once the raw history is at hand, descent also stops when `STALL_SWEEPS`
/// sweeps together lower the objective by less than `STALL_DECREASE` times
/// its value at zero, `sum_t y_t^2`.
const STALL_SWEEPS: usize = 25;
/// Sweeps between active-set restarts in [`lasso_solutions`].
const DESCENT_ROUND: usize = 500;
const STALL_DECREASE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub weights: Vec<f64>,
    pub sweeps: usize,
}

fn soft_threshold(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

/// Minimizes `lambda |v|_1 + v^T G v - 2 b^T v` by cyclic coordinate descent
/// with soft-thresholding, starting from `start` (zeros when `None`).
///
/// Between full sweeps the active (nonzero) coordinates are cycled until they
/// settle. After every sweep that still moved, the iterate is pushed along
/// that sweep's displacement by an exact line search; on strongly correlated
/// designs plain sweeps only shuttle mass between coordinates a little at a
/// time. Convergence is only declared on a full sweep whose largest move is
/// below `1e-10 * (1 + max |v_j|)`. Every sweep counts toward
/// [`LASSO_MAX_SWEEPS`].
pub fn coordinate_descent(gram: &[f64], moment: &[f64], lambda: f64, start: Option<&[f64]>) -> Result<LassoSolution> {
    coordinate_descent_capped(gram, moment, None, lambda, start, LASSO_MAX_SWEEPS)
}

pub(crate) fn coordinate_descent_capped(
    gram: &[f64],
    moment: &[f64],
    design: Option<&Design>,
    lambda: f64,
    start: Option<&[f64]>,
    max_sweeps: usize,
) -> Result<LassoSolution> {
    let n = moment.len();
    let start = start.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let (weights, sweeps, converged) = descend(gram, moment, design, lambda, start, max_sweeps);
    if converged {
        Ok(LassoSolution { weights, sweeps })
    } else {
        Err(Error::NoConvergence {
            solver: "lasso coordinate descent",
            iterations: sweeps,
            residual: lasso_kkt_residual(gram, moment, lambda, &weights).0,
        })
    }
}

/// The descent loop: final iterate, sweeps used, and whether it converged
/// within `max_sweeps`. A `design` enables the stall test.
fn descend(
    gram: &[f64],
    moment: &[f64],
    design: Option<&Design>,
    lambda: f64,
    start: Vec<f64>,
    max_sweeps: usize,
) -> (Vec<f64>, usize, bool) {
    let n = moment.len();
    debug_assert_eq!(gram.len(), n * n);
    let mut cd = Sweeper {
        gram,
        moment,
        half: 0.5 * lambda,
        n,
        v: start,
        gv: vec![0.0; n],
    };
    let mut sweeps = 0;
    let mut before = vec![0.0; n];
    let reference = design.map_or(0.0, |d| d.y.iter().map(|y| y * y).sum());
    let mut progress = Progress { design, lambda, recent: VecDeque::new(), reference };
    loop {
        cd.refresh();
        before.copy_from_slice(&cd.v);
        let moved = cd.sweep(0..n);
        sweeps += 1;
        if moved < LASSO_TOLERANCE * cd.scale() || progress.stuck(&cd.v) {
            return (cd.v, sweeps, true);
        }
        if sweeps >= max_sweeps {
            break;
        }
        cd.extrapolate(&before, lambda);
        loop {
            let active: Vec<usize> = (0..n).filter(|&j| cd.v[j] != 0.0).collect();
            before.copy_from_slice(&cd.v);
            let moved = cd.sweep(active.into_iter());
            sweeps += 1;
            if moved < LASSO_TOLERANCE * cd.scale() || sweeps >= max_sweeps {
                break;
            }
            if progress.stuck(&cd.v) {
                return (cd.v, sweeps, true);
            }
            cd.extrapolate(&before, lambda);
        }
        if sweeps >= max_sweeps {
            break;
        }
    }
    (cd.v, sweeps, false)
}

/// Watches the data-form objective across sweeps.
struct Progress<'a> {
    design: Option<&'a Design>,
    lambda: f64,
    recent: VecDeque<f64>,
    reference: f64,
}

impl Progress<'_> {
    fn stuck(&mut self, v: &[f64]) -> bool {
        let Some(d) = self.design else { return false };
        self.recent.push_back(d.objective(self.lambda, v));
        if self.recent.len() <= STALL_SWEEPS {
            return false;
        }
        let old = self.recent.pop_front().unwrap_or(f64::INFINITY);
        let new = self.recent.back().copied().unwrap_or(old);
        old - new <= STALL_DECREASE * self.reference
    }
}

struct Sweeper<'a> {
    gram: &'a [f64],
    moment: &'a [f64],
    half: f64,
    n: usize,
    v: Vec<f64>,
    /// `G v`, maintained incrementally.
    gv: Vec<f64>,
}

impl Sweeper<'_> {
    fn row(&self, j: usize) -> &[f64] {
        &self.gram[j * self.n..(j + 1) * self.n]
    }

    fn refresh(&mut self) {
        for i in 0..self.n {
            self.gv[i] = self.row(i).iter().zip(&self.v).map(|(a, b)| a * b).sum();
        }
    }

    fn scale(&self) -> f64 {
        1.0 + self.v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    /// One cyclic pass over `coords`; returns the largest absolute move.
    fn sweep(&mut self, coords: impl Iterator<Item = usize>) -> f64 {
        let n = self.n;
        let mut max_move = 0.0f64;
        for j in coords {
            let gjj = self.gram[j * n + j];
            let old = self.v[j];
            let new = if gjj > 0.0 {
                let r = self.moment[j] - (self.gv[j] - gjj * old);
                soft_threshold(r, self.half) / gjj
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                self.v[j] = new;
                let col = &self.gram[j * n..(j + 1) * n];
                for (g, &c) in self.gv.iter_mut().zip(col) {
                    *g += delta * c;
                }
                max_move = max_move.max(delta.abs());
            }
        }
        max_move
    }

    /// Exact minimization of the objective along `v + t d`, `t >= 0`, with
    /// `d = v - before`.
    fn extrapolate(&mut self, before: &[f64], lambda: f64) {
        let d: Vec<f64> = self.v.iter().zip(before).map(|(a, b)| a - b).collect();
        self.search(&d, lambda);
    }

    /// Moves to the exact minimizer of the objective along `v + t d`,
    /// `t >= 0`, if it improves the objective.
    fn search(&mut self, d: &[f64], lambda: f64) {
        let n = self.n;
        if d.iter().all(|&x| x == 0.0) {
            return;
        }
        let gd: Vec<f64> = (0..n).map(|i| self.row(i).iter().zip(d).map(|(a, b)| a * b).sum()).collect();
        // f(v + t d) = a t^2 + b t + lambda sum |v_j + t d_j| + const
        let a: f64 = d.iter().zip(&gd).map(|(x, y)| x * y).sum();
        let b: f64 = 2.0 * d.iter().zip(&self.gv).zip(self.moment).map(|((di, gvi), bi)| di * (gvi - bi)).sum::<f64>();
        let t = line_minimizer(a, b, lambda, &self.v, d);
        if !(t > 0.0) || !t.is_finite() {
            return;
        }
        let objective = |v: &[f64], gv: &[f64]| -> f64 {
            v.iter().zip(gv).zip(self.moment).map(|((x, g), m)| x * g - 2.0 * m * x).sum::<f64>()
                + lambda * v.iter().map(|x| x.abs()).sum::<f64>()
        };
        let current = objective(&self.v, &self.gv);
        let v_new: Vec<f64> = self.v.iter().zip(d).map(|(x, di)| x + t * di).collect();
        let gv_new: Vec<f64> = self.gv.iter().zip(&gd).map(|(g, gdi)| g + t * gdi).collect();
        if objective(&v_new, &gv_new) < current {
            self.v = v_new;
            self.gv = gv_new;
        }
    }
}

/// Minimizer over `t >= 0` of `a t^2 + b t + lambda sum_j |v_j + t d_j|`.
/// Coordinates that reach zero inside the step are snapped to exactly zero.
fn line_minimizer(a: f64, b: f64, lambda: f64, v: &[f64], d: &[f64]) -> f64 {
    // Kinks where a coordinate changes sign, in increasing order.
    let mut kinks: Vec<(f64, usize)> = v
        .iter()
        .zip(d)
        .enumerate()
        .filter(|(_, (&vi, &di))| di != 0.0 && vi * di < 0.0)
        .map(|(j, (&vi, &di))| (-vi / di, j))
        .collect();
    kinks.sort_by(|x, y| x.0.total_cmp(&y.0));
    // Slope of the l1 part just right of t = 0.
    let mut l1_slope: f64 = v
        .iter()
        .zip(d)
        .map(|(&vi, &di)| if vi != 0.0 { vi.signum() * di } else { di.abs() })
        .sum::<f64>()
        * lambda;
    let mut lo = 0.0;
    for &(knot, j) in &kinks {
        // Derivative on (lo, knot) is 2 a t + b + l1_slope.
        let slope_end = 2.0 * a * knot + b + l1_slope;
        if slope_end >= 0.0 {
            return stationary(a, b + l1_slope, lo, knot);
        }
        l1_slope += 2.0 * lambda * d[j].abs();
        lo = knot;
    }
    if a > 0.0 {
        stationary(a, b + l1_slope, lo, f64::INFINITY)
    } else {
        lo
    }
}

fn stationary(a: f64, slope0: f64, lo: f64, hi: f64) -> f64 {
    if a > 0.0 {
        (-slope0 / (2.0 * a)).clamp(lo, hi)
    } else if slope0 >= 0.0 {
        lo
    } else {
        hi
    }
}

/// A column joins the path only if its distance to the span of the active
/// columns exceeds this fraction of its norm.
/// Relative distance to the span of the support below which a column
/// counts as dependent.
const INDEPENDENCE: f64 = 1e-10;
/// Pivot cap of the active-set solve, per coordinate.
const ACTIVE_SET_PIVOTS: usize = 4;
/// The active-set solve stops after `ACTIVE_SET_IDLE` pivots that each lower
/// the objective by less than `ACTIVE_SET_DECREASE * sum_t y_t^2`.
const ACTIVE_SET_IDLE: usize = 3;
const ACTIVE_SET_DECREASE: f64 = 1e-13;
/// Optimality slack of the active-set solve, relative to the KKT scale.
const ACTIVE_SET_TOLERANCE: f64 = 1e-9;

/// Column-major copy of a Lasso history.
pub(crate) struct Design {
    y: Vec<f64>,
    cols: Vec<Vec<f64>>,
}

impl Design {
    pub(crate) fn new(history: &[(f64, Vec<f64>)]) -> Self {
        let n = history.first().map_or(0, |h| h.1.len());
        Design {
            y: history.iter().map(|h| h.0).collect(),
            cols: (0..n).map(|j| history.iter().map(|h| h.1[j]).collect()).collect(),
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.y.len()];
        for (c, &x) in self.cols.iter().zip(v) {
            if x != 0.0 {
                out.iter_mut().zip(c).for_each(|(o, ci)| *o += x * ci);
            }
        }
        out
    }

    fn residual(&self, v: &[f64]) -> Vec<f64> {
        self.y.iter().zip(self.apply(v)).map(|(y, f)| y - f).collect()
    }

    fn objective(&self, lambda: f64, v: &[f64]) -> f64 {
        self.residual(v).iter().map(|r| r * r).sum::<f64>() + lambda * v.iter().map(|x| x.abs()).sum::<f64>()
    }
}

/// Thin QR factorization of the active columns of the design, grown one
/// column at a time by twice-repeated Gram-Schmidt.
struct ActiveQr {
    q: Vec<Vec<f64>>,
    /// `r[i]` is column `i` of the upper-triangular factor.
    r: Vec<Vec<f64>>,
}

impl ActiveQr {
    fn new() -> Self {
        ActiveQr { q: Vec::new(), r: Vec::new() }
    }

    /// Appends `col`; `false` (and no change) if it is numerically in the
    /// span of the current columns.
    fn push(&mut self, col: &[f64]) -> bool {
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut u = col.to_vec();
        let mut coef = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (c, qi) in coef.iter_mut().zip(&self.q) {
                let d: f64 = qi.iter().zip(&u).map(|(a, b)| a * b).sum();
                *c += d;
                u.iter_mut().zip(qi).for_each(|(x, q)| *x -= d * q);
            }
        }
        let rho = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(rho > INDEPENDENCE * norm) {
            return false;
        }
        u.iter_mut().for_each(|x| *x /= rho);
        coef.push(rho);
        self.q.push(u);
        self.r.push(coef);
        true
    }

    /// Drops column `i`, restoring the triangular factor by Givens
    /// rotations.
    fn remove(&mut self, i: usize) {
        self.r.remove(i);
        for c in i..self.r.len() {
            let (a, b) = (self.r[c][c], self.r[c][c + 1]);
            let h = a.hypot(b);
            let (cos, sin) = (a / h, b / h);
            for col in &mut self.r[c..] {
                let (x, y) = (col[c], col[c + 1]);
                col[c] = cos * x + sin * y;
                col[c + 1] = cos * y - sin * x;
            }
            self.r[c].truncate(c + 1);
            let (lo, hi) = self.q.split_at_mut(c + 1);
            for (x, y) in lo[c].iter_mut().zip(hi[0].iter_mut()) {
                let (qx, qy) = (*x, *y);
                *x = cos * qx + sin * qy;
                *y = cos * qy - sin * qx;
            }
        }
        self.q.pop();
    }

    /// Solves `R x = rhs`.
    fn back(&self, rhs: &[f64]) -> Vec<f64> {
        let k = rhs.len();
        let mut x = rhs.to_vec();
        for i in (0..k).rev() {
            let dot: f64 = (i + 1..k).map(|c| self.r[c][i] * x[c]).sum();
            x[i] = (x[i] - dot) / self.r[i][i];
        }
        x
    }

    /// Solves `R^T x = rhs`.
    fn forward(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        for i in 0..rhs.len() {
            let dot: f64 = (0..i).map(|c| self.r[i][c] * x[c]).sum();
            x[i] = (x[i] - dot) / self.r[i][i];
        }
        x
    }

    /// Least-squares coefficients of `y` on the active columns.
    fn least_squares(&self, y: &[f64]) -> Vec<f64> {
        let qty: Vec<f64> = self.q.iter().map(|qi| qi.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
        self.back(&qty)
    }
}

/// Active-set solve of `argmin lambda |v|_1 + sum_t (y_t - v . m_t)^2`
/// from `start` on the raw columns, in the manner of Lawson and Hanson's
/// nonnegative least squares with each coordinate carrying its sign.
///
/// On the current support the objective is minimized with the signs held
/// fixed (a least-squares solve by QR); if that crosses zero somewhere the
/// iterate stops at the crossing and the coordinate leaves. Otherwise the
/// most violated zero coordinate joins. A joining column that is numerically
/// in the span of the support is traded against its expansion in the
/// support, which leaves the fit unchanged and lowers the penalty until a
/// support coordinate reaches zero.
fn active_set(design: &Design, lambda: f64, start: &[f64]) -> Vec<f64> {
    let n = design.cols.len();
    let half = 0.5 * lambda;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, z)| x * z).sum::<f64>();
    let mut v = start.to_vec();
    let mut support: Vec<usize> = (0..n).filter(|&j| v[j] != 0.0).collect();
    let mut qr = factor(design, &mut support, &mut v);
    // Joined and immediately left again; skipped until another join sticks.
    let mut excluded = vec![false; n];
    let mut warm = !support.is_empty();
    let reference: f64 = design.y.iter().map(|y| y * y).sum();

    let mut best = f64::INFINITY;
    let mut idle = 0;
    for _ in 0..ACTIVE_SET_PIVOTS * (n + 1) {
        // Minimize on the support with fixed signs, walking back to the first
        // sign change.
        loop {
            if support.is_empty() {
                break;
            }
            let signs: Vec<f64> = support.iter().map(|&j| half * v[j].signum()).collect();
            let qty: Vec<f64> = qr.q.iter().map(|q| dot(q, &design.y)).collect();
            let shifted: Vec<f64> = qty.iter().zip(qr.forward(&signs)).map(|(a, b)| a - b).collect();
            let z = qr.back(&shifted);
            if warm {
                // The support carried over from a nearby problem: keep the
                // coordinates whose signs survive and re-solve.
                warm = false;
                let mut flipped = false;
                for i in (0..support.len()).rev() {
                    if z[i] * signs[i] > 0.0 {
                        v[support[i]] = z[i];
                    } else {
                        flipped = true;
                        v[support[i]] = 0.0;
                        support.remove(i);
                        qr.remove(i);
                    }
                }
                if flipped {
                    continue;
                }
                break;
            }
            let mut t = 1.0;
            let mut leaving = None;
            for (i, &j) in support.iter().enumerate() {
                if z[i] * v[j] <= 0.0 {
                    let ti = v[j] / (v[j] - z[i]);
                    if ti <= t {
                        t = ti;
                        leaving = Some(i);
                    }
                }
            }
            for (i, &j) in support.iter().enumerate() {
                v[j] += t * (z[i] - v[j]);
            }
            let Some(i) = leaving else { break };
            v[support[i]] = 0.0;
            for i in (0..support.len()).rev() {
                if v[support[i]] * signs[i] <= 0.0 {
                    v[support[i]] = 0.0;
                    support.remove(i);
                    qr.remove(i);
                }
            }
        }

        let resid = design.residual(&v);
        let objective = resid.iter().map(|r| r * r).sum::<f64>() + lambda * v.iter().map(|x| x.abs()).sum::<f64>();
        if objective < best - ACTIVE_SET_DECREASE * reference {
            best = objective;
            idle = 0;
        } else {
            idle += 1;
            if idle > ACTIVE_SET_IDLE {
                break;
            }
        }
        let corr: Vec<f64> = design.cols.iter().map(|c| dot(c, &resid)).collect();
        let scale = 1.0 + lambda + corr.iter().fold(0.0f64, |m, c| m.max(2.0 * c.abs()));
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if v[j] != 0.0 || excluded[j] {
                continue;
            }
            let excess = 2.0 * corr[j].abs() - lambda;
            if excess > ACTIVE_SET_TOLERANCE * scale && best.map_or(true, |(_, e)| excess > e) {
                best = Some((j, excess));
            }
        }
        let Some((j, _)) = best else { break };
        let sign = corr[j].signum();
        if qr.push(&design.cols[j]) {
            support.push(j);
            // Enters at zero; the face solve above decides whether it stays.
            v[j] = sign * f64::MIN_POSITIVE;
            excluded.iter_mut().for_each(|e| *e = false);
            excluded[j] = true;
            continue;
        }
        // Dependent: v_j = sign t, v_S -= sign t a keeps the fit.
        let a = qr.least_squares(&design.cols[j]);
        let mut step = f64::INFINITY;
        let mut leaving = None;
        for (i, &k) in support.iter().enumerate() {
            let dk = -sign * a[i];
            if dk * v[k] < 0.0 {
                let tk = -v[k] / dk;
                if tk < step {
                    step = tk;
                    leaving = Some(i);
                }
            }
        }
        let Some(i) = leaving else {
            excluded[j] = true;
            continue;
        };
        for (ii, &k) in support.iter().enumerate() {
            v[k] -= sign * step * a[ii];
        }
        v[support[i]] = 0.0;
        v[j] = sign * step;
        support.remove(i);
        qr.remove(i);
        if qr.push(&design.cols[j]) {
            support.push(j);
        } else {
            v[j] = 0.0;
        }
    }
    v
}

/// QR of the support columns; columns dependent on earlier ones are zeroed
/// and dropped.
fn factor(design: &Design, support: &mut Vec<usize>, v: &mut [f64]) -> ActiveQr {
    let mut qr = ActiveQr::new();
    support.retain(|&j| {
        let ok = qr.push(&design.cols[j]);
        if !ok {
            v[j] = 0.0;
        }
        ok
    });
    qr
}

/// Lasso solutions for every factor in `lambdas`, each started from the
/// matching entry of `starts` (zeros when `None`). Active-set solves on the
/// raw `history` alternate with rounds of coordinate descent until descent
/// converges or a full round no longer lowers the objective.
/// `stats` must summarize `history`.
pub fn lasso_solutions(
    stats: &SufficientStats,
    history: &[(f64, Vec<f64>)],
    lambdas: &[f64],
    starts: Option<&[Vec<f64>]>,
    par: Parallelism,
) -> Result<Vec<LassoSolution>> {
    debug_assert_eq!(stats.steps(), history.len());
    let design = Design::new(history);
    let reference: f64 = history.iter().map(|(y, _)| y * y).sum();
    let zeros = vec![0.0; stats.n()];
    let jobs: Vec<(f64, &[f64])> = lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, starts.map_or(zeros.as_slice(), |s| s[i].as_slice())))
        .collect();
    par.map(&jobs, |&(lambda, start)| {
        let mut v = start.to_vec();
        let mut sweeps = 0;
        let mut last = f64::INFINITY;
        while sweeps < LASSO_MAX_SWEEPS {
            v = active_set(&design, lambda, &v);
            let round = DESCENT_ROUND.min(LASSO_MAX_SWEEPS - sweeps);
            let (next, used, converged) = descend(stats.gram(), stats.moment(), Some(&design), lambda, v, round);
            v = next;
            sweeps += used;
            let objective = design.objective(lambda, &v);
            if converged || last - objective <= STALL_DECREASE * reference {
                return Ok(LassoSolution { weights: v, sweeps });
            }
            last = objective;
        }
        Err(Error::NoConvergence {
            solver: "lasso coordinate descent",
            iterations: sweeps,
            residual: lasso_kkt_residual(stats.gram(), stats.moment(), lambda, &v).0,
        })
    })
    .into_iter()
    .collect()
}

/// Largest violation of the subgradient optimality conditions at `v`,
/// returned with the scale `1 + lambda + max_j |grad_j|` it should be
/// compared against. `grad = 2 (G v - b)` is the gradient of the quadratic
/// part.
pub fn lasso_kkt_residual(gram: &[f64], moment: &[f64], lambda: f64, v: &[f64]) -> (f64, f64) {
    let n = moment.len();
    let mut worst = 0.0f64;
    let mut max_grad = 0.0f64;
    for j in 0..n {
        let gv: f64 = gram[j * n..(j + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
        let grad = 2.0 * (gv - moment[j]);
        max_grad = max_grad.max(grad.abs());
        let violation = if v[j] != 0.0 {
            (grad + lambda * v[j].signum()).abs()
        } else {
            (grad.abs() - lambda).max(0.0)
        };
        worst = worst.max(violation);
    }
    (worst, 1.0 + lambda.abs() + max_grad)
}

/// `lambda |v|_1 + sum_t (y_t - v . m_t)^2` evaluated on raw history.
pub fn lasso_objective(lambda: f64, history: &[(f64, Vec<f64>)], v: &[f64]) -> f64 {
    let fit: f64 = history
        .iter()
        .map(|(y, m)| {
            let pred: f64 = m.iter().zip(v).map(|(a, b)| a * b).sum();
            (y - pred).powi(2)
        })
        .sum();
    lambda * v.iter().map(|x| x.abs()).sum::<f64>() + fit
}

/// Online Lasso with a fixed regularization factor. Keeps the raw history
/// next to the sufficient statistics; each solve starts from the path
/// solution for the current statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoState {
    lambda: f64,
    stats: SufficientStats,
    history: Vec<(f64, Vec<f64>)>,
    previous: Option<Vec<f64>>,
}

impl LassoState {
    pub fn new(lambda: f64, n_models: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("regularization factor", format!("{lambda}")));
        }
        if n_models == 0 {
            return Err(Error::invalid("ensemble", "need at least one model"));
        }
        Ok(LassoState {
            lambda,
            stats: SufficientStats::new(n_models),
            history: Vec::new(),
            previous: None,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    pub fn history(&self) -> &[(f64, Vec<f64>)] {
        &self.history
    }
}

impl OnlineAggregator for LassoState {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Lasso
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
            return Ok(WeightVector::uniform(self.n_models(), Algorithm::Lasso, self.lambda, 0));
        }
        let start = self.previous.take().map(|p| vec![p]);
        let sol = lasso_solutions(&self.stats, &self.history, &[self.lambda], start.as_deref(), Parallelism::Sequential)?
            .pop()
            .expect("one factor");
        self.previous = Some(sol.weights.clone());
        WeightVector::new(sol.weights, WeightFlavor::Linear, Algorithm::Lasso, self.lambda, step)
    }

    fn update(&mut self, y: f64, column: &[f64]) {
        self.stats.update(y, column);
        self.history.push((y, column.to_vec()));
        debug_assert_eq!(self.history.len(), self.stats.steps());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state_from(lambda: f64, history: &[(f64, Vec<f64>)]) -> LassoState {
        let mut s = LassoState::new(lambda, history[0].1.len()).unwrap();
        for (y, m) in history {
            s.update(*y, m);
        }
        s
    }

    fn random_history(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<(f64, Vec<f64>)> {
        (0..t)
            .map(|_| (rng.random_range(-1.0..1.0), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect()
    }

    /// Subgradient method with step `c / sqrt(k)`, tracking the best iterate.
    fn subgradient_oracle(lambda: f64, gram: &[f64], moment: &[f64], history: &[(f64, Vec<f64>)], iters: usize) -> f64 {
        let n = moment.len();
        let mut v = vec![0.0; n];
        let mut best = lasso_objective(lambda, history, &v);
        let scale = gram.iter().step_by(n + 1).fold(0.0f64, |a, &g| a.max(g)).max(1e-12);
        for k in 1..=iters {
            let mut g: Vec<f64> = (0..n)
                .map(|j| {
                    let gv: f64 = gram[j * n..(j + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum();
                    2.0 * (gv - moment[j]) + lambda * v[j].signum()
                })
                .collect();
            let step = 0.5 / (scale * (k as f64).sqrt());
            for (x, gi) in v.iter_mut().zip(g.iter_mut()) {
                *x -= step * *gi;
            }
            if k % 16 == 0 || k == iters {
                best = best.min(lasso_objective(lambda, history, &v));
            }
        }
        best
    }

    #[test]
    fn no_history_is_uniform() {
        let mut s = LassoState::new(0.5, 5).unwrap();
        assert_eq!(s.weights().unwrap().weights(), &[0.2; 5]);
    }

    #[test]
    fn large_lambda_zeroes_every_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let history = random_history(&mut rng, 4, 10);
        let s = state_from(1.0, &history);
        let max_b = s.stats().moment().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut s = state_from(2.0 * max_b, &history);
        assert!(s.weights().unwrap().weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn beats_subgradient_oracle_and_meets_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let history = random_history(&mut rng, 5, 40);
        let mut s = state_from(0.1, &history);
        let w = s.weights().unwrap();
        let obj = lasso_objective(0.1, &history, w.weights());
        let oracle = subgradient_oracle(0.1, s.stats().gram(), s.stats().moment(), &history, 200_000);
        assert!(obj <= oracle * (1.0 + 1e-6), "{obj} vs {oracle}");
        let (res, scale) = lasso_kkt_residual(s.stats().gram(), s.stats().moment(), 0.1, w.weights());
        assert!(res <= 1e-6 * scale, "{res}");
    }

    #[test]
    fn sparse_on_noise_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 8;
        let history: Vec<(f64, Vec<f64>)> = (0..60)
            .map(|t| {
                let y = (t as f64 * 0.2).sin() * 3.0 + 5.0;
                let mut m = vec![y, y + rng.random_range(-0.5..0.5)];
                m.extend((2..n).map(|_| rng.random_range(-1.0..1.0)));
                (y, m)
            })
            .collect();
        let mut s = state_from(5.0, &history);
        let w = s.weights().unwrap();
        assert!(w.weights()[2..].iter().any(|&x| x == 0.0), "{:?}", w.weights());
    }

    #[test]
    fn zero_model_gets_zero_weight() {
        let history = vec![(1.0, vec![1.0, 0.0]), (2.0, vec![2.0, 0.0])];
        let mut s = state_from(1e-3, &history);
        let w = s.weights().unwrap();
        assert_eq!(w.weights()[1], 0.0);
    }

    #[test]
    fn sweep_cap_reports_no_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let s = state_from(1e-3, &random_history(&mut rng, 6, 30));
        match super::coordinate_descent_capped(s.stats().gram(), s.stats().moment(), None, 1e-3, None, 1) {
            Err(Error::NoConvergence { iterations, residual, .. }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn collinear_models_converge() {
        // Rank-one history with a large target: all weight belongs on the
        // largest forecast, far from the zero start.
        let history = vec![(123.0, vec![0.3, -0.9, 0.5, 0.7])];
        let mut s = state_from(1e-3, &history);
        let w = s.weights().unwrap();
        assert_eq!(w.weights().iter().filter(|&&x| x != 0.0).count(), 1, "{:?}", w.weights());
        let (res, scale) = lasso_kkt_residual(s.stats().gram(), s.stats().moment(), 1e-3, w.weights());
        assert!(res <= 1e-6 * scale, "{res}");
    }

    #[test]
    fn line_minimizer_handles_kinks() {
        // f(t) = |1 - t| with no quadratic part: minimum at the kink t = 1.
        assert_eq!(line_minimizer(0.0, 0.0, 1.0, &[1.0], &[-1.0]), 1.0);
        // f(t) = t^2 - 4t: stationary point 2.
        assert_eq!(line_minimizer(1.0, -4.0, 0.0, &[0.0], &[0.0]), 2.0);
        // Increasing from the start: stay.
        assert_eq!(line_minimizer(1.0, 1.0, 0.0, &[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn qr_downdate_matches_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cols: Vec<Vec<f64>> = (0..6).map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut qr = ActiveQr::new();
        for c in &cols {
            assert!(qr.push(c));
        }
        qr.remove(2);
        qr.remove(0);
        let kept = [&cols[1], &cols[3], &cols[4], &cols[5]];
        assert_eq!(qr.q.len(), kept.len());
        for (k, col) in kept.iter().enumerate() {
            assert_eq!(qr.r[k].len(), k + 1);
            for t in 0..20 {
                let rebuilt: f64 = (0..=k).map(|i| qr.q[i][t] * qr.r[k][i]).sum();
                assert!((rebuilt - col[t]).abs() < 1e-12);
            }
        }
        for a in 0..kept.len() {
            for b in 0..kept.len() {
                let d: f64 = qr.q[a].iter().zip(&qr.q[b]).map(|(x, y)| x * y).sum();
                assert!((d - f64::from(u8::from(a == b))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn active_set_agrees_with_plain_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for case in 0..20 {
            let history = random_history(&mut rng, 6, 8 + case);
            let design = Design::new(&history);
            let s = state_from(1.0, &history);
            for lambda in [1e-3, 0.1, 1.0] {
                let v = active_set(&design, lambda, &[0.0; 6]);
                let cd = coordinate_descent(s.stats().gram(), s.stats().moment(), lambda, None).unwrap();
                let (a, b) = (lasso_objective(lambda, &history, &v), lasso_objective(lambda, &history, &cd.weights));
                assert!((a - b).abs() <= 1e-9 * (1.0 + b), "{case} {lambda}: {a} vs {b}");
                // From someone else's solution as well.
                let warm = active_set(&design, lambda, &cd.weights.iter().map(|x| -x).collect::<Vec<_>>());
                assert!((lasso_objective(lambda, &history, &warm) - b).abs() <= 1e-9 * (1.0 + b));
            }
        }
    }

    #[test]
    fn duplicated_models_are_handled() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let history: Vec<(f64, Vec<f64>)> = (0..25)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                (2.0 * a + 0.5 * b + 0.01 * rng.random_range(-1.0..1.0), vec![a, a, b, 2.0 * a, a + b])
            })
            .collect();
        let s = state_from(1.0, &history);
        for lambda in [1e-8, 1e-3, 0.3] {
            let sol = lasso_solutions(s.stats(), &history, &[lambda], None, Parallelism::Sequential).unwrap().pop().unwrap();
            let (res, scale) = lasso_kkt_residual(s.stats().gram(), s.stats().moment(), lambda, &sol.weights);
            assert!(res <= 1e-6 * scale, "{lambda}: {res}");
        }
    }
}
