//! Penalized check-loss minimization over spline coefficients.
//!
//! The criterion is
//!
//! ```text
//! F(θ) = (1/n) Σ_i l_α(y_i − a_iᵀθ) + ρ θᵀGθ,   l_α(u) = |u| + (2α − 1) u
//! ```
//!
//! [`irls_fit`] minimizes it through a sequence of smoothed problems in which
//! `|u|` is replaced by `√(u² + ε²)`, with ε shrinking geometrically. Each
//! smoothed problem is solved by iteratively reweighted least squares, which
//! here is a majorize–minimize scheme: at the current residuals `r⁰`,
//!
//! ```text
//! √(u² + ε²) ≤ ½ w u² + ½ / w,   w = 1 / √(r⁰² + ε²),
//! ```
//!
//! with equality at `u = r⁰`. Minimizing the quadratic majorizer of the
//! smoothed criterion gives the normal equations
//!
//! ```text
//! ((1/n) AᵀWA + 2ρG) θ = (1/n) Aᵀ(W y + (2α − 1) 1),
//! ```
//!
//! and the smoothed objective can never increase from one reweighting to the
//! next.
//!
//! Reweighting converges slowly once residuals pass through zero, so the
//! best iterate is finished by a small active-set search. Residuals that
//! are nearly zero form the active set `Z`, the others keep their signs, and
//! the optimality conditions
//!
//! ```text
//! 2ρGθ − (1/n) Σ_{i∉Z} s_i a_i − (1/n) Σ_{i∈Z} g_i a_i = 0,   a_iᵀθ = y_i (i ∈ Z)
//! ```
//!
//! with `s_i = sign(r_i) + 2α − 1` are solved for `(θ, g)`. A multiplier
//! outside the subdifferential `[2α − 2, 2α]` drops its row from `Z`; a
//! residual that would change sign joins `Z` at the crossing point. When
//! neither happens the solution is a certified global minimizer.
//!
//! [`subgradient_oracle`] is an unrelated slow method kept for
//! cross-checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::PenalizedSystem;
use crate::linalg::{dot, norm2, solve_general, Cholesky, Matrix};
use crate::scalar::{mad, Real};

/// Tilted absolute loss `l_α(u) = |u| + (2α − 1) u`, twice the pinball loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckLoss<T> {
    alpha: T,
}

impl<T: Real> CheckLoss<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(CheckLoss { alpha })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    #[inline]
    fn tilt(&self) -> T {
        T::lit(2.0) * self.alpha - T::one()
    }

    #[inline]
    pub fn value(&self, u: T) -> T {
        u.abs() + self.tilt() * u
    }

    /// `√(u² + ε²) + (2α − 1) u`.
    #[inline]
    pub fn smoothed(&self, u: T, eps: T) -> T {
        u.hypot(eps) + self.tilt() * u
    }
}

/// Free-function form of [`CheckLoss::value`].
pub fn check_loss<T: Real>(loss: &CheckLoss<T>, u: T) -> T {
    loss.value(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real"))]
pub struct SolverConfig<T> {
    /// Starting smoothing level, relative to the MAD of the responses.
    pub epsilon_init: T,
    /// Final smoothing level, relative to the MAD of the responses.
    pub epsilon_final: T,
    pub epsilon_decay: T,
    /// Maximum number of smoothing stages.
    pub max_outer: usize,
    /// Maximum reweighting iterations per stage.
    pub max_inner: usize,
    /// Relative change of the smoothed objective that ends a stage.
    pub tol: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            epsilon_init: T::one(),
            epsilon_final: T::lit(1e-8),
            epsilon_decay: T::lit(0.1),
            max_outer: 30,
            max_inner: 100,
            tol: T::lit(1e-10),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_init > T::zero() && self.epsilon_final > T::zero()) {
            return Err(Error::param("smoothing levels must be positive"));
        }
        if self.epsilon_final > self.epsilon_init {
            return Err(Error::param("epsilon_final must not exceed epsilon_init"));
        }
        if !(self.epsilon_decay > T::zero() && self.epsilon_decay < T::one()) {
            return Err(Error::param("epsilon_decay must lie in (0, 1)"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::param("iteration limits must be positive"));
        }
        if self.tol < T::zero() || self.tol.is_nan() {
            return Err(Error::param("tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics<T> {
    /// Exact objective at the end of each smoothing stage.
    pub objective_trace: Vec<T>,
    pub converged: bool,
    /// Total reweighting iterations across all stages.
    pub iterations: usize,
    /// Absolute smoothing level of the last stage.
    pub final_epsilon: T,
    pub lambda_min: T,
    pub near_singular: bool,
    /// The returned coefficients passed the exact optimality check.
    pub optimality_certified: bool,
    /// In-sample predictions `Aθ̂`.
    pub fitted: Vec<T>,
}

fn check_dims<T: Real>(theta: &[T], a: &Matrix<T>, y: &[T], g: &Matrix<T>) -> Result<()> {
    if theta.len() != a.cols() {
        return Err(Error::mismatch("coefficients", a.cols(), theta.len()));
    }
    if y.len() != a.rows() {
        return Err(Error::mismatch("responses", a.rows(), y.len()));
    }
    if g.rows() != a.cols() || g.cols() != a.cols() {
        return Err(Error::mismatch("penalty", a.cols(), g.rows()));
    }
    Ok(())
}

fn residuals<T: Real>(theta: &[T], a: &Matrix<T>, y: &[T]) -> Vec<T> {
    (0..a.rows()).map(|i| y[i] - dot(a.row(i), theta)).collect()
}

fn mean<T: Real>(xs: impl Iterator<Item = T>, n: usize) -> T {
    xs.sum::<T>() / T::from_usize_lossy(n)
}

/// `(1/n) Σ l_α(y_i − (Aθ)_i) + ρ θᵀGθ`.
pub fn objective<T: Real>(
    theta: &[T],
    a: &Matrix<T>,
    y: &[T],
    rho: T,
    g: &Matrix<T>,
    loss: &CheckLoss<T>,
) -> Result<T> {
    check_dims(theta, a, y, g)?;
    let r = residuals(theta, a, y);
    Ok(mean(r.iter().map(|&u| loss.value(u)), r.len()) + rho * g.quad_form(theta)?)
}

/// Objective with `|u|` replaced by `√(u² + ε²)`.
pub fn smoothed_objective<T: Real>(
    theta: &[T],
    a: &Matrix<T>,
    y: &[T],
    rho: T,
    g: &Matrix<T>,
    loss: &CheckLoss<T>,
    eps: T,
) -> Result<T> {
    check_dims(theta, a, y, g)?;
    let r = residuals(theta, a, y);
    Ok(mean(r.iter().map(|&u| loss.smoothed(u, eps)), r.len()) + rho * g.quad_form(theta)?)
}

/// Result of one smoothing stage.
#[derive(Debug, Clone)]
pub struct StageOutcome<T> {
    pub theta: Vec<T>,
    /// Smoothed objective at the starting point and after every reweighting.
    pub smoothed_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterate with the smallest exact objective seen in the stage.
    pub best_theta: Vec<T>,
    pub best_objective: T,
}

fn solve_normal_equations<T: Real>(m: &Matrix<T>, rhs: &[T], penalized: bool) -> Result<Vec<T>> {
    match Cholesky::factor(m) {
        Ok(c) => c.solve(rhs),
        Err(Error::SolverSingular) if penalized => {
            // PSD but numerically rank deficient: the flat directions do not
            // change the objective, so a tiny ridge just picks one minimizer.
            let diag_max = (0..m.rows()).fold(T::zero(), |acc, i| acc.max(m[(i, i)]));
            let jitter = T::lit(1e-12) * diag_max.max(T::min_positive_value());
            Cholesky::factor(&m.add_scaled(&Matrix::identity(m.rows()), jitter)?)?.solve(rhs)
        }
        Err(e) => Err(e),
    }
}

/// Runs reweighted least squares at a fixed smoothing level from `theta0`.
pub fn irls_stage<T: Real>(
    system: &PenalizedSystem<T>,
    y: &[T],
    loss: &CheckLoss<T>,
    eps: T,
    theta0: &[T],
    max_inner: usize,
    tol: T,
) -> Result<StageOutcome<T>> {
    let a = system.design();
    let g = system.penalty();
    let rho = system.rho();
    check_dims(theta0, a, y, g)?;
    let n = a.rows();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let two_rho = T::lit(2.0) * rho;
    let tilt = loss.tilt();

    let mut theta = theta0.to_vec();
    let mut current = smoothed_objective(&theta, a, y, rho, g, loss, eps)?;
    let mut trace = vec![current];
    let mut best_objective = objective(&theta, a, y, rho, g, loss)?;
    let mut best_theta = theta.clone();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_inner {
        let r = residuals(&theta, a, y);
        let w: Vec<T> = r.iter().map(|&u| T::one() / u.hypot(eps)).collect();
        let mut lhs = a.weighted_gram(Some(&w), inv_n)?;
        if rho > T::zero() {
            lhs = lhs.add_scaled(g, two_rho)?;
        }
        let pseudo: Vec<T> = w.iter().zip(y).map(|(&wi, &yi)| wi * yi + tilt).collect();
        let rhs: Vec<T> = a.tr_mul_vec(&pseudo)?.into_iter().map(|v| v * inv_n).collect();
        let next = solve_normal_equations(&lhs, &rhs, rho > T::zero())?;
        iterations += 1;

        let value = smoothed_objective(&next, a, y, rho, g, loss, eps)?;
        let exact = objective(&next, a, y, rho, g, loss)?;
        if exact < best_objective {
            best_objective = exact;
            best_theta.clone_from(&next);
        }
        let step: T = next.iter().zip(&theta).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>().sqrt();
        let change = (current - value).abs();
        trace.push(value);
        theta = next;
        current = value;
        if change <= tol * (value.abs() + eps)
            || step <= T::epsilon() * (T::one() + norm2(&theta))
        {
            converged = true;
            break;
        }
    }
    Ok(StageOutcome {
        theta,
        smoothed_trace: trace,
        iterations,
        converged,
        best_theta,
        best_objective,
    })
}

/// Minimizes the penalized check-loss criterion for the system's design,
/// penalty and ρ.
///
/// Returns the coefficient vector with the lowest exact objective visited;
/// non-convergence is reported through the diagnostics, not as an error.
/// A singular reweighted system at `ρ = 0` is an [`Error::SolverSingular`].
pub fn irls_fit<T: Real>(
    system: &PenalizedSystem<T>,
    y: &[T],
    loss: &CheckLoss<T>,
    config: &SolverConfig<T>,
) -> Result<(Vec<T>, FitDiagnostics<T>)> {
    config.validate()?;
    let a = system.design();
    if y.len() != a.rows() {
        return Err(Error::mismatch("responses", a.rows(), y.len()));
    }
    if system.near_singular() && system.rho() == T::zero() {
        log::warn!("fitting an unpenalized near-singular system");
    }
    let scale = match mad(y) {
        Some(s) if s > T::zero() && s.is_finite() => s,
        _ => T::one(),
    };
    let eps_final = config.epsilon_final * scale;
    let mut eps = config.epsilon_init * scale;

    let mut theta = vec![T::zero(); a.cols()];
    let mut best_theta = theta.clone();
    let mut best_objective = objective(&theta, a, y, system.rho(), system.penalty(), loss)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for stage in 0..config.max_outer {
        let outcome = irls_stage(system, y, loss, eps, &theta, config.max_inner, config.tol)?;
        iterations += outcome.iterations;
        theta = outcome.theta;
        if outcome.best_objective <= best_objective {
            best_objective = outcome.best_objective;
            best_theta = outcome.best_theta;
        }
        trace.push(objective(&theta, a, y, system.rho(), system.penalty(), loss)?);
        let last = eps <= eps_final * (T::one() + T::epsilon().sqrt());
        if last {
            converged = outcome.converged;
            break;
        }
        if stage + 1 < config.max_outer {
            eps = (eps * config.epsilon_decay).max(eps_final);
        }
    }

    let certified = match certify_optimum(system, y, loss, &best_theta, scale)? {
        Some(theta) => {
            best_theta = theta;
            true
        }
        None => false,
    };
    if certified {
        converged = true;
    }

    let fitted = a.mul_vec(&best_theta)?;
    let diagnostics = FitDiagnostics {
        objective_trace: trace,
        converged,
        iterations,
        final_epsilon: eps,
        lambda_min: system.lambda_min(),
        near_singular: system.near_singular(),
        optimality_certified: certified,
        fitted,
    };
    Ok((best_theta, diagnostics))
}

/// Solves the optimality system for a fixed active set and fixed signs of
/// the remaining residuals. Returns `(θ, multipliers)`.
fn solve_active_set<T: Real>(
    system: &PenalizedSystem<T>,
    y: &[T],
    tilt: T,
    active: &[usize],
    signs: &[T],
) -> Option<(Vec<T>, Vec<T>)> {
    let a = system.design();
    let g = system.penalty();
    let (n, dim) = (a.rows(), a.cols());
    let size = dim + active.len();
    // Stationarity rows scaled by n.
    let scale = T::lit(2.0) * T::from_usize_lossy(n) * system.rho();
    let mut kkt = Matrix::zeros(size, size);
    let mut rhs = vec![T::zero(); size];
    for p in 0..dim {
        for q in 0..dim {
            kkt[(p, q)] = scale * g[(p, q)];
        }
    }
    let mut in_active = vec![false; n];
    for (c, &i) in active.iter().enumerate() {
        in_active[i] = true;
        for p in 0..dim {
            kkt[(p, dim + c)] = -a[(i, p)];
            kkt[(dim + c, p)] = a[(i, p)];
        }
        rhs[dim + c] = y[i];
    }
    for i in (0..n).filter(|&i| !in_active[i]) {
        let s = signs[i] + tilt;
        for (p, v) in rhs.iter_mut().take(dim).enumerate() {
            *v += s * a[(i, p)];
        }
    }
    // Symmetric equilibration; the two blocks differ in scale by orders of
    // magnitude, which would defeat a relative pivot test.
    let mut d = vec![T::one(); size];
    for _ in 0..4 {
        for i in 0..size {
            let row_max = (0..size).fold(T::zero(), |acc, j| acc.max(kkt[(i, j)].abs()));
            if row_max > T::zero() {
                let s = T::one() / row_max.sqrt();
                d[i] *= s;
                for j in 0..size {
                    kkt[(i, j)] *= s;
                    kkt[(j, i)] *= s;
                }
            }
        }
    }
    let scaled: Vec<T> = rhs.iter().zip(&d).map(|(b, s)| *b * *s).collect();
    let z = solve_general(&kkt, &scaled, T::lit(1e-10)).ok()?;
    let mut sol: Vec<T> = z.iter().zip(&d).map(|(v, s)| *v * *s).collect();
    let mult = sol.split_off(dim);
    Some((sol, mult))
}

/// Exact finishing step from an approximate minimizer `theta`; returns the
/// certified minimizer, or `None` when the active-set search fails.
pub fn certify_optimum<T: Real>(
    system: &PenalizedSystem<T>,
    y: &[T],
    loss: &CheckLoss<T>,
    theta: &[T],
    scale: T,
) -> Result<Option<Vec<T>>> {
    let a = system.design();
    let g = system.penalty();
    let rho = system.rho();
    let (n, dim) = (a.rows(), a.cols());
    check_dims(theta, a, y, g)?;
    let r0 = residuals(theta, a, y);
    let current = objective(theta, a, y, rho, g, loss)?;
    let tilt = loss.tilt();
    let (lo, hi) = (tilt - T::one(), tilt + T::one());
    let slack = T::lit(1e-8);
    let max_steps = 4 * dim + 20;

    let mut tried: Vec<Vec<usize>> = Vec::new();
    for exponent in [-8, -6, -4] {
        let tau = scale * T::lit(10f64.powi(exponent));
        let mut active: Vec<usize> = (0..n).filter(|&i| r0[i].abs() <= tau).collect();
        if tried.contains(&active) {
            continue;
        }
        tried.push(active.clone());
        let mut signs: Vec<T> = r0.iter().map(|v| if *v >= T::zero() { T::one() } else { -T::one() }).collect();
        let mut cur = theta.to_vec();
        let mut released: Vec<usize> = Vec::new();

        for _ in 0..max_steps {
            if active.len() > dim {
                break;
            }
            let Some((cand, mult)) = solve_active_set(system, y, tilt, &active, &signs) else {
                // Too few active rows to pin down the penalty nullspace.
                let rcur = residuals(&cur, a, y);
                let next = (0..n)
                    .filter(|i| !active.contains(i) && !released.contains(i))
                    .min_by(|&i, &j| rcur[i].abs().partial_cmp(&rcur[j].abs()).unwrap_or(std::cmp::Ordering::Equal));
                match next {
                    Some(i) => active.push(i),
                    None => break,
                }
                continue;
            };
            // Release the worst multiplier outside the subdifferential.
            let worst = mult
                .iter()
                .enumerate()
                .map(|(c, &m)| (c, (lo - m).max(m - hi)))
                .filter(|&(_, v)| v > slack || v.is_nan())
                .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Greater));
            if let Some((c, _)) = worst {
                let i = active.remove(c);
                released.push(i);
                signs[i] = if mult[c] > hi { T::one() } else { -T::one() };
                continue;
            }
            // Step towards the candidate until the first residual crosses zero.
            let rc = residuals(&cand, a, y);
            let rcur = residuals(&cur, a, y);
            let mut first: Option<(usize, T)> = None;
            for i in 0..n {
                if active.contains(&i) || signs[i] * rc[i] >= T::zero() {
                    continue;
                }
                let t = if signs[i] * rcur[i] > T::zero() { rcur[i] / (rcur[i] - rc[i]) } else { T::zero() };
                if first.is_none_or(|(_, best)| t < best) {
                    first = Some((i, t));
                }
            }
            match first {
                Some((i, t)) => {
                    for (c, v) in cur.iter_mut().zip(&cand) {
                        *c += t * (*v - *c);
                    }
                    active.push(i);
                }
                None => {
                    let value = objective(&cand, a, y, rho, g, loss)?;
                    if value <= current + T::lit(1e-12) * (T::one() + current.abs()) {
                        return Ok(Some(cand));
                    }
                    break;
                }
            }
        }
    }
    Ok(None)
}

/// Subgradient descent on the exact nonsmooth objective with step
/// `c / √t`, `c = 1 / (1 + max_i ‖a_i‖)`, capped at `1 / ‖2ρG‖_∞`, starting
/// from zero. Returns the iterate with the lowest objective. Slow; meant for
/// verification.
pub fn subgradient_oracle<T: Real>(
    system: &PenalizedSystem<T>,
    y: &[T],
    loss: &CheckLoss<T>,
    iterations: usize,
) -> Result<Vec<T>> {
    let a = system.design();
    let g = system.penalty();
    let rho = system.rho();
    let dim = a.cols();
    let n = a.rows();
    if y.len() != n {
        return Err(Error::mismatch("responses", n, y.len()));
    }
    let max_row = (0..n).map(|i| norm2(a.row(i))).fold(T::zero(), T::max);
    let c = T::one() / (T::one() + max_row);
    // Steps longer than 1/‖2ρG‖ make the quadratic part diverge, which the
    // c/√t schedule alone only prevents after (c‖2ρG‖)² iterations.
    let g_norm = (0..dim).map(|i| g.row(i).iter().map(|v| v.abs()).sum::<T>()).fold(T::zero(), T::max);
    let step_cap = if rho > T::zero() && g_norm > T::zero() {
        T::one() / (T::lit(2.0) * rho * g_norm)
    } else {
        T::infinity()
    };
    let inv_n = T::one() / T::from_usize_lossy(n);
    let tilt = loss.tilt();
    let two_rho = T::lit(2.0) * rho;

    let mut theta = vec![T::zero(); dim];
    let mut best = theta.clone();
    let mut best_value = objective(&theta, a, y, rho, g, loss)?;
    let mut grad = vec![T::zero(); dim];
    for t in 1..=iterations.max(1) {
        grad.iter_mut().for_each(|v| *v = T::zero());
        for (i, &yi) in y.iter().enumerate() {
            let r = yi - dot(a.row(i), &theta);
            let s = if r > T::zero() {
                T::one()
            } else if r < T::zero() {
                -T::one()
            } else {
                T::zero()
            } + tilt;
            for (gj, &aij) in grad.iter_mut().zip(a.row(i)) {
                *gj -= inv_n * s * aij;
            }
        }
        if rho > T::zero() {
            let gt = g.mul_vec(&theta)?;
            for (gj, v) in grad.iter_mut().zip(gt) {
                *gj += two_rho * v;
            }
        }
        let step = (c / T::from_usize_lossy(t).sqrt()).min(step_cap);
        for (th, gj) in theta.iter_mut().zip(&grad) {
            *th -= step * *gj;
        }
        let value = objective(&theta, a, y, rho, g, loss)?;
        if value < best_value {
            best_value = value;
            best.clone_from(&theta);
        }
    }
    Ok(best)
}
