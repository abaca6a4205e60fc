//! Fit/predict API for functional quantile regression.
//!
//! A fitted [`QuantileModel`] holds the spline coefficients of the
//! estimated coefficient function `Ψ̂_α` and the training mean curve; the
//! predicted conditional α-quantile for a new curve `x` is
//! `⟨Ψ̂_α, x − x̄_train⟩`, computed with the training quadrature rule.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::SplineBasis;
use crate::error::{Error, Result};
use crate::funcdata::{
    curve_projections, same_grid, weighted_basis, weighted_dot, CurveSample, FunctionalDataset, PenalizedSystem,
};
use crate::linalg::Matrix;
use crate::quadrature::QuadratureRule;
use crate::scalar::Real;
use crate::solver::{irls_fit, CheckLoss, FitDiagnostics, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real"))]
pub struct FitConfig<T> {
    pub alpha: T,
    pub degree: usize,
    pub intervals: usize,
    pub penalty_order: usize,
    pub rho: T,
    pub quadrature: QuadratureRule,
    pub solver: SolverConfig<T>,
    /// Derive `intervals` and `rho` from the sample size and `smoothness`.
    pub auto_k_rho: bool,
    /// Assumed smoothness `p` of the coefficient function for the auto rule.
    pub smoothness: usize,
    /// Adds an unpenalized intercept column.
    pub intercept: bool,
}

impl<T: Real> Default for FitConfig<T> {
    fn default() -> Self {
        FitConfig {
            alpha: T::lit(0.5),
            degree: 3,
            intervals: 8,
            penalty_order: 2,
            rho: T::lit(0.01),
            quadrature: QuadratureRule::Trapezoid,
            solver: SolverConfig::default(),
            auto_k_rho: false,
            smoothness: 2,
            intercept: false,
        }
    }
}

impl<T: Real> FitConfig<T> {
    pub fn validate(&self) -> Result<()> {
        CheckLoss::new(self.alpha)?;
        if self.penalty_order < 1 || self.penalty_order > self.degree {
            return Err(Error::param(format!(
                "need degree >= penalty order >= 1, got degree {} and order {}",
                self.degree, self.penalty_order
            )));
        }
        if self.auto_k_rho {
            if self.smoothness > self.degree || self.smoothness < self.penalty_order {
                return Err(Error::param(format!(
                    "auto rule needs degree >= p >= penalty order, got p = {}",
                    self.smoothness
                )));
            }
        } else {
            if self.intervals < 1 {
                return Err(Error::param("intervals must be >= 1"));
            }
            if self.rho < T::zero() || !self.rho.is_finite() {
                return Err(Error::param(format!("rho must be finite and >= 0, got {}", self.rho)));
            }
        }
        self.solver.validate()
    }

    /// `(intervals, rho)` used for a sample of size `n`: with the auto rule
    /// `k = round(n^(1/(4p+1)))` (at least 1) and `ρ = n^(−2p/(4p+1))`.
    pub fn resolve(&self, n: usize) -> (usize, T) {
        if !self.auto_k_rho {
            return (self.intervals, self.rho);
        }
        auto_k_rho(n, self.smoothness)
    }
}

/// Number of intervals and penalty weight for sample size `n` and smoothness `p`.
pub fn auto_k_rho<T: Real>(n: usize, p: usize) -> (usize, T) {
    let nf = n.max(1) as f64;
    let denom = 4.0 * p as f64 + 1.0;
    let k = nf.powf(1.0 / denom).round().max(1.0) as usize;
    let rho = nf.powf(-2.0 * p as f64 / denom);
    (k, T::lit(rho))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel<T> {
    basis: SplineBasis<T>,
    theta_hat: Vec<T>,
    intercept: Option<T>,
    alpha: T,
    rho: T,
    penalty_order: usize,
    grid: Vec<T>,
    mean_curve: Vec<T>,
    quadrature: QuadratureRule,
    diagnostics: FitDiagnostics<T>,
}

impl<T: Real> QuantileModel<T> {
    pub fn basis(&self) -> &SplineBasis<T> {
        &self.basis
    }

    pub fn theta_hat(&self) -> &[T] {
        &self.theta_hat
    }

    pub fn intercept(&self) -> Option<T> {
        self.intercept
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn penalty_order(&self) -> usize {
        self.penalty_order
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn mean_curve(&self) -> &[T] {
        &self.mean_curve
    }

    pub fn quadrature(&self) -> QuadratureRule {
        self.quadrature
    }

    pub fn diagnostics(&self) -> &FitDiagnostics<T> {
        &self.diagnostics
    }

    /// Model with replaced coefficients; the diagnostics are kept as is.
    pub fn with_theta(mut self, theta: Vec<T>) -> Result<Self> {
        if theta.len() != self.basis.dim() {
            return Err(Error::mismatch("coefficients", self.basis.dim(), theta.len()));
        }
        self.theta_hat = theta;
        Ok(self)
    }

    /// Quadrature-weighted samples of `Ψ̂` on the training grid.
    fn weighted_coefficient(&self) -> Result<Vec<T>> {
        weighted_basis(&self.grid, &self.basis, self.quadrature)?.mul_vec(&self.theta_hat)
    }

    fn predict_with(&self, weighted_psi: &[T], values: &[T]) -> T {
        let ones = vec![T::one(); values.len()];
        let centered: Vec<T> = values.iter().zip(&self.mean_curve).map(|(&v, &m)| v - m).collect();
        weighted_dot(&ones, weighted_psi, &centered) + self.intercept.unwrap_or_else(T::zero)
    }

    /// Predicted conditional α-quantile `⟨Ψ̂, x − x̄⟩` for one curve.
    pub fn predict(&self, curve: &CurveSample<T>) -> Result<T> {
        same_grid(&self.grid, curve.grid())?;
        Ok(self.predict_with(&self.weighted_coefficient()?, curve.values()))
    }

    /// Predictions for raw curve values on the training grid.
    pub fn predict_values(&self, curves: &[Vec<T>]) -> Result<Vec<T>> {
        let w = self.weighted_coefficient()?;
        curves
            .iter()
            .map(|c| {
                if c.len() != self.grid.len() {
                    Err(Error::GridMismatch(format!(
                        "curve has {} values, model grid has {}",
                        c.len(),
                        self.grid.len()
                    )))
                } else {
                    Ok(self.predict_with(&w, c))
                }
            })
            .collect()
    }

    /// Predictions for every curve of a dataset sharing the training grid.
    ///
    /// Curves of an already centered dataset are shifted back by its own
    /// mean before the training mean is removed.
    pub fn predict_dataset(&self, dataset: &FunctionalDataset<T>) -> Result<Vec<T>> {
        same_grid(&self.grid, dataset.grid())?;
        match dataset.mean_curve() {
            None => self.predict_values(dataset.curves()),
            Some(mean) => {
                let raw: Vec<Vec<T>> = dataset
                    .curves()
                    .iter()
                    .map(|c| c.iter().zip(mean).map(|(&v, &m)| v + m).collect())
                    .collect();
                self.predict_values(&raw)
            }
        }
    }

    /// `Ψ̂_α` evaluated at each point of `out_grid`.
    pub fn coefficient_function(&self, out_grid: &[T]) -> Result<Vec<T>> {
        out_grid.iter().map(|&t| self.basis.eval_spline(&self.theta_hat, t)).collect()
    }
}

/// Fits the penalized quantile estimator. Uncentered curves are centered
/// first and the mean is kept for prediction.
pub fn fit<T: Real>(dataset: &FunctionalDataset<T>, config: &FitConfig<T>) -> Result<QuantileModel<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::mismatch("number of curves (minimum)", 1, 0));
    }
    let centered = if dataset.is_centered() {
        dataset.clone()
    } else {
        dataset.clone().center_curves()?
    };
    let (intervals, rho) = config.resolve(centered.len());
    let basis = SplineBasis::new(config.degree, intervals)?;
    let wb = weighted_basis(centered.grid(), &basis, config.quadrature)?;
    let mut design = curve_projections(centered.curves(), &wb)?;
    let mut penalty = basis.penalty_matrix(config.penalty_order)?;
    if config.intercept {
        let d = basis.dim();
        design = Matrix::from_fn(design.rows(), d + 1, |i, j| if j < d { design[(i, j)] } else { T::one() });
        penalty = Matrix::from_fn(d + 1, d + 1, |i, j| if i < d && j < d { penalty[(i, j)] } else { T::zero() });
    }
    let system = PenalizedSystem::assemble(design, penalty, rho)?;
    let loss = CheckLoss::new(config.alpha)?;
    let (mut theta, diagnostics) = irls_fit(&system, centered.responses(), &loss, &config.solver)?;
    let intercept = if config.intercept { theta.pop() } else { None };
    Ok(QuantileModel {
        basis,
        theta_hat: theta,
        intercept,
        alpha: config.alpha,
        rho,
        penalty_order: config.penalty_order,
        grid: centered.grid().to_vec(),
        mean_curve: centered.mean_curve().map(<[T]>::to_vec).unwrap_or_default(),
        quadrature: config.quadrature,
        diagnostics,
    })
}

/// Free-function form of [`QuantileModel::predict`].
pub fn predict<T: Real>(model: &QuantileModel<T>, curve: &CurveSample<T>) -> Result<T> {
    model.predict(curve)
}

/// Free-function form of [`QuantileModel::coefficient_function`].
pub fn coefficient_function<T: Real>(model: &QuantileModel<T>, out_grid: &[T]) -> Result<Vec<T>> {
    model.coefficient_function(out_grid)
}

/// Empirical semi-norm `‖u‖ₙ² = (1/n) Σ ⟨u, X_i⟩²` over the dataset's curves.
pub fn empirical_seminorm<T: Real>(dataset: &FunctionalDataset<T>, fvals: &[T], rule: QuadratureRule) -> Result<T> {
    if fvals.len() != dataset.grid().len() {
        return Err(Error::GridMismatch(format!(
            "function has {} samples, dataset grid has {}",
            fvals.len(),
            dataset.grid().len()
        )));
    }
    let w = rule.weights(dataset.grid())?;
    let n = T::from_usize_lossy(dataset.len());
    Ok(dataset
        .curves()
        .iter()
        .map(|c| {
            let ip = weighted_dot(&w, c, fvals);
            ip * ip
        })
        .sum::<T>()
        / n)
}

/// K-fold cross-validation of ρ on held-out mean check loss.
///
/// Rows are shuffled with `seed` before being dealt into folds. Ties go to
/// the larger ρ.
pub fn select_rho<T: Real>(
    dataset: &FunctionalDataset<T>,
    config: &FitConfig<T>,
    rho_grid: &[T],
    folds: usize,
    seed: u64,
) -> Result<T> {
    if rho_grid.is_empty() {
        return Err(Error::param("rho grid is empty"));
    }
    if rho_grid.iter().any(|r| *r < T::zero() || !r.is_finite()) {
        return Err(Error::param("rho grid values must be finite and >= 0"));
    }
    let n = dataset.len();
    if folds < 2 || folds > n {
        return Err(Error::param(format!("folds must lie in [2, {n}], got {folds}")));
    }
    if rho_grid.len() == 1 {
        return Ok(rho_grid[0]);
    }
    let loss = CheckLoss::new(config.alpha)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_rows: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = order.iter().enumerate().partition(|(pos, _)| pos % folds == f);
            (
                train.into_iter().map(|(_, &i)| i).collect(),
                test.into_iter().map(|(_, &i)| i).collect(),
            )
        })
        .collect();

    let mut rhos = rho_grid.to_vec();
    rhos.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    rhos.dedup();

    let scores: Vec<T> = rhos
        .par_iter()
        .map(|&rho| -> Result<T> {
            let mut total = T::zero();
            for (train, test) in &fold_rows {
                let train_set = dataset.select(train);
                let (k, _) = config.resolve(train.len());
                let cfg = FitConfig {
                    rho,
                    intervals: k,
                    auto_k_rho: false,
                    ..*config
                };
                let model = fit(&train_set, &cfg)?;
                let test_set = dataset.select(test);
                let pred = model.predict_dataset(&test_set)?;
                let held: T = test_set
                    .responses()
                    .iter()
                    .zip(&pred)
                    .map(|(&y, &p)| loss.value(y - p))
                    .sum::<T>()
                    / T::from_usize_lossy(test.len());
                total += held;
            }
            Ok(total / T::from_usize_lossy(folds))
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for i in 1..rhos.len() {
        let tie = T::lit(1e-12) * scores[best].abs().max(T::min_positive_value());
        if scores[i] <= scores[best] + tie {
            best = i;
        }
    }
    Ok(rhos[best])
}

/// Serialized model: every numeric field round-trips exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
struct ModelDocument<T> {
    degree: usize,
    intervals: usize,
    penalty_order: usize,
    alpha: T,
    rho: T,
    knots: Vec<T>,
    theta_hat: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intercept: Option<T>,
    mean_curve: Vec<T>,
    grid: Vec<T>,
    quadrature: QuadratureRule,
    diagnostics: FitDiagnostics<T>,
}

impl<T: Real> QuantileModel<T> {
    fn document(&self) -> ModelDocument<T> {
        ModelDocument {
            degree: self.basis.degree(),
            intervals: self.basis.intervals(),
            penalty_order: self.penalty_order,
            alpha: self.alpha,
            rho: self.rho,
            knots: self.basis.knots().to_vec(),
            theta_hat: self.theta_hat.clone(),
            intercept: self.intercept,
            mean_curve: self.mean_curve.clone(),
            grid: self.grid.clone(),
            quadrature: self.quadrature,
            diagnostics: self.diagnostics.clone(),
        }
    }

    fn from_document(doc: ModelDocument<T>) -> Result<Self> {
        let basis = SplineBasis::new(doc.degree, doc.intervals)?;
        if basis.knots() != doc.knots.as_slice() {
            return Err(Error::param("stored knots do not match degree and intervals"));
        }
        if doc.theta_hat.len() != basis.dim() {
            return Err(Error::mismatch("stored coefficients", basis.dim(), doc.theta_hat.len()));
        }
        crate::funcdata::validate_grid(&doc.grid)?;
        if doc.mean_curve.len() != doc.grid.len() {
            return Err(Error::mismatch("stored mean curve", doc.grid.len(), doc.mean_curve.len()));
        }
        CheckLoss::new(doc.alpha)?;
        Ok(QuantileModel {
            basis,
            theta_hat: doc.theta_hat,
            intercept: doc.intercept,
            alpha: doc.alpha,
            rho: doc.rho,
            penalty_order: doc.penalty_order,
            grid: doc.grid,
            mean_curve: doc.mean_curve,
            quadrature: doc.quadrature,
            diagnostics: doc.diagnostics,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.document())?)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.document())?;
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }

    pub fn read_json<R: Read>(src: R) -> Result<Self> {
        Self::from_document(serde_json::from_reader(src)?)
    }
}
