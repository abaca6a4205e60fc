//! Synthetic functional datasets with known coefficient function, and Monte
//! Carlo experiments on the estimator's error decay and quantile coverage.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf, StudentsT as StudentsTCdf};

use crate::error::{Error, Result};
use crate::estimator::{empirical_seminorm, fit, FitConfig};
use crate::funcdata::FunctionalDataset;
use crate::quadrature::{gauss_legendre, uniform_grid, QuadratureRule};

/// Law of the simulated covariate curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariate {
    /// Standard Brownian motion started at 0.
    Brownian,
    /// First `terms` terms of the Brownian Karhunen–Loève expansion with
    /// bounded, unit-variance uniform scores.
    KarhunenLoeve { terms: usize },
}

impl Covariate {
    /// Eigenvalue `1 / ((j − ½)² π²)` and eigenfunction of the Brownian
    /// covariance, `j ≥ 1`.
    fn kl_pair(j: usize) -> (f64, impl Fn(f64) -> f64) {
        let freq = (j as f64 - 0.5) * PI;
        (1.0 / (freq * freq), move |t: f64| 2f64.sqrt() * (freq * t).sin())
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covariate::Brownian => write!(f, "brownian"),
            Covariate::KarhunenLoeve { terms } => write!(f, "kl:{terms}"),
        }
    }
}

impl FromStr for Covariate {
    type Err = Error;

    /// `brownian` or `kl:J`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = split_kind(s);
        match (name.as_str(), arg) {
            ("brownian", None) => Ok(Covariate::Brownian),
            ("kl" | "karhunen_loeve", Some(a)) => {
                let terms: usize = a.parse().map_err(|_| Error::param(format!("bad KL term count '{a}'")))?;
                if terms == 0 {
                    return Err(Error::param("KL expansion needs at least one term"));
                }
                Ok(Covariate::KarhunenLoeve { terms })
            }
            _ => Err(Error::param(format!("unknown covariate law '{s}'"))),
        }
    }
}

/// Library of true coefficient functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiTrue {
    /// `sin(2πt)`
    Sine,
    /// `t(1 − t)`
    Parabola,
    /// `4t³ − 6t² + 2t`
    Cubic,
}

impl PsiTrue {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            PsiTrue::Sine => (2.0 * PI * t).sin(),
            PsiTrue::Parabola => t * (1.0 - t),
            PsiTrue::Cubic => 2.0 * t * (2.0 * t * t - 3.0 * t + 1.0),
        }
    }
}

impl fmt::Display for PsiTrue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PsiTrue::Sine => "sine",
            PsiTrue::Parabola => "parabola",
            PsiTrue::Cubic => "cubic",
        })
    }
}

impl FromStr for PsiTrue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine" | "sin" => Ok(PsiTrue::Sine),
            "parabola" => Ok(PsiTrue::Parabola),
            "cubic" => Ok(PsiTrue::Cubic),
            _ => Err(Error::param(format!("unknown coefficient function '{s}'"))),
        }
    }
}

/// Error law before the quantile shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    Gaussian { sigma: f64 },
    StudentT { df: f64 },
    /// Exponential with the given mean.
    Exponential { scale: f64 },
}

impl Noise {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Noise::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            Noise::StudentT { df } => df > 0.0 && df.is_finite(),
            Noise::Exponential { scale } => scale >= 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid noise parameters {self:?}")))
        }
    }

    /// α-quantile of the unshifted law.
    pub fn quantile(&self, alpha: f64) -> f64 {
        match *self {
            Noise::Gaussian { sigma: 0.0 } => 0.0,
            Noise::Gaussian { sigma } => {
                sigma * NormalCdf::new(0.0, 1.0).expect("standard normal").inverse_cdf(alpha)
            }
            Noise::StudentT { df } => StudentsTCdf::new(0.0, 1.0, df).expect("valid df").inverse_cdf(alpha),
            Noise::Exponential { scale } => -scale * (1.0 - alpha).ln(),
        }
    }

    /// Shift added to raw draws so that the α-quantile of the result is 0.
    pub fn shift(&self, alpha: f64) -> f64 {
        -self.quantile(alpha)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Noise::Gaussian { sigma: 0.0 } => 0.0,
            Noise::Gaussian { sigma } => sigma * Normal::new(0.0, 1.0).expect("normal").sample(rng),
            Noise::StudentT { df } => StudentT::new(df).expect("valid df").sample(rng),
            Noise::Exponential { scale: 0.0 } => 0.0,
            Noise::Exponential { scale } => scale * Exp::new(1.0).expect("exp").sample(rng),
        }
    }

    /// `count` quantile-shifted draws.
    pub fn sample_shifted<R: Rng>(&self, alpha: f64, count: usize, rng: &mut R) -> Vec<f64> {
        let shift = self.shift(alpha);
        (0..count).map(|_| self.draw(rng) + shift).collect()
    }
}

impl fmt::Display for Noise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Noise::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            Noise::StudentT { df } => write!(f, "student_t:{df}"),
            Noise::Exponential { scale } => write!(f, "exponential:{scale}"),
        }
    }
}

impl FromStr for Noise {
    type Err = Error;

    /// `gaussian:σ`, `student_t:df` or `exponential:scale`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = split_kind(s);
        let value = |a: Option<String>| -> Result<f64> {
            let a = a.ok_or_else(|| Error::param(format!("noise '{s}' needs a parameter")))?;
            a.parse().map_err(|_| Error::param(format!("bad noise parameter '{a}'")))
        };
        let noise = match name.as_str() {
            "gaussian" | "normal" => Noise::Gaussian { sigma: value(arg)? },
            "student_t" | "t" => Noise::StudentT { df: value(arg)? },
            "exponential" | "exp" => Noise::Exponential { scale: value(arg)? },
            _ => return Err(Error::param(format!("unknown noise law '{s}'"))),
        };
        noise.validate()?;
        Ok(noise)
    }
}

fn split_kind(s: &str) -> (String, Option<String>) {
    match s.split_once(':') {
        Some((a, b)) => (a.trim().to_ascii_lowercase(), Some(b.trim().to_string())),
        None => (s.trim().to_ascii_lowercase(), None),
    }
}

/// Recipe for one simulated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Number of uniform grid points on `[0, 1]`.
    pub grid_size: usize,
    pub covariate: Covariate,
    pub psi: PsiTrue,
    pub noise: Noise,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 200,
            grid_size: 101,
            covariate: Covariate::Brownian,
            psi: PsiTrue::Sine,
            noise: Noise::Gaussian { sigma: 0.5 },
            alpha: 0.5,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n must be >= 1"));
        }
        if self.grid_size < 2 {
            return Err(Error::param("grid_size must be >= 2"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Covariate::KarhunenLoeve { terms: 0 } = self.covariate {
            return Err(Error::param("KL expansion needs at least one term"));
        }
        self.noise.validate()
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.grid_size)
    }

    pub fn psi_values(&self) -> Vec<f64> {
        self.grid().iter().map(|&t| self.psi.eval(t)).collect()
    }
}

/// Deterministic 64-bit mixing (SplitMix64 finalizer).
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `rep` at sample size `n`.
pub fn replication_seed(base: u64, n: usize, rep: usize) -> u64 {
    splitmix(splitmix(splitmix(base) ^ n as u64) ^ rep as u64)
}

fn simulate_curve<R: Rng>(covariate: Covariate, grid: &[f64], rng: &mut R) -> Vec<f64> {
    match covariate {
        Covariate::Brownian => {
            let normal = Normal::new(0.0, 1.0).expect("normal");
            let mut x = 0.0;
            let mut prev = 0.0;
            grid.iter()
                .map(|&t| {
                    x += (t - prev).sqrt() * normal.sample(rng);
                    prev = t;
                    x
                })
                .collect()
        }
        Covariate::KarhunenLoeve { terms } => {
            let bound = 3f64.sqrt();
            let scores = Uniform::new_inclusive(-bound, bound).expect("uniform");
            let mut x = vec![0.0; grid.len()];
            for j in 1..=terms {
                let (lambda, phi) = Covariate::kl_pair(j);
                let z = lambda.sqrt() * scores.sample(rng);
                for (xv, &t) in x.iter_mut().zip(grid) {
                    *xv += z * phi(t);
                }
            }
            x
        }
    }
}

/// Draws `n` curves and responses `y_i = ⟨Ψ, X_i⟩ + ε_i`, the noise shifted
/// to have α-quantile 0. Returns the uncentered dataset and `Ψ` on the grid.
pub fn simulate_dataset(config: &SimConfig) -> Result<(FunctionalDataset<f64>, Vec<f64>)> {
    config.validate()?;
    let grid = config.grid();
    let psi = config.psi_values();
    let weights = QuadratureRule::Trapezoid.weights(&grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let curves: Vec<Vec<f64>> = (0..config.n)
        .map(|_| simulate_curve(config.covariate, &grid, &mut rng))
        .collect();
    let noise = config.noise.sample_shifted(config.alpha, config.n, &mut rng);
    let responses = curves
        .iter()
        .zip(&noise)
        .map(|(c, e)| {
            let signal: f64 = c.iter().zip(&psi).zip(&weights).map(|((x, p), w)| x * p * w).sum();
            signal + e
        })
        .collect();
    Ok((FunctionalDataset::from_curves(grid, curves, responses)?, psi))
}

/// `‖u‖₂² = ⟨Γ_X u, u⟩` for `u` sampled on `grid` and linearly interpolated.
///
/// For Brownian motion `⟨Γ_X u, u⟩ = ∫₀¹ (∫_r¹ u)² dr`, evaluated exactly for
/// the interpolant; for a KL expansion it is `Σ_j λ_j ⟨φ_j, u⟩²`.
pub fn theoretical_seminorm(u: &[f64], grid: &[f64], law: Covariate) -> Result<f64> {
    crate::funcdata::validate_grid(grid)?;
    if u.len() != grid.len() {
        return Err(Error::mismatch("function samples", grid.len(), u.len()));
    }
    match law {
        Covariate::Brownian => {
            let m = grid.len();
            // tail[j] = ∫_{t_j}^{t_last} u
            let mut tail = vec![0.0; m];
            for j in (0..m - 1).rev() {
                tail[j] = tail[j + 1] + 0.5 * (grid[j + 1] - grid[j]) * (u[j] + u[j + 1]);
            }
            let (nodes, weights) = gauss_legendre::<f64>(3);
            let mut total = grid[0] * tail[0] * tail[0];
            for j in 0..m - 1 {
                let h = grid[j + 1] - grid[j];
                let du = u[j + 1] - u[j];
                for (&x, &w) in nodes.iter().zip(&weights) {
                    let s = 0.5 * (x + 1.0);
                    let partial = h * (u[j] * (1.0 - s) + du * (1.0 - s * s) / 2.0);
                    let value = tail[j + 1] + partial;
                    total += 0.5 * w * h * value * value;
                }
            }
            Ok(total)
        }
        Covariate::KarhunenLoeve { terms } => {
            let w = QuadratureRule::Trapezoid.weights(grid)?;
            Ok((1..=terms)
                .map(|j| {
                    let (lambda, phi) = Covariate::kl_pair(j);
                    let proj: f64 = grid.iter().zip(u).zip(&w).map(|((&t, &v), &wt)| wt * v * phi(t)).sum();
                    lambda * proj * proj
                })
                .sum())
        }
    }
}

/// `‖Ψ̂ − Ψ‖₂²` under the covariate law.
pub fn theoretical_seminorm_error(psi_hat: &[f64], psi_true: &[f64], grid: &[f64], law: Covariate) -> Result<f64> {
    if psi_hat.len() != psi_true.len() {
        return Err(Error::mismatch("coefficient samples", psi_true.len(), psi_hat.len()));
    }
    let diff: Vec<f64> = psi_hat.iter().zip(psi_true).map(|(a, b)| a - b).collect();
    theoretical_seminorm(&diff, grid, law)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub reps_used: usize,
    pub nonconverged: usize,
    pub intervals: usize,
    pub rho: f64,
    pub mean_err_n: f64,
    pub se_n: f64,
    pub mean_err_2: f64,
    pub se_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log mean_err_n` against `log n`.
    pub slope_n: f64,
    pub slope_se_n: f64,
    pub slope_2: f64,
    pub slope_se_2: f64,
    /// `−2p / (4p + 1)`.
    pub reference_slope: f64,
    pub smoothness: usize,
    pub replications: usize,
    pub seed: u64,
}

impl RateReport {
    /// CSV with columns `n,reps_used,mean_err_n,se_n,mean_err_2,se_2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "reps_used", "mean_err_n", "se_n", "mean_err_2", "se_2"])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.reps_used.to_string(),
                r.mean_err_n.to_string(),
                r.se_n.to_string(),
                r.mean_err_2.to_string(),
                r.se_2.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Ordinary least-squares slope of `y` on `x` and its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = if x.len() > 2 { (ssr / (k - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, se)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (m, f64::NAN);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}

struct ReplicationError {
    converged: bool,
    err_n: f64,
    err_2: f64,
}

fn run_replication(base: &SimConfig, fit_config: &FitConfig<f64>, n: usize, rep: usize) -> Result<ReplicationError> {
    let sim = SimConfig {
        n,
        seed: replication_seed(base.seed, n, rep),
        ..*base
    };
    let (data, psi) = simulate_dataset(&sim)?;
    let centered = data.center_curves()?;
    let model = fit(&centered, fit_config)?;
    let psi_hat = model.coefficient_function(centered.grid())?;
    let diff: Vec<f64> = psi_hat.iter().zip(&psi).map(|(a, b)| a - b).collect();
    Ok(ReplicationError {
        converged: model.diagnostics().converged,
        err_n: empirical_seminorm(&centered, &diff, fit_config.quadrature)?,
        err_2: theoretical_seminorm(&diff, centered.grid(), base.covariate)?,
    })
}

/// Error decay experiment: for each `n`, `reps` datasets are fitted with
/// `k` and `ρ` from the auto rule (smoothness `fit_config.smoothness`), and
/// mean errors in the empirical and theoretical semi-norms are recorded.
/// Replications whose solver did not converge are excluded and counted.
pub fn rate_experiment(base: &SimConfig, fit_config: &FitConfig<f64>, ns: &[usize], reps: usize) -> Result<RateReport> {
    base.validate()?;
    if ns.len() < 4 {
        return Err(Error::param(format!("need at least 4 sample sizes, got {}", ns.len())));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("sample sizes must be strictly increasing"));
    }
    if reps < 10 {
        return Err(Error::param(format!("need at least 10 replications, got {reps}")));
    }
    let cfg = FitConfig {
        alpha: base.alpha,
        auto_k_rho: true,
        ..*fit_config
    };
    cfg.validate()?;

    let jobs: Vec<(usize, usize)> = ns.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let results: Vec<ReplicationError> = jobs
        .par_iter()
        .map(|&(n, r)| run_replication(base, &cfg, n, r))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(ns.len());
    for (chunk, &n) in results.chunks(reps).zip(ns) {
        let used: Vec<&ReplicationError> = chunk.iter().filter(|r| r.converged).collect();
        let (mean_err_n, se_n) = mean_se(&used.iter().map(|r| r.err_n).collect::<Vec<_>>());
        let (mean_err_2, se_2) = mean_se(&used.iter().map(|r| r.err_2).collect::<Vec<_>>());
        let (intervals, rho) = cfg.resolve(n);
        rows.push(RateRow {
            n,
            reps_used: used.len(),
            nonconverged: chunk.len() - used.len(),
            intervals,
            rho,
            mean_err_n,
            se_n,
            mean_err_2,
            se_2,
        });
    }
    let log_n: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let (slope_n, slope_se_n) = ols_slope(&log_n, &rows.iter().map(|r| r.mean_err_n.ln()).collect::<Vec<_>>());
    let (slope_2, slope_se_2) = ols_slope(&log_n, &rows.iter().map(|r| r.mean_err_2.ln()).collect::<Vec<_>>());
    let p = cfg.smoothness as f64;
    Ok(RateReport {
        rows,
        slope_n,
        slope_se_n,
        slope_2,
        slope_se_2,
        reference_slope: -2.0 * p / (4.0 * p + 1.0),
        smoothness: cfg.smoothness,
        replications: reps,
        seed: base.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: f64,
    pub n_train: usize,
    pub m_test: usize,
    /// Fraction of test responses `y ≤ ŷ`.
    pub coverage: f64,
    /// Fraction of test responses `y < ŷ`.
    pub coverage_strict: f64,
    pub count_le: usize,
    pub count_lt: usize,
    pub converged: bool,
    pub seed: u64,
}

/// Fits on `config.n` simulated pairs and measures how often fresh responses
/// fall at or below the predicted α-quantile.
pub fn coverage_experiment(config: &SimConfig, fit_config: &FitConfig<f64>, m_test: usize) -> Result<CoverageReport> {
    if m_test < 100 {
        return Err(Error::param(format!("need at least 100 test pairs, got {m_test}")));
    }
    let (train, _) = simulate_dataset(config)?;
    let test_config = SimConfig {
        n: m_test,
        seed: replication_seed(config.seed, m_test, usize::MAX),
        ..*config
    };
    let (test, _) = simulate_dataset(&test_config)?;
    let cfg = FitConfig {
        alpha: config.alpha,
        ..*fit_config
    };
    let model = fit(&train, &cfg)?;
    let pred = model.predict_dataset(&test)?;
    let count_le = test.responses().iter().zip(&pred).filter(|(y, p)| y <= p).count();
    let count_lt = test.responses().iter().zip(&pred).filter(|(y, p)| y < p).count();
    Ok(CoverageReport {
        alpha: config.alpha,
        n_train: config.n,
        m_test,
        coverage: count_le as f64 / m_test as f64,
        coverage_strict: count_lt as f64 / m_test as f64,
        count_le,
        count_lt,
        converged: model.diagnostics().converged,
        seed: config.seed,
    })
}
