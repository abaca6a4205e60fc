//! Quadrature rules: Gauss–Legendre nodes for piecewise polynomials and
//! composite rules for curves sampled on a grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1, "at least one node");
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let two = T::lit(2.0);
    for i in 0..n.div_ceil(2) {
        let guess = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut x = T::lit(guess);
        let mut dp = T::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= T::epsilon() {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = two / ((T::one() - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = T::zero();
    }
    (nodes, weights)
}

fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    for k in 2..=n {
        let kt = T::from_usize_lossy(k);
        let p2 = ((T::lit(2.0) * kt - T::one()) * x * p1 - (kt - T::one()) * p0) / kt;
        p0 = p1;
        p1 = p2;
    }
    let nt = T::from_usize_lossy(n);
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let dp = nt * (x * p1 - p0) / (x * x - T::one());
    if n == 1 {
        (x, T::one())
    } else {
        (p1, dp)
    }
}

/// Composite rule for integrating sampled curves over their grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    #[default]
    Trapezoid,
    /// Composite Simpson; needs a uniform grid with an even number of intervals.
    Simpson,
}

impl QuadratureRule {
    /// Weights `w` such that `Σ w_j f(t_j) ≈ ∫ f` over `[t_0, t_last]`.
    pub fn weights<T: Real>(self, grid: &[T]) -> Result<Vec<T>> {
        let m = grid.len();
        if m < 2 {
            return Err(Error::mismatch("quadrature grid length (minimum)", 2, m));
        }
        let half = T::lit(0.5);
        match self {
            QuadratureRule::Trapezoid => {
                let mut w = vec![T::zero(); m];
                for j in 0..m - 1 {
                    let h = grid[j + 1] - grid[j];
                    w[j] += half * h;
                    w[j + 1] += half * h;
                }
                Ok(w)
            }
            QuadratureRule::Simpson => {
                let intervals = m - 1;
                if !intervals.is_multiple_of(2) {
                    return Err(Error::Simpson(format!(
                        "{intervals} intervals; an even count is required"
                    )));
                }
                let h = (grid[m - 1] - grid[0]) / T::from_usize_lossy(intervals);
                let tol = h * T::epsilon().sqrt();
                if let Some(j) = (0..intervals).find(|&j| ((grid[j + 1] - grid[j]) - h).abs() > tol) {
                    return Err(Error::Simpson(format!("grid not uniform at interval {j}")));
                }
                let third = h / T::lit(3.0);
                Ok((0..m)
                    .map(|j| {
                        if j == 0 || j == m - 1 {
                            third
                        } else if j % 2 == 1 {
                            T::lit(4.0) * third
                        } else {
                            T::lit(2.0) * third
                        }
                    })
                    .collect())
            }
        }
    }
}

impl fmt::Display for QuadratureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuadratureRule::Trapezoid => "trapezoid",
            QuadratureRule::Simpson => "simpson",
        })
    }
}

impl FromStr for QuadratureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trapezoid" => Ok(QuadratureRule::Trapezoid),
            "simpson" => Ok(QuadratureRule::Simpson),
            other => Err(Error::param(format!("unknown quadrature rule '{other}'"))),
        }
    }
}

/// Uniform grid of `m` points on `[0, 1]`.
pub fn uniform_grid<T: Real>(m: usize) -> Vec<T> {
    assert!(m >= 2, "grid needs two points");
    let denom = T::from_usize_lossy(m - 1);
    (0..m).map(|j| T::from_usize_lossy(j) / denom).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_monomials_exactly() {
        for n in 1..=8usize {
            let (x, w) = gauss_legendre::<f64>(n);
            for deg in 0..(2 * n) {
                let approx: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "n={n} deg={deg}: {approx} vs {exact}");
            }
        }
    }

    #[test]
    fn gauss_legendre_f32() {
        let (x, w) = gauss_legendre::<f32>(4);
        let s: f32 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-6);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn trapezoid_exact_for_linear() {
        let g = uniform_grid::<f64>(11);
        let w = QuadratureRule::Trapezoid.weights(&g).unwrap();
        let integral: f64 = g.iter().zip(&w).map(|(t, w)| t * w).sum();
        assert!((integral - 0.5).abs() < 1e-15);
    }

    #[test]
    fn simpson_preconditions() {
        let g = uniform_grid::<f64>(4);
        assert!(matches!(QuadratureRule::Simpson.weights(&g), Err(Error::Simpson(_))));
        let g = vec![0.0, 0.1, 0.5, 0.6, 1.0];
        assert!(matches!(QuadratureRule::Simpson.weights(&g), Err(Error::Simpson(_))));
        let g = uniform_grid::<f64>(5);
        let w = QuadratureRule::Simpson.weights(&g).unwrap();
        let cubic: f64 = g.iter().zip(&w).map(|(t, w)| t.powi(3) * w).sum();
        assert!((cubic - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rule_parses() {
        assert_eq!("Simpson".parse::<QuadratureRule>().unwrap(), QuadratureRule::Simpson);
        assert!("gauss".parse::<QuadratureRule>().is_err());
    }
}
