//! Reference implementations used as test oracles. Nothing here calls into
//! the library's own spline code.

#![allow(dead_code)]

use funqr::linalg::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Clamped equispaced knot vector, built independently.
pub fn clamped_knots(q: usize, k: usize) -> Vec<f64> {
    let mut knots = vec![0.0; q + 1];
    knots.extend((1..k).map(|j| j as f64 / k as f64));
    knots.extend(std::iter::repeat_n(1.0, q + 1));
    knots
}

/// Value at `t` of the spline `(knots, coef)` of degree `q`, using the
/// polynomial piece of knot span `span` (so `t` may sit on a span end).
/// Plain de Boor triangle.
pub fn de_boor(knots: &[f64], coef: &[f64], q: usize, span: usize, t: f64) -> f64 {
    let mut d: Vec<f64> = (0..=q).map(|j| coef[j + span - q]).collect();
    for r in 1..=q {
        for j in (r..=q).rev() {
            let i = j + span - q;
            let denom = knots[i + q - r + 1] - knots[i];
            let a = if denom == 0.0 { 0.0 } else { (t - knots[i]) / denom };
            d[j] = (1.0 - a) * d[j - 1] + a * d[j];
        }
    }
    d[q]
}

/// Knots and coefficients of the `m`-th derivative spline.
pub fn derivative_spline(knots: &[f64], coef: &[f64], q: usize, m: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let mut knots = knots.to_vec();
    let mut coef = coef.to_vec();
    let mut deg = q;
    for _ in 0..m {
        let next: Vec<f64> = (1..coef.len())
            .map(|i| {
                let h = knots[i + deg] - knots[i];
                if h == 0.0 {
                    0.0
                } else {
                    deg as f64 * (coef[i] - coef[i - 1]) / h
                }
            })
            .collect();
        knots = knots[1..knots.len() - 1].to_vec();
        coef = next;
        deg -= 1;
    }
    (knots, coef, deg)
}

/// `∫₀¹ (f^(m))²` for the degree-`q` spline with coefficients `theta` on `k`
/// equispaced intervals: composite trapezoid with `cells` cells, each cell
/// evaluated with the polynomial piece that owns it.
pub fn penalty_oracle(q: usize, k: usize, m: usize, theta: &[f64], cells: usize) -> f64 {
    let (knots, coef, deg) = derivative_spline(&clamped_knots(q, k), theta, q, m);
    let h = 1.0 / cells as f64;
    let mut total = 0.0;
    for c in 0..cells {
        let (a, b) = (c as f64 * h, (c + 1) as f64 * h);
        let mid = 0.5 * (a + b);
        let piece = ((mid * k as f64).floor() as usize).min(k - 1);
        let span = piece + deg;
        let fa = de_boor(&knots, &coef, deg, span, a);
        let fb = de_boor(&knots, &coef, deg, span, b);
        total += 0.5 * h * (fa * fa + fb * fb);
    }
    total
}

/// Degree-`q` spline value at `t` from coefficients (span chosen by `t`).
pub fn spline_value(q: usize, k: usize, theta: &[f64], t: f64) -> f64 {
    let piece = ((t * k as f64).floor() as usize).min(k - 1);
    de_boor(&clamped_knots(q, k), theta, q, piece + q, t)
}

/// Empirical α-quantile `inf{y : F_n(y) ≥ α}`.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (alpha * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
