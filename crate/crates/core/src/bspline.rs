//! Clamped B-spline bases on equispaced knots of `[0, 1]`.
//!
//! A basis of degree `q` on `k` subintervals has `k + q` normalized
//! B-splines. Evaluation uses the Cox–de Boor triangle restricted to the
//! active knot span, so at most `q + 1` entries of any evaluated vector are
//! nonzero. At interior knots one-sided limits from the right are used
//! (from the left at `t = 1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, Matrix};
use crate::quadrature::{gauss_legendre, uniform_grid};
use crate::scalar::Real;

/// Grid size used by [`SplineBasis::approximate_function`].
pub const APPROXIMATION_GRID: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis<T> {
    degree: usize,
    intervals: usize,
    knots: Vec<T>,
}

impl<T: Real> SplineBasis<T> {
    /// Clamped basis of the given degree on `intervals` equal subintervals.
    ///
    /// Degree is unsigned, so only `intervals == 0` can be rejected here;
    /// signed inputs are checked by [`SplineBasis::try_new`].
    pub fn new(degree: usize, intervals: usize) -> Result<Self> {
        if intervals < 1 {
            return Err(Error::param(format!("intervals must be >= 1, got {intervals}")));
        }
        let q = degree;
        let k = intervals;
        let mut knots = Vec::with_capacity(k + 2 * q + 1);
        knots.extend(std::iter::repeat_n(T::zero(), q + 1));
        let kt = T::from_usize_lossy(k);
        knots.extend((1..k).map(|j| T::from_usize_lossy(j) / kt));
        knots.extend(std::iter::repeat_n(T::one(), q + 1));
        Ok(SplineBasis {
            degree,
            intervals,
            knots,
        })
    }

    /// Like [`SplineBasis::new`] but accepting signed parameters.
    pub fn try_new(degree: i64, intervals: i64) -> Result<Self> {
        if degree < 0 {
            return Err(Error::param(format!("degree must be >= 0, got {degree}")));
        }
        if intervals < 1 {
            return Err(Error::param(format!("intervals must be >= 1, got {intervals}")));
        }
        Self::new(degree as usize, intervals as usize)
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of basis functions, `intervals + degree`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Index `s` of the subinterval containing `t` (right-continuous, last
    /// interval closed).
    fn interval_of(&self, t: T) -> Result<usize> {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::OutOfDomain { t: t.as_f64() });
        }
        let q = self.degree;
        let k = self.intervals;
        let mut s = (t * T::from_usize_lossy(k))
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(k - 1);
        while s > 0 && t < self.knots[q + s] {
            s -= 1;
        }
        while s + 1 < k && t >= self.knots[q + s + 1] {
            s += 1;
        }
        Ok(s)
    }

    /// Derivatives `0..=order` of the `q + 1` functions active on knot span
    /// `q + s`; `out[d][j]` is the `d`-th derivative of basis `s + j`.
    fn local_derivatives(&self, s: usize, t: T, order: usize) -> Vec<Vec<T>> {
        let p = self.degree;
        let span = p + s;
        let u = &self.knots;
        let mut ndu = vec![vec![T::zero(); p + 1]; p + 1];
        let mut left = vec![T::zero(); p + 1];
        let mut right = vec![T::zero(); p + 1];
        ndu[0][0] = T::one();
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = T::zero();
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![T::zero(); p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [vec![T::zero(); p + 1], vec![T::zero(); p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = T::one();
            for kk in 1..=order {
                let mut d = T::zero();
                let rk = r as isize - kk as isize;
                let pk = p - kk;
                if r >= kk {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { kk - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
                    d += a[s2][kk] * ndu[r][pk];
                }
                ders[kk][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = T::from_usize_lossy(p);
        for (kk, row) in ders.iter_mut().enumerate().skip(1) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= T::from_usize_lossy(p - kk);
        }
        ders
    }

    /// Values `B_1(t), …, B_dim(t)`.
    pub fn eval(&self, t: T) -> Result<Vec<T>> {
        self.eval_deriv(t, 0)
    }

    /// `order`-th derivatives of all basis functions at `t`.
    pub fn eval_deriv(&self, t: T, order: usize) -> Result<Vec<T>> {
        if order > self.degree {
            return Err(Error::param(format!(
                "derivative order {order} exceeds degree {}",
                self.degree
            )));
        }
        let s = self.interval_of(t)?;
        let local = self.local_derivatives(s, t, order);
        let mut out = vec![T::zero(); self.dim()];
        out[s..s + self.degree + 1].copy_from_slice(&local[order]);
        Ok(out)
    }

    /// `Σ θ_l B_l(t)`.
    pub fn eval_spline(&self, theta: &[T], t: T) -> Result<T> {
        self.eval_spline_deriv(theta, t, 0)
    }

    pub fn eval_spline_deriv(&self, theta: &[T], t: T, order: usize) -> Result<T> {
        if theta.len() != self.dim() {
            return Err(Error::mismatch("spline coefficients", self.dim(), theta.len()));
        }
        if order > self.degree {
            return Err(Error::param(format!(
                "derivative order {order} exceeds degree {}",
                self.degree
            )));
        }
        let s = self.interval_of(t)?;
        let local = self.local_derivatives(s, t, order);
        Ok(local[order]
            .iter()
            .zip(&theta[s..])
            .map(|(&b, &c)| b * c)
            .sum())
    }

    /// Basis sampled on a grid: an `M × dim` matrix with entry `(j, l) = B_l(t_j)`.
    pub fn sample(&self, grid: &[T]) -> Result<Matrix<T>> {
        let q = self.degree;
        let mut out = Matrix::zeros(grid.len(), self.dim());
        for (j, &t) in grid.iter().enumerate() {
            let s = self.interval_of(t)?;
            let local = self.local_derivatives(s, t, 0);
            for (l, &v) in local[0].iter().enumerate().take(q + 1) {
                out[(j, s + l)] = v;
            }
        }
        Ok(out)
    }

    /// Like [`SplineBasis::sample`], except that a grid point sitting exactly
    /// on an interior knot of a degree-0 basis receives the average of the
    /// two one-sided limits. Composite quadrature over such a sampling then
    /// integrates each side of the jump separately.
    pub fn sample_for_quadrature(&self, grid: &[T]) -> Result<Matrix<T>> {
        let mut out = self.sample(grid)?;
        if self.degree == 0 {
            let half = T::lit(0.5);
            for (j, &t) in grid.iter().enumerate() {
                if let Some(s) = (1..self.intervals).find(|&s| self.knots[s] == t) {
                    out[(j, s - 1)] = half;
                    out[(j, s)] = half;
                }
            }
        }
        Ok(out)
    }

    /// Roughness penalty Gram matrix `G[j][l] = ∫ B_j^(m) B_l^(m)`.
    ///
    /// Each knot span is integrated with `q + 1` Gauss–Legendre nodes, which
    /// is exact for the degree `2(q − m)` integrand.
    pub fn penalty_matrix(&self, m: usize) -> Result<Matrix<T>> {
        let q = self.degree;
        if m < 1 || m > q {
            return Err(Error::param(format!(
                "penalty order m = {m} must lie in [1, {q}]"
            )));
        }
        let (nodes, weights) = gauss_legendre::<T>(q + 1);
        let dim = self.dim();
        let mut g = Matrix::zeros(dim, dim);
        let h = T::one() / T::from_usize_lossy(self.intervals);
        let half_h = h / T::lit(2.0);
        for s in 0..self.intervals {
            let a = T::from_usize_lossy(s) * h;
            for (&x, &w) in nodes.iter().zip(&weights) {
                let t = a + (x + T::one()) * half_h;
                let d = &self.local_derivatives(s, t, m)[m];
                let wt = w * half_h;
                for i in 0..=q {
                    let di = d[i] * wt;
                    for j in i..=q {
                        g[(s + i, s + j)] += di * d[j];
                    }
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                g[(i, j)] = g[(j, i)];
            }
        }
        Ok(g)
    }

    /// Least-squares projection of `f` onto the spline space over
    /// [`APPROXIMATION_GRID`] equispaced points.
    pub fn approximate_function(&self, f: impl Fn(T) -> T) -> Result<Vec<T>> {
        self.approximate_function_on(f, APPROXIMATION_GRID)
    }

    pub fn approximate_function_on(&self, f: impl Fn(T) -> T, points: usize) -> Result<Vec<T>> {
        if points < self.dim() {
            return Err(Error::mismatch("approximation grid (minimum)", self.dim(), points));
        }
        let grid = uniform_grid::<T>(points);
        let design = self.sample(&grid)?;
        let target: Vec<T> = grid.iter().map(|&t| f(t)).collect();
        least_squares(&design, &target)
    }

    /// Coefficients representing the polynomial `Σ c_i t^i` exactly, for
    /// polynomial degree at most `q`. Obtained by interpolation at the
    /// Greville abscissae.
    pub fn polynomial_coefficients(&self, coeffs: &[T]) -> Result<Vec<T>> {
        if coeffs.len() > self.degree + 1 {
            return Err(Error::param("polynomial degree exceeds spline degree"));
        }
        let q = self.degree;
        let qt = T::from_usize_lossy(q.max(1));
        let greville: Vec<T> = (0..self.dim())
            .map(|l| {
                if q == 0 {
                    (self.knots[l] + self.knots[l + 1]) / T::lit(2.0)
                } else {
                    self.knots[l + 1..=l + q].iter().copied().sum::<T>() / qt
                }
            })
            .collect();
        let design = self.sample(&greville)?;
        let values: Vec<T> = greville
            .iter()
            .map(|&t| coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * t + c))
            .collect();
        least_squares(&design, &values)
    }
}
