//! Small dense linear algebra: row-major matrices, Cholesky, Jacobi
//! eigenvalues and Householder least squares.
//!
//! Problem sizes here are tiny (spline dimensions of a few dozen), so the
//! routines favour clarity over blocking.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::mismatch("matrix row length", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::mismatch("matrix-vector product", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::mismatch("transposed matrix-vector product", self.rows, v.len()));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::mismatch("matrix product", self.cols, other.rows));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ diag(w) self`, scaled by `scale`. Passing `None` uses unit weights.
    pub fn weighted_gram(&self, weights: Option<&[T]>, scale: T) -> Result<Self> {
        if let Some(w) = weights {
            if w.len() != self.rows {
                return Err(Error::mismatch("gram weights", self.rows, w.len()));
            }
        }
        let p = self.cols;
        let mut out = Self::zeros(p, p);
        for i in 0..self.rows {
            let wi = weights.map_or(T::one(), |w| w[i]) * scale;
            let r = self.row(i);
            for a in 0..p {
                let ra = r[a] * wi;
                if ra == T::zero() {
                    continue;
                }
                for b in a..p {
                    out[(a, b)] += ra * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                out[(a, b)] = out[(b, a)];
            }
        }
        Ok(out)
    }

    /// `vᵀ self v` for a square matrix.
    pub fn quad_form(&self, v: &[T]) -> Result<T> {
        if self.rows != self.cols || v.len() != self.cols {
            return Err(Error::mismatch("quadratic form", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|i| v[i] * dot(self.row(i), v)).sum())
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Matrix<T>, s: T) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::mismatch("matrix sum", self.data.len(), other.data.len()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + s * b)
                .collect(),
        })
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Lower-triangular Cholesky factor `L` with `LLᵀ = M`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Fails with [`Error::SolverSingular`] when a pivot is not strictly positive.
    pub fn factor(m: &Matrix<T>) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::mismatch("cholesky (square)", n, m.cols()));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= T::zero() || !d.is_finite() {
                return Err(Error::SolverSingular);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.lower.rows();
        if b.len() != n {
            return Err(Error::mismatch("cholesky solve", n, b.len()));
        }
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let t = l[(i, k)] * y[k];
                y[i] -= t;
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let t = l[(k, i)] * y[k];
                y[i] -= t;
            }
            y[i] /= l[(i, i)];
        }
        Ok(y)
    }
}

/// Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues<T: Real>(m: &Matrix<T>) -> Result<Vec<T>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::mismatch("eigenvalues (square)", n, m.cols()));
    }
    let mut a = m.clone();
    let scale = a.max_abs();
    if scale == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= eps * eps * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= T::min_positive_value() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(ev)
}

/// Solves a general square system by Gaussian elimination with partial
/// pivoting. A pivot below `pivot_tol · max|a|` is reported as
/// [`Error::SolverSingular`].
pub fn solve_general<T: Real>(a: &Matrix<T>, b: &[T], pivot_tol: T) -> Result<Vec<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::mismatch("linear solve (square)", n, a.cols()));
    }
    if b.len() != n {
        return Err(Error::mismatch("linear solve rhs", n, b.len()));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let tiny = m.max_abs() * pivot_tol.max(T::epsilon());
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).expect("finite"))
            .expect("non-empty range");
        if m[(pivot, col)].abs() <= tiny || m[(pivot, col)].is_nan() {
            return Err(Error::SolverSingular);
        }
        if pivot != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = t;
            }
            x.swap(col, pivot);
        }
        for i in (col + 1)..n {
            let f = m[(i, col)] / m[(col, col)];
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                let t = f * m[(col, j)];
                m[(i, j)] -= t;
            }
            let t = f * x[col];
            x[i] -= t;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}

/// Minimizes `‖A x − b‖₂` by Householder QR. Requires full column rank.
pub fn least_squares<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m {
        return Err(Error::mismatch("least squares rhs", m, b.len()));
    }
    if m < n {
        return Err(Error::mismatch("least squares rows", n, m));
    }
    let mut r = a.clone();
    let mut rhs = b.to_vec();
    for j in 0..n {
        let norm = (j..m).map(|i| r[(i, j)] * r[(i, j)]).sum::<T>().sqrt();
        if norm == T::zero() {
            return Err(Error::SolverSingular);
        }
        let alpha = if r[(j, j)] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (j..m).map(|i| r[(i, j)]).collect();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 == T::zero() {
            continue;
        }
        for c in j..n {
            let s = (j..m).map(|i| v[i - j] * r[(i, c)]).sum::<T>() * T::lit(2.0) / vnorm2;
            for i in j..m {
                r[(i, c)] -= s * v[i - j];
            }
        }
        let s = (j..m).map(|i| v[i - j] * rhs[i]).sum::<T>() * T::lit(2.0) / vnorm2;
        for i in j..m {
            rhs[i] -= s * v[i - j];
        }
    }
    let diag_max = (0..n).fold(T::zero(), |acc, i| acc.max(r[(i, i)].abs()));
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        if r[(i, i)].abs() <= diag_max * T::epsilon() * T::from_usize_lossy(m) {
            return Err(Error::SolverSingular);
        }
        let mut s = rhs[i];
        for k in (i + 1)..n {
            s -= r[(i, k)] * x[k];
        }
        x[i] = s / r[(i, i)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> Matrix<f64> {
        Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn cholesky_solves() {
        let m = spd();
        let x = vec![1.0, -2.0, 0.5];
        let b = m.mul_vec(&x).unwrap();
        let sol = Cholesky::factor(&m).unwrap().solve(&b).unwrap();
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-13);
        }
    }

    #[test]
    fn cholesky_rejects_singular() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::factor(&m), Err(Error::SolverSingular)));
        assert!(Cholesky::factor(&Matrix::<f64>::zeros(2, 2)).is_err());
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let m = Matrix::<f64>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let ev = symmetric_eigenvalues(&m).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);

        let ev = symmetric_eigenvalues(&spd()).unwrap();
        let sum: f64 = ev.iter().sum();
        assert!((sum - 9.0).abs() < 1e-12);
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn general_solve_needs_pivoting() {
        let m = Matrix::<f64>::from_rows(&[vec![0.0, 1.0], vec![2.0, 1.0]]).unwrap();
        let x = solve_general(&m, &[3.0, 5.0], 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 3.0).abs() < 1e-15);
        let sing = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(solve_general(&sing, &[1.0, 2.0], 1e-12).is_err());
    }

    #[test]
    fn least_squares_recovers_exact_fit() {
        let a = Matrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let b: Vec<f64> = (0..6).map(|i| 2.0 + 0.5 * i as f64).collect();
        let x = least_squares(&a, &b).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_gram_matches_explicit_product() {
        let a = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.4);
        let w = [1.0, 2.0, 0.5, 3.0];
        let g = a.weighted_gram(Some(&w), 0.25).unwrap();
        let wa = Matrix::from_fn(4, 3, |i, j| a[(i, j)] * w[i] * 0.25);
        let expect = a.transpose().matmul(&wa).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[(i, j)] - expect[(i, j)]).abs() < 1e-14);
            }
        }
    }
}
