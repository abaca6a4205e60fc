//! Sampled curves, responses, curve–basis inner products and the penalized
//! Gram system built from them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::SplineBasis;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::quadrature::QuadratureRule;
use crate::scalar::Real;

/// Checks that a grid has at least two points, lies in `[0, 1]` and is
/// strictly increasing. Columns in errors are 0-based grid indices.
pub fn validate_grid<T: Real>(grid: &[T]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::mismatch("grid length (minimum)", 2, grid.len()));
    }
    for (j, &t) in grid.iter().enumerate() {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::GridOutOfRange {
                column: j,
                value: t.as_f64(),
            });
        }
        if j > 0 && t <= grid[j - 1] {
            return Err(Error::NonMonotoneGrid { column: j });
        }
    }
    Ok(())
}

pub(crate) fn same_grid<T: Real>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "{} grid points versus {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(j) = a.iter().zip(b).position(|(x, y)| x != y) {
        return Err(Error::GridMismatch(format!("grids differ at index {j}")));
    }
    Ok(())
}

/// One curve observed on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample<T> {
    grid: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> CurveSample<T> {
    pub fn new(grid: Vec<T>, values: Vec<T>) -> Result<Self> {
        validate_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::mismatch("curve values", grid.len(), values.len()));
        }
        Ok(CurveSample { grid, values })
    }

    pub fn from_fn(grid: Vec<T>, f: impl Fn(T) -> T) -> Result<Self> {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// `∫ curve · f` by the given rule, with `f` sampled on the curve's grid.
pub fn inner_product<T: Real>(curve: &CurveSample<T>, fvals: &[T], rule: QuadratureRule) -> Result<T> {
    if fvals.len() != curve.grid.len() {
        return Err(Error::GridMismatch(format!(
            "function has {} samples, curve grid has {}",
            fvals.len(),
            curve.grid.len()
        )));
    }
    let w = rule.weights(&curve.grid)?;
    Ok(weighted_dot(&w, &curve.values, fvals))
}

#[inline]
pub(crate) fn weighted_dot<T: Real>(w: &[T], a: &[T], b: &[T]) -> T {
    w.iter().zip(a).zip(b).map(|((&w, &x), &y)| w * x * y).sum()
}

/// `n` curves on one shared grid together with their scalar responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset<T> {
    grid: Vec<T>,
    ids: Vec<String>,
    curves: Vec<Vec<T>>,
    responses: Vec<T>,
    mean_curve: Option<Vec<T>>,
}

impl<T: Real> FunctionalDataset<T> {
    pub fn new(grid: Vec<T>, ids: Vec<String>, curves: Vec<Vec<T>>, responses: Vec<T>) -> Result<Self> {
        validate_grid(&grid)?;
        if curves.is_empty() {
            return Err(Error::mismatch("number of curves (minimum)", 1, 0));
        }
        if responses.len() != curves.len() {
            return Err(Error::mismatch("responses", curves.len(), responses.len()));
        }
        if ids.len() != curves.len() {
            return Err(Error::mismatch("curve ids", curves.len(), ids.len()));
        }
        for c in &curves {
            if c.len() != grid.len() {
                return Err(Error::mismatch("curve length", grid.len(), c.len()));
            }
        }
        Ok(FunctionalDataset {
            grid,
            ids,
            curves,
            responses,
            mean_curve: None,
        })
    }

    /// Dataset with ids `"1"`, `"2"`, ….
    pub fn from_curves(grid: Vec<T>, curves: Vec<Vec<T>>, responses: Vec<T>) -> Result<Self> {
        let ids = (1..=curves.len()).map(|i| i.to_string()).collect();
        Self::new(grid, ids, curves, responses)
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn responses(&self) -> &[T] {
        &self.responses
    }

    pub fn curve_values(&self, i: usize) -> &[T] {
        &self.curves[i]
    }

    pub fn curves(&self) -> &[Vec<T>] {
        &self.curves
    }

    pub fn curve(&self, i: usize) -> CurveSample<T> {
        CurveSample {
            grid: self.grid.clone(),
            values: self.curves[i].clone(),
        }
    }

    pub fn is_centered(&self) -> bool {
        self.mean_curve.is_some()
    }

    /// Pointwise mean removed by [`FunctionalDataset::center_curves`].
    pub fn mean_curve(&self) -> Option<&[T]> {
        self.mean_curve.as_deref()
    }

    /// Pointwise sample mean of the stored curves.
    pub fn pointwise_mean(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.len());
        let mut mean = vec![T::zero(); self.grid.len()];
        for c in &self.curves {
            for (m, &v) in mean.iter_mut().zip(c) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Subtracts the pointwise sample mean from every curve.
    pub fn center_curves(mut self) -> Result<Self> {
        if self.is_centered() {
            return Err(Error::AlreadyCentered);
        }
        let mean = self.pointwise_mean();
        for c in &mut self.curves {
            for (v, &m) in c.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        self.mean_curve = Some(mean);
        Ok(self)
    }

    /// Subset of rows, keeping the grid and centering state.
    pub fn select(&self, rows: &[usize]) -> Self {
        FunctionalDataset {
            grid: self.grid.clone(),
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            curves: rows.iter().map(|&i| self.curves[i].clone()).collect(),
            responses: rows.iter().map(|&i| self.responses[i]).collect(),
            mean_curve: self.mean_curve.clone(),
        }
    }

    /// Writes the curves CSV (`t,t_1,…` header then `id,v_1,…` rows).
    pub fn write_curves_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.grid.iter().map(|t| format_real(*t)));
        w.write_record(&header)?;
        for (id, c) in self.ids.iter().zip(&self.curves) {
            let mut row = vec![id.clone()];
            row.extend(c.iter().map(|v| format_real(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the responses CSV (`id,y` rows after an `id,y` header).
    pub fn write_responses_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "y"])?;
        for (id, y) in self.ids.iter().zip(&self.responses) {
            w.write_record([id.clone(), format_real(*y)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest decimal representation that parses back to the same value.
pub(crate) fn format_real<T: Real>(x: T) -> String {
    format!("{x}")
}

fn parse_cell<T: Real>(file: &str, row: usize, column: usize, cell: &str) -> Result<T> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        row,
        column,
        message: format!("not a number: '{cell}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            file: file.to_string(),
            row,
            column,
            message: format!("non-finite value '{cell}'"),
        });
    }
    Ok(T::lit(v))
}

fn csv_reader<R: Read>(src: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(src)
}

/// Shared grid, curve ids and curve values.
pub type CurveTable<T> = (Vec<T>, Vec<String>, Vec<Vec<T>>);

/// Curves CSV without responses: the shared grid, ids and curve values.
/// Rows and columns in errors are 1-based.
pub fn read_curves<T: Real, R: Read>(src: R) -> Result<CurveTable<T>> {
    const FILE: &str = "curves";
    let mut reader = csv_reader(src);
    let mut records = reader.records();
    let header = records.next().ok_or_else(|| Error::Parse {
        file: FILE.into(),
        row: 1,
        column: 1,
        message: "missing grid header".into(),
    })??;
    if header.len() < 3 {
        return Err(Error::Parse {
            file: FILE.into(),
            row: 1,
            column: header.len(),
            message: "header needs a label and at least two grid values".into(),
        });
    }
    let grid = header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, cell)| parse_cell::<T>(FILE, 1, c + 1, cell))
        .collect::<Result<Vec<T>>>()?;
    validate_grid(&grid).map_err(|e| match e {
        Error::NonMonotoneGrid { column } => Error::Parse {
            file: FILE.into(),
            row: 1,
            column: column + 2,
            message: "grid is not strictly increasing".into(),
        },
        Error::GridOutOfRange { column, value } => Error::Parse {
            file: FILE.into(),
            row: 1,
            column: column + 2,
            message: format!("grid value {value} outside [0, 1]"),
        },
        other => other,
    })?;

    let mut ids = Vec::new();
    let mut curves = Vec::new();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != grid.len() + 1 {
            return Err(Error::Parse {
                file: FILE.into(),
                row,
                column: rec.len(),
                message: format!("expected {} fields, found {}", grid.len() + 1, rec.len()),
            });
        }
        ids.push(rec[0].to_string());
        curves.push(
            rec.iter()
                .enumerate()
                .skip(1)
                .map(|(c, cell)| parse_cell::<T>(FILE, row, c + 1, cell))
                .collect::<Result<Vec<T>>>()?,
        );
    }
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            return Err(Error::IdMismatch(format!(
                "duplicate curve id '{id}' on rows {} and {}",
                prev + 2,
                i + 2
            )));
        }
    }
    Ok((grid, ids, curves))
}

/// Responses CSV: `(id, y)` pairs, with an optional `id,y` header row.
pub fn read_responses<T: Real, R: Read>(src: R) -> Result<Vec<(String, T)>> {
    const FILE: &str = "responses";
    let mut out = Vec::new();
    for (r, rec) in csv_reader(src).records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::Parse {
                file: FILE.into(),
                row,
                column: rec.len(),
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        if row == 1 && rec[1].parse::<f64>().is_err() {
            continue;
        }
        out.push((rec[0].to_string(), parse_cell::<T>(FILE, row, 2, &rec[1])?));
    }
    Ok(out)
}

/// Reads curves and responses and pairs them by id. The result is uncentered.
pub fn load_dataset<T: Real, C: Read, R: Read>(curves_src: C, responses_src: R) -> Result<FunctionalDataset<T>> {
    let (grid, ids, curves) = read_curves::<T, _>(curves_src)?;
    let pairs = read_responses::<T, _>(responses_src)?;
    if pairs.len() != curves.len() {
        return Err(Error::mismatch("responses versus curves", curves.len(), pairs.len()));
    }
    let mut by_id: HashMap<&str, T> = HashMap::with_capacity(pairs.len());
    for (i, (id, y)) in pairs.iter().enumerate() {
        if by_id.insert(id.as_str(), *y).is_some() {
            return Err(Error::IdMismatch(format!("duplicate response id '{id}' (entry {})", i + 1)));
        }
    }
    let responses = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::IdMismatch(format!("no response for curve id '{id}'")))
        })
        .collect::<Result<Vec<T>>>()?;
    FunctionalDataset::new(grid, ids, curves, responses)
}

pub fn load_dataset_from_paths<T: Real>(curves: &Path, responses: &Path) -> Result<FunctionalDataset<T>> {
    load_dataset(File::open(curves)?, File::open(responses)?)
}

/// Pseudo-design matrix `A[i][j] = ⟨X_i, B_j⟩`.
///
/// Uncentered input is accepted with a logged warning.
pub fn design_matrix<T: Real>(
    dataset: &FunctionalDataset<T>,
    basis: &SplineBasis<T>,
    rule: QuadratureRule,
) -> Result<Matrix<T>> {
    if !dataset.is_centered() {
        log::warn!("design matrix built from uncentered curves");
    }
    let weighted_basis = weighted_basis(&dataset.grid, basis, rule)?;
    curve_projections(&dataset.curves, &weighted_basis)
}

/// `M × dim` matrix with entries `w_m B_l(t_m)`.
pub(crate) fn weighted_basis<T: Real>(
    grid: &[T],
    basis: &SplineBasis<T>,
    rule: QuadratureRule,
) -> Result<Matrix<T>> {
    let w = rule.weights(grid)?;
    let sampled = basis.sample_for_quadrature(grid)?;
    Ok(Matrix::from_fn(grid.len(), basis.dim(), |m, l| w[m] * sampled[(m, l)]))
}

pub(crate) fn curve_projections<T: Real>(curves: &[Vec<T>], weighted_basis: &Matrix<T>) -> Result<Matrix<T>> {
    let rows: Vec<Vec<T>> = curves
        .par_iter()
        .map(|c| weighted_basis.tr_mul_vec(c))
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows).map(|m| {
        if rows.is_empty() {
            Matrix::zeros(0, weighted_basis.cols())
        } else {
            m
        }
    })
}

/// Gram matrix of the design together with the roughness penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedSystem<T> {
    design: Matrix<T>,
    gram: Matrix<T>,
    penalty: Matrix<T>,
    rho: T,
    assembled: Matrix<T>,
    lambda_min: T,
    near_singular: bool,
}

impl<T: Real> PenalizedSystem<T> {
    /// `Ĉ = AᵀA / n`, `Ĉ_ρ = Ĉ + ρ G` and the smallest eigenvalue of `Ĉ_ρ`.
    ///
    /// The system is flagged near-singular (and a warning logged) when
    /// `λ_min < 1e-10 (1 + tr Ĉ_ρ)`.
    pub fn assemble(design: Matrix<T>, penalty: Matrix<T>, rho: T) -> Result<Self> {
        if rho < T::zero() || !rho.is_finite() {
            return Err(Error::param(format!("rho must be finite and >= 0, got {rho}")));
        }
        let dim = design.cols();
        if penalty.rows() != dim || penalty.cols() != dim {
            return Err(Error::mismatch("penalty dimension", dim, penalty.rows()));
        }
        let n = design.rows();
        if n == 0 {
            return Err(Error::mismatch("design rows (minimum)", 1, 0));
        }
        let gram = design.weighted_gram(None, T::one() / T::from_usize_lossy(n))?;
        let assembled = gram.add_scaled(&penalty, rho)?;
        let lambda_min = symmetric_eigenvalues(&assembled)?
            .first()
            .copied()
            .unwrap_or_else(T::zero);
        let threshold = T::lit(1e-10) * (T::one() + assembled.trace().abs());
        let near_singular = lambda_min < threshold;
        if near_singular {
            log::warn!("penalized Gram matrix is near-singular (lambda_min = {lambda_min})");
        }
        Ok(PenalizedSystem {
            design,
            gram,
            penalty,
            rho,
            assembled,
            lambda_min,
            near_singular,
        })
    }

    pub fn design(&self) -> &Matrix<T> {
        &self.design
    }

    pub fn gram(&self) -> &Matrix<T> {
        &self.gram
    }

    pub fn penalty(&self) -> &Matrix<T> {
        &self.penalty
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn assembled(&self) -> &Matrix<T> {
        &self.assembled
    }

    pub fn lambda_min(&self) -> T {
        self.lambda_min
    }

    pub fn near_singular(&self) -> bool {
        self.near_singular
    }

    pub fn n(&self) -> usize {
        self.design.rows()
    }

    pub fn dim(&self) -> usize {
        self.design.cols()
    }
}

/// Free-function form of [`PenalizedSystem::assemble`].
pub fn assemble_system<T: Real>(design: Matrix<T>, penalty: Matrix<T>, rho: T) -> Result<PenalizedSystem<T>> {
    PenalizedSystem::assemble(design, penalty, rho)
}
