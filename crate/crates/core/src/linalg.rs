//! Dense row-major linear algebra: covariance estimation, Cholesky
//! factorization and triangular solves, plus the handful of matrix
//! products the backbones need.
//!
//! There is deliberately no general inverse. Quadratic forms against a
//! covariance go through [`cholesky`] and [`solve_lower`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.row_mut(i).iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out[(i, j)] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lower-triangular Cholesky factor with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerTriangular {
    factor: Matrix,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.factor
    }

    /// `L · Lᵀ`
    pub fn reconstruct(&self) -> Matrix {
        self.factor.matmul_t(&self.factor)
    }

    /// Rebuilds a factor from a stored matrix, checking the triangular shape
    /// and the positive diagonal.
    pub fn from_matrix(factor: Matrix) -> Result<Self> {
        if !factor.is_square() {
            return Err(Error::Shape(format!(
                "triangular factor must be square, got {:?}",
                factor.shape()
            )));
        }
        let n = factor.rows();
        for i in 0..n {
            if !(factor[(i, i)] > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    pivot: i,
                    value: factor[(i, i)],
                });
            }
            if factor.row(i)[i + 1..].iter().any(|&v| v != 0.0) {
                return Err(Error::Shape(format!("row {i} has entries above the diagonal")));
            }
        }
        Ok(Self { factor })
    }
}

/// Unbiased sample covariance `Σ (xᵢ−μ)(xᵢ−μ)ᵀ / (n−1)` around a supplied
/// mean. The result is symmetric by construction: only the lower triangle
/// is accumulated and then mirrored.
pub fn sample_covariance(x: &Matrix, mu: &[f64]) -> Result<Matrix> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::DegenerateSample(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    if mu.len() != d {
        return Err(Error::Shape(format!(
            "mean has length {}, rows have length {d}",
            mu.len()
        )));
    }
    if !x.is_finite() || mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in covariance input".into()));
    }

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in x.row_iter() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(mu) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            let cov_row = cov.row_mut(i);
            for j in 0..=i {
                cov_row[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// `Σ + λI`
pub fn regularize(sigma: &Matrix, lambda: f64) -> Result<Matrix> {
    if !sigma.is_square() {
        return Err(Error::Shape(format!(
            "regularize expects a square matrix, got {:?}",
            sigma.shape()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "regularization must be finite and non-negative, got {lambda}"
        )));
    }
    let mut out = sigma.clone();
    for i in 0..out.rows() {
        out[(i, i)] += lambda;
    }
    Ok(out)
}

/// Cholesky–Banachiewicz factorization of a symmetric positive definite
/// matrix. Only the lower triangle of `a` is read.
///
/// A non-positive (or non-finite) pivot is reported with its index; nothing
/// is patched up.
pub fn cholesky(a: &Matrix) -> Result<LowerTriangular> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "cholesky expects a square matrix, got {:?}",
            a.shape()
        )));
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(LowerTriangular { factor: l })
}

/// Forward substitution: returns `y` with `L·y = b`.
pub fn solve_lower(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.dim();
    if b.len() != n {
        return Err(Error::Shape(format!(
            "factor has dim {n}, right-hand side has length {}",
            b.len()
        )));
    }
    let f = &l.factor;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&f.row(i)[..i], &y[..i]);
        y[i] = s / f[(i, i)];
    }
    Ok(y)
}
