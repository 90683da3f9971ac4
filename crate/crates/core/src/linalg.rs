//! Dense real matrices, Cholesky factorization, triangular solves and the
//! structural operators (Kronecker product, shift matrices, row selectors)
//! used to stack the horizon predictor.
//!
//! Storage is row-major. Horizon problems stay small (a few hundred rows at
//! most), so everything here is dense and unblocked.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Default diagonal jitter added before factorizing a normal matrix.
pub const DEFAULT_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} has value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
}

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Zero matrix. Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::InvalidDimension(format!(
                "{rows}x{cols} matrix is empty"
            )));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. Panics on ragged or empty input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self::from_row_major(r, c, rows.concat()).expect("valid matrix shape")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Column vector (n×1).
    pub fn column(values: &[f64]) -> Self {
        Self::from_row_major(values.len(), 1, values.to_vec()).expect("non-empty column")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let other_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn tr_matmul(&self, other: &Mat) -> Result<Mat, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: other.rows,
            });
        }
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, a) in a_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Mat) -> Result<Mat, LinalgError> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Mat { data, ..*self })
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat, LinalgError> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Mat { data, ..*self })
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            data: self.data.iter().map(|a| a * s).collect(),
            ..*self
        }
    }

    pub fn add_assign_scaled(&mut self, other: &Mat, s: f64) -> Result<(), LinalgError> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// `(A + Aᵀ)/2`. Requires a square matrix.
    pub fn symmetrized(&self) -> Result<Mat, LinalgError> {
        self.check_square()?;
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// Copies the `nr×nc` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Mat {
        Mat::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Mat) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Mat) -> Result<(), LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: other.rows,
            });
        }
        if self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: other.cols,
            });
        }
        Ok(())
    }

    fn check_square(&self) -> Result<(), LinalgError> {
        if self.is_square() {
            Ok(())
        } else {
            Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: self.cols,
            })
        }
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Cholesky factor `L` with `H = L Lᵀ`; strict upper part is zero and the
/// diagonal is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Ratio of the largest to the smallest diagonal entry, a cheap
    /// conditioning proxy for the factored matrix.
    pub fn diag_ratio(&self) -> f64 {
        let d = self.diagonal();
        let max = d.iter().cloned().fold(f64::MIN, f64::max);
        let min = d.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_row_major(self.n, self.n, self.data.clone()).expect("square factor")
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let n = self.n;
        Mat::from_fn(n, n, |i, j| {
            (0..=i.min(j)).map(|k| self.get(i, k) * self.get(j, k)).sum()
        })
    }
}

/// Unblocked lower Cholesky factorization of `(H + Hᵀ)/2 + jitter·I`.
pub fn cholesky(h: &Mat, jitter: f64) -> Result<LowerTriangular, LinalgError> {
    if !h.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: h.rows(),
            found: h.cols(),
        });
    }
    if !(jitter >= 0.0) {
        return Err(LinalgError::InvalidDimension(format!(
            "jitter must be non-negative, got {jitter}"
        )));
    }
    let n = h.rows();
    let sym = |i: usize, j: usize| 0.5 * (h[(i, j)] + h[(j, i)]);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        let s = sym(i, i) + jitter - (0..i).map(|k| l[i * n + k] * l[i * n + k]).sum::<f64>();
        // NaN pivots fail here too.
        if !(s > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { pivot: i, value: s });
        }
        let lii = s.sqrt();
        l[i * n + i] = lii;
        for j in (i + 1)..n {
            let t = sym(j, i) - (0..i).map(|k| l[j * n + k] * l[i * n + k]).sum::<f64>();
            l[j * n + i] = t / lii;
        }
    }
    Ok(LowerTriangular { n, data: l })
}

/// Forward substitution: `L z = b`.
pub fn solve_lower(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = l.n;
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let row = &l.data[i * n..i * n + i];
        z[i] = (b[i] - dot(row, &z[..i])) / l.get(i, i);
    }
    Ok(z)
}

/// Backward substitution: `Lᵀ x = z`.
pub fn solve_upper_transposed(l: &LowerTriangular, z: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = l.n;
    if z.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: z.len(),
        });
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = z[i];
        for k in (i + 1)..n {
            acc -= l.get(k, i) * x[k];
        }
        x[i] = acc / l.get(i, i);
    }
    Ok(x)
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let z = solve_lower(l, b)?;
    solve_upper_transposed(l, &z)
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ra, ca) = (a.rows(), a.cols());
    let (rb, cb) = (b.rows(), b.cols());
    let mut out = Mat::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// `i`-step shift matrix `S_i ∈ R^{N×N}`: entry `(j, l)` (1-based) is one
/// iff `j − l = i`. `S_0 = I_N`; for `i ≥ N` the result is zero.
pub fn shift_matrix(n: usize, i: usize) -> Mat {
    let mut s = Mat::zeros(n, n);
    for j in i..n {
        s[(j, j - i)] = 1.0;
    }
    s
}

/// `F_i = [I_i; 0] ∈ R^{N×i}`, selecting the first `i` rows.
pub fn first_rows_selector(n: usize, i: usize) -> Result<Mat, LinalgError> {
    if i == 0 || i > n {
        return Err(LinalgError::InvalidDimension(format!(
            "selector needs 1 <= i <= N, got i={i}, N={n}"
        )));
    }
    let mut f = Mat::zeros(n, i);
    for j in 0..i {
        f[(j, j)] = 1.0;
    }
    Ok(f)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
