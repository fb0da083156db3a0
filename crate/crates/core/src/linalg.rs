//! Dense symmetric positive-definite linear algebra.
//!
//! Matrices are small (inducing-point counts in the tens to low hundreds), so
//! everything here is a straightforward row-major dense implementation generic
//! over [`Scalar`].

// `!(x > 0.0)` checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{GviError, Result};
use crate::scalar::Scalar;

/// Number of ×10 jitter escalations tried after the jitter-free attempt.
pub const JITTER_ESCALATIONS: usize = 5;

/// Default base jitter, relative to the mean diagonal.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Tolerance used when checking symmetry.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
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
        Mat { rows, cols, data }
    }

    /// Builds a matrix from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GviError::DimensionMismatch {
                context: "Mat::from_vec",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(GviError::DimensionMismatch {
                    context: "Mat::from_rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend(r.iter().map(|&v| T::cst(v)));
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// True when the stored buffer length agrees with the shape.
    pub fn is_consistent(&self) -> bool {
        self.data.len() == self.rows * self.cols
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts through `f64`; gradients are not carried across.
    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        self.map(|v| U::cst(v.val()))
    }

    pub fn to_f64(&self) -> Mat<f64> {
        self.cast()
    }

    pub fn matmul(&self, other: &Mat<T>) -> Result<Mat<T>> {
        if self.cols != other.rows {
            return Err(GviError::DimensionMismatch {
                context: "matmul",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols != v.len() {
            return Err(GviError::DimensionMismatch {
                context: "mat_vec",
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn add(&self, other: &Mat<T>) -> Result<Mat<T>> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat<T>) -> Result<Mat<T>> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Mat<T> {
        self.map(|v| v * s)
    }

    fn zip_with(&self, other: &Mat<T>, f: impl Fn(T, T) -> T) -> Result<Mat<T>> {
        if self.shape() != other.shape() {
            return Err(GviError::DimensionMismatch {
                context: "elementwise",
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_diagonal(&self, value: T) -> Mat<T> {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += value;
        }
        m
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.val().abs()).fold(0.0, f64::max)
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// A square matrix known to be symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix<T> {
    inner: Mat<T>,
}

impl<T: Scalar> SpdMatrix<T> {
    /// Wraps `m` after checking squareness and symmetry (1e-12 relative).
    pub fn new(m: Mat<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(GviError::DimensionMismatch {
                context: "SpdMatrix::new",
                expected: m.rows(),
                found: m.cols(),
            });
        }
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        let mut asym = 0.0f64;
        for i in 0..m.rows() {
            for j in 0..i {
                asym = asym.max((m[(i, j)].val() - m[(j, i)].val()).abs() / scale);
            }
        }
        if !(asym <= SYMMETRY_TOL) {
            return Err(GviError::NotSymmetric { asymmetry: asym });
        }
        Ok(SpdMatrix { inner: m })
    }

    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    pub fn matrix(&self) -> &Mat<T> {
        &self.inner
    }

    pub fn into_inner(self) -> Mat<T> {
        self.inner
    }
}

/// Lower-triangular Cholesky factor with strictly positive diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CholFactor<T> {
    lower: Mat<T>,
    jitter: f64,
}

impl<T: Scalar> CholFactor<T> {
    /// Wraps an explicit lower-triangular factor; the strict upper triangle is ignored.
    pub fn from_lower(lower: Mat<T>) -> Result<Self> {
        if !lower.is_square() {
            return Err(GviError::DimensionMismatch {
                context: "CholFactor::from_lower",
                expected: lower.rows(),
                found: lower.cols(),
            });
        }
        let n = lower.rows();
        if lower.diagonal().iter().any(|d| !(d.val() > 0.0)) {
            return Err(GviError::NotPositiveDefinite {
                dim: n,
                max_jitter: 0.0,
            });
        }
        let lower = Mat::from_fn(n, n, |i, j| if j <= i { lower[(i, j)] } else { T::zero() });
        Ok(CholFactor { lower, jitter: 0.0 })
    }

    pub fn identity(n: usize) -> Self {
        CholFactor {
            lower: Mat::identity(n),
            jitter: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Mat<T> {
        &self.lower
    }

    /// Absolute jitter added to the diagonal before factorization.
    pub fn jitter_applied(&self) -> f64 {
        self.jitter
    }

    /// L·Lᵀ
    pub fn reconstruct(&self) -> Mat<T> {
        let n = self.dim();
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let k = j + 1;
                let v = dot(&self.lower.row(i)[..k], &self.lower.row(j)[..k]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Solves L·x = b for a single right-hand side.
    pub fn solve_lower_vec(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        if b.len() != n {
            return Err(GviError::DimensionMismatch {
                context: "tri_solve",
                expected: n,
                found: b.len(),
            });
        }
        let mut x: Vec<T> = Vec::with_capacity(n);
        for i in 0..n {
            let row = self.lower.row(i);
            let s = b[i] - dot(&row[..i], &x[..i]);
            x.push(s / row[i]);
        }
        Ok(x)
    }

    /// Solves Lᵀ·x = b for a single right-hand side.
    pub fn solve_upper_vec(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        if b.len() != n {
            return Err(GviError::DimensionMismatch {
                context: "tri_solve",
                expected: n,
                found: b.len(),
            });
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.lower[(k, i)] * x[k];
            }
            x[i] = s / self.lower[(i, i)];
        }
        Ok(x)
    }

    /// Solves (L·Lᵀ)·x = b.
    pub fn solve_vec(&self, b: &[T]) -> Result<Vec<T>> {
        let y = self.solve_lower_vec(b)?;
        self.solve_upper_vec(&y)
    }

    /// (L·Lᵀ)⁻¹
    pub fn inverse(&self) -> Mat<T> {
        let n = self.dim();
        let linv = tri_solve(self, &Mat::identity(n), false).expect("square");
        // A⁻¹ = L⁻ᵀ L⁻¹ = (L⁻¹)ᵀ (L⁻¹)
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = T::zero();
                for k in i..n {
                    s += linv[(k, i)] * linv[(k, j)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

/// Cholesky factorization with jitter escalation.
///
/// Tries no jitter first, then `base_jitter · mean(diag(a)) · 10^k` for
/// `k = 0..5`. The applied jitter is recorded on the returned factor.
pub fn cholesky_psd<T: Scalar>(a: &SpdMatrix<T>, base_jitter: f64) -> Result<CholFactor<T>> {
    let m = a.matrix();
    let n = a.dim();
    let mean_diag = if n == 0 {
        0.0
    } else {
        m.diagonal().iter().map(|d| d.val()).sum::<f64>() / n as f64
    };
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut last = 0.0;
    for step in 0..=JITTER_ESCALATIONS {
        let jitter = if step == 0 {
            0.0
        } else {
            base_jitter * scale * 10f64.powi(step as i32 - 1)
        };
        last = jitter;
        if let Some(lower) = try_cholesky(m, jitter) {
            if step > 1 {
                log::debug!("cholesky of {n}x{n} matrix needed jitter {jitter:e}");
            }
            return Ok(CholFactor { lower, jitter });
        }
        if base_jitter == 0.0 {
            break;
        }
    }
    Err(GviError::NotPositiveDefinite {
        dim: n,
        max_jitter: last,
    })
}

fn try_cholesky<T: Scalar>(a: &Mat<T>, jitter: f64) -> Option<Mat<T>> {
    let n = a.rows();
    let jit = T::cst(jitter);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let row_j = &l.row(j)[..j];
        let s = a[(j, j)] + jit - dot(row_j, row_j);
        if !(s.val() > 0.0) || !s.is_finite() {
            return None;
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let v = (a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j])) / d;
            l[(i, j)] = v;
        }
    }
    Some(l)
}

/// Solves L·x = b (or Lᵀ·x = b when `transposed`) column by column.
pub fn tri_solve<T: Scalar>(l: &CholFactor<T>, b: &Mat<T>, transposed: bool) -> Result<Mat<T>> {
    if b.rows() != l.dim() {
        return Err(GviError::DimensionMismatch {
            context: "tri_solve",
            expected: l.dim(),
            found: b.rows(),
        });
    }
    let mut out = Mat::zeros(b.rows(), b.cols());
    for c in 0..b.cols() {
        let col = b.column(c);
        let x = if transposed {
            l.solve_upper_vec(&col)?
        } else {
            l.solve_lower_vec(&col)?
        };
        out.set_column(c, &x);
    }
    Ok(out)
}

/// log|L·Lᵀ| = 2·Σ log Lᵢᵢ
pub fn logdet<T: Scalar>(l: &CholFactor<T>) -> T {
    let two = T::cst(2.0);
    two * l.lower.diagonal().into_iter().map(|d| d.ln()).sum::<T>()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns.
pub fn symmetric_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let a = SpdMatrix::new(a.clone())?.into_inner();
    let n = a.rows();
    let mut m = a;
    let mut v = Mat::<f64>::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-22 * (m.frobenius_norm().powi(2)).max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}
