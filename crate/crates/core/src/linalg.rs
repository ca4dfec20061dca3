//! Dense symmetric linear algebra for the surrogate models.
//!
//! The central type is [`CholFactor`], a lower-triangular Cholesky factor
//! stored row-major in packed form. Row `i` occupies `i + 1` contiguous
//! entries, so appending a bordered row is a plain `Vec` extension and the
//! factor grows by amortized doubling without copying the existing rows.

use std::cell::Cell;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

thread_local! {
    static FACTORIZATIONS: Cell<u64> = const { Cell::new(0) };
    static APPENDS: Cell<u64> = const { Cell::new(0) };
}

/// Per-thread operation counters used to verify that the sequential update
/// path never refactorizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    /// Full `O(n^3)` factorizations performed by [`cholesky`].
    pub factorizations: u64,
    /// `O(n^2)` row appends performed by [`CholFactor::append`].
    pub appends: u64,
}

impl OpCounts {
    pub fn since(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            factorizations: self.factorizations - earlier.factorizations,
            appends: self.appends - earlier.appends,
        }
    }
}

/// Snapshot of the counters of the calling thread.
pub fn op_counts() -> OpCounts {
    OpCounts {
        factorizations: FACTORIZATIONS.with(Cell::get),
        appends: APPENDS.with(Cell::get),
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which triangular system [`tri_solve`] solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `L z = b`
    Lower,
    /// `L^T x = b`
    UpperTransposed,
}

/// Lower-triangular Cholesky factor `L` with `L L^T = A`.
#[derive(Clone, PartialEq)]
pub struct CholFactor {
    packed: Vec<f64>,
    n: usize,
}

#[inline]
fn row_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

impl Default for CholFactor {
    fn default() -> Self {
        Self::empty()
    }
}

impl CholFactor {
    /// The factor of a 0×0 matrix; the starting point for sequential appends.
    pub fn empty() -> Self {
        CholFactor {
            packed: Vec::new(),
            n: 0,
        }
    }

    /// Empty factor with room for `n` rows before reallocating.
    pub fn with_capacity(n: usize) -> Self {
        CholFactor {
            packed: Vec::with_capacity(row_offset(n)),
            n: 0,
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Row `i` of `L` up to and including the diagonal.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = row_offset(i);
        &self.packed[start..start + i + 1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.packed[row_offset(i) + j]
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.packed[row_offset(i) + i]
    }

    /// `log |A| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    pub fn to_dense(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `L L^T` as a dense matrix.
    pub fn reconstruct(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| {
            let k = i.min(j) + 1;
            dot(&self.row(i)[..k], &self.row(j)[..k])
        })
    }

    /// Borders the factored matrix with a new row and column.
    ///
    /// `cross` holds the new off-diagonal entries and `corner` the new
    /// diagonal entry. Costs one forward substitution, `O(n^2)`. On error the
    /// factor is left unchanged.
    pub fn append(&mut self, cross: &[f64], corner: f64) -> Result<()> {
        if cross.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                found: cross.len(),
            });
        }
        let mut z = cross.to_vec();
        self.forward_in_place(&mut z);
        let pivot = corner - dot(&z, &z);
        if pivot.is_nan() || pivot <= 0.0 || !pivot.is_finite() {
            return Err(LinalgError::NotPositiveDefinite {
                pivot: self.n,
                value: pivot,
            });
        }
        if self.packed.capacity() < row_offset(self.n + 1) {
            let target = row_offset(2 * (self.n + 1)).max(16);
            self.packed.reserve(target - self.packed.len());
        }
        self.packed.extend_from_slice(&z);
        self.packed.push(pivot.sqrt());
        self.n += 1;
        APPENDS.with(|c| c.set(c.get() + 1));
        Ok(())
    }

    /// Non-mutating form of [`CholFactor::append`].
    pub fn appended(&self, cross: &[f64], corner: f64) -> Result<CholFactor> {
        let mut out = self.clone();
        out.append(cross, corner)?;
        Ok(out)
    }

    fn check_len(&self, b: &[f64]) -> Result<()> {
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        Ok(())
    }

    /// Solves `L z = b` in place. Panics on length mismatch.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `L^T x = b` in place. Panics on length mismatch.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for i in (0..self.n).rev() {
            let row = self.row(i);
            let xi = b[i] / row[i];
            b[i] = xi;
            for (bj, lij) in b[..i].iter_mut().zip(&row[..i]) {
                *bj -= lij * xi;
            }
        }
    }

    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        let mut z = b.to_vec();
        self.forward_in_place(&mut z);
        Ok(z)
    }

    pub fn solve_upper(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        let mut x = b.to_vec();
        self.backward_in_place(&mut x);
        Ok(x)
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        Ok(x)
    }

    /// `A^{-1}` as a dense matrix. Only used for small systems.
    pub fn inverse(&self) -> Matrix {
        let mut inv = Matrix::zeros(self.n, self.n);
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.forward_in_place(&mut e);
            self.backward_in_place(&mut e);
            for i in 0..self.n {
                inv[(i, j)] = e[i];
            }
        }
        inv
    }
}

impl fmt::Debug for CholFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CholFactor")
            .field("n", &self.n)
            .field("L", &self.to_dense())
            .finish()
    }
}

/// Full Cholesky factorization of a symmetric matrix. Only the lower
/// triangle of `a` is read.
pub fn cholesky(a: &Matrix) -> Result<CholFactor> {
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
    factorize(a)
}

/// Cholesky factorization for the small basis-sized (p×p) systems of the
/// surrogate. Not recorded in [`op_counts`].
pub fn cholesky_small(a: &Matrix) -> Result<CholFactor> {
    factorize(a)
}

fn factorize(a: &Matrix) -> Result<CholFactor> {
    if !a.is_square() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.rows(),
            found: a.cols(),
        });
    }
    let n = a.rows();
    let mut packed = Vec::with_capacity(row_offset(n));
    for i in 0..n {
        let start = row_offset(i);
        for j in 0..i {
            let rj = row_offset(j);
            let s = a[(i, j)] - dot(&packed[start..start + j], &packed[rj..rj + j]);
            let v = s / packed[rj + j];
            packed.push(v);
        }
        let ri = &packed[start..start + i];
        let s = a[(i, i)] - dot(ri, ri);
        if s.is_nan() || s <= 0.0 || !s.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { pivot: i, value: s });
        }
        packed.push(s.sqrt());
    }
    Ok(CholFactor { packed, n })
}

pub fn tri_solve(factor: &CholFactor, b: &[f64], side: Side) -> Result<Vec<f64>> {
    match side {
        Side::Lower => factor.solve_lower(b),
        Side::UpperTransposed => factor.solve_upper(b),
    }
}

pub fn chol_solve(factor: &CholFactor, b: &[f64]) -> Result<Vec<f64>> {
    factor.solve(b)
}
