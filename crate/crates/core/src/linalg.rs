//! Small dense symmetric positive definite algebra for local GP solves.

use crate::error::{Error, FactorDiagnostics, Result};
use crate::Scalar;

/// Number of times the jitter is doubled after a failed factorization.
pub const JITTER_RETRIES: usize = 3;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
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
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged matrix rows"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    /// Column vector.
    pub fn column(v: &[T]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::contract(format!(
                "shape mismatch {}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Self::from_fn(self.rows, rhs.cols, |i, j| (0..self.cols).map(|k| self[(i, k)] * rhs[(k, j)]).sum()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    fn check_symmetric(&self) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::contract(format!("matrix is {}x{}, not square", self.rows, self.cols)));
        }
        let tol = T::lit(1e-12).max(T::geometric_eps()) * T::one().max(self.max_abs());
        for i in 0..self.rows {
            for j in 0..i {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return Err(Error::contract(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower Cholesky factor `L` with `A + jitter·I = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    /// Packed row-major lower triangle.
    lower: Vec<T>,
    jitter_used: T,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl<T: Scalar> Cholesky<T> {
    /// Factors `a + jitter·I`, doubling the jitter up to [`JITTER_RETRIES`] times on failure.
    pub fn factor(a: &DenseMatrix<T>, jitter: T) -> Result<Self> {
        a.check_symmetric()?;
        let n = a.rows;
        let (diag_min, diag_max) =
            (0..n).fold((T::infinity(), T::neg_infinity()), |(lo, hi), i| (lo.min(a[(i, i)]), hi.max(a[(i, i)])));
        let mut shift = jitter;
        let mut tried = Vec::with_capacity(JITTER_RETRIES + 1);
        let mut worst = T::zero();
        for attempt in 0..=JITTER_RETRIES {
            tried.push(shift.to_f64_lossy());
            match Self::try_factor(a, shift) {
                Ok(lower) => return Ok(Self { n, lower, jitter_used: shift }),
                Err(pivot) => worst = pivot,
            }
            if attempt < JITTER_RETRIES {
                shift = if shift > T::zero() {
                    shift + shift
                } else {
                    // Zero jitter cannot be doubled; start from a scale-aware floor.
                    T::epsilon() * diag_max.abs().max(T::one())
                };
            }
        }
        Err(Error::NotPositiveDefinite(FactorDiagnostics {
            dim: n,
            jitter_tried: tried,
            worst_pivot: worst.to_f64_lossy(),
            diag_min: diag_min.to_f64_lossy(),
            diag_max: diag_max.to_f64_lossy(),
        }))
    }

    fn try_factor(a: &DenseMatrix<T>, shift: T) -> std::result::Result<Vec<T>, T> {
        let n = a.rows;
        let mut l = vec![T::zero(); n * (n + 1) / 2];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[tri(i, k)] * l[tri(j, k)];
                }
                if i == j {
                    let d = s + shift;
                    if !(d > T::zero()) || !d.is_finite() {
                        return Err(d);
                    }
                    l[tri(i, i)] = d.sqrt();
                } else {
                    l[tri(i, j)] = s / l[tri(j, j)];
                }
            }
        }
        Ok(l)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter_used(&self) -> T {
        self.jitter_used
    }

    /// Forward substitution: solves `L·y = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        debug_assert_eq!(b.len(), self.n);
        let mut y = b.to_vec();
        for i in 0..self.n {
            let row = &self.lower[tri(i, 0)..tri(i, 0) + i];
            let s = row.iter().zip(&y[..i]).fold(y[i], |acc, (l, v)| acc - *l * *v);
            y[i] = s / self.lower[tri(i, i)];
        }
        y
    }

    /// Back substitution: solves `Lᵀ·x = y`.
    #[allow(clippy::needless_range_loop)]
    pub fn solve_upper(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(y.len(), self.n);
        let mut x = y.to_vec();
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in i + 1..self.n {
                s = s - self.lower[tri(k, i)] * x[k];
            }
            x[i] = s / self.lower[tri(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn solve_matrix(&self, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if b.rows != self.n {
            return Err(Error::contract(format!("rhs has {} rows, expected {}", b.rows, self.n)));
        }
        let mut out = DenseMatrix::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            for (i, v) in self.solve(&b.col(j)).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

/// Solves `A·X = B` for SPD `A`, with jitter escalation starting at `jitter`.
pub fn solve_spd<T: Scalar>(matrix: &DenseMatrix<T>, rhs: &DenseMatrix<T>, jitter: T) -> Result<DenseMatrix<T>> {
    Cholesky::factor(matrix, jitter)?.solve_matrix(rhs)
}
