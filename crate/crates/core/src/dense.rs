//! Small row-major dense matrix with the handful of factorizations the
//! solvers need (thin QR, Cholesky, symmetric Jacobi eigenvalues).

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
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

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("columns of unequal length"));
        }
        Ok(Self::from_fn(rows, cols, |i, j| columns[j][i]))
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(p)) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, rhs.cols);
        for p in 0..self.rows {
            let b_row = rhs.row(p);
            for (i, &a) in self.row(p).iter().enumerate() {
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn t_matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len(), "t_matvec shape mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * vi;
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Thin Householder QR of an `m × n` matrix with `m ≥ n`.
    ///
    /// Returns `(Q, R)` with `Q` of size `m × n`, orthonormal columns, and `R`
    /// upper triangular with a strictly positive diagonal. Fails when the
    /// columns are numerically dependent.
    pub fn thin_qr(&self) -> Result<(Self, Self)> {
        let (m, n) = (self.rows, self.cols);
        if n > m {
            return Err(Error::invalid(format!(
                "thin QR needs rows >= cols, got {m}x{n}"
            )));
        }
        if !self.is_finite() {
            return Err(Error::invalid("non-finite matrix entry"));
        }
        let scale = self.frobenius_norm();
        let rank_tol =
            T::epsilon() * T::lit((m.max(n) * 16) as f64) * scale.max(T::min_positive_value());
        let mut a = self.clone();
        let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        for j in 0..n {
            let x: Vec<T> = (j..m).map(|i| a[(i, j)]).collect();
            let norm_x = dot(&x, &x).sqrt();
            if norm_x <= rank_tol || scale == T::zero() {
                return Err(Error::degenerate(format!(
                    "matrix is rank deficient at column {j}"
                )));
            }
            let alpha = if x[0] >= T::zero() { -norm_x } else { norm_x };
            let mut v = x;
            v[0] = v[0] - alpha;
            let vnorm = dot(&v, &v).sqrt();
            for vi in v.iter_mut() {
                *vi = *vi / vnorm;
            }
            for c in j..n {
                let mut s = T::zero();
                for (off, &vi) in v.iter().enumerate() {
                    s = s + vi * a[(j + off, c)];
                }
                let two_s = s + s;
                for (off, &vi) in v.iter().enumerate() {
                    a[(j + off, c)] = a[(j + off, c)] - two_s * vi;
                }
            }
            diag.push(alpha);
            reflectors.push(v);
        }
        let mut r = Self::zeros(n, n);
        for i in 0..n {
            for c in i..n {
                r[(i, c)] = a[(i, c)];
            }
            r[(i, i)] = diag[i];
        }
        // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
        let mut q = Self::from_fn(m, n, |i, c| if i == c { T::one() } else { T::zero() });
        for j in (0..n).rev() {
            let v = &reflectors[j];
            for c in 0..n {
                let mut s = T::zero();
                for (off, &vi) in v.iter().enumerate() {
                    s = s + vi * q[(j + off, c)];
                }
                let two_s = s + s;
                for (off, &vi) in v.iter().enumerate() {
                    q[(j + off, c)] = q[(j + off, c)] - two_s * vi;
                }
            }
        }
        for i in 0..n {
            if r[(i, i)] < T::zero() {
                for c in i..n {
                    r[(i, c)] = -r[(i, c)];
                }
                for row in 0..m {
                    q[(row, i)] = -q[(row, i)];
                }
            }
        }
        Ok((q, r))
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Result<Self> {
        let n = self.rows;
        if n != self.cols {
            return Err(Error::invalid("cholesky needs a square matrix"));
        }
        let mut l = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self[(i, j)];
                for p in 0..j {
                    s = s - l[(i, p)] * l[(j, p)];
                }
                if i == j {
                    if s <= T::zero() || !s.is_finite() {
                        return Err(Error::degenerate("matrix is not positive definite"));
                    }
                    l[(i, i)] = s.sqrt();
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(l)
    }

    /// Solves `self · x = b` for symmetric positive definite `self`.
    pub fn solve_spd(&self, b: &[T]) -> Result<Vec<T>> {
        if b.len() != self.rows {
            return Err(Error::invalid("right-hand side length mismatch"));
        }
        let l = self.cholesky()?;
        Ok(cholesky_solve(&l, b))
    }

    /// Eigenvalues of a symmetric matrix, descending.
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        self.symmetric_eigen().0
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues in descending order and the matching unit
    /// eigenvectors as columns.
    pub fn symmetric_eigen(&self) -> (Vec<T>, Self) {
        let n = self.rows;
        assert_eq!(n, self.cols, "eigen-decomposition needs a square matrix");
        let mut a = self.clone();
        let mut v = Self::identity(n);
        let two = T::lit(2.0);
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off = off + a[(i, j)] * a[(i, j)];
                }
            }
            let scale = a.frobenius_norm().powi(2) + T::min_positive_value();
            if off <= T::epsilon() * T::epsilon() * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (two * apq);
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
        order.sort_by(|&x, &y| {
            a[(y, y)]
                .partial_cmp(&a[(x, x)])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let vectors = Self::from_fn(n, n, |r, c| v[(r, order[c])]);
        (values, vectors)
    }

    /// Singular values in descending order (via the eigenvalues of `AᵀA`).
    pub fn singular_values(&self) -> Vec<T> {
        self.t_matmul(self)
            .symmetric_eigenvalues()
            .into_iter()
            .map(|e| e.max(T::zero()).sqrt())
            .collect()
    }
}

pub(crate) fn cholesky_solve<T: Scalar>(l: &Mat<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s = s - l[(i, p)] * y[p];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in (i + 1)..n {
            s = s - l[(p, i)] * x[p];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Mat<f64> {
        Mat::from_vec(
            4,
            3,
            vec![
                1.0, 2.0, 0.5, //
                -1.0, 0.3, 2.0, //
                0.7, -0.2, 1.1, //
                2.0, 1.0, -0.4,
            ],
        )
        .unwrap()
    }

    #[test]
    fn qr_reconstructs_with_positive_diagonal() {
        let a = sample();
        let (q, r) = a.thin_qr().unwrap();
        assert!(q.matmul(&r).sub(&a).frobenius_norm() < 1e-12);
        assert!(q.t_matmul(&q).sub(&Mat::identity(3)).frobenius_norm() < 1e-12);
        for i in 0..3 {
            assert!(r[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn qr_rejects_dependent_columns() {
        let a = Mat::from_vec(3, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        assert!(matches!(a.thin_qr(), Err(Error::Degenerate(_))));
        assert!(Mat::<f64>::zeros(3, 2).thin_qr().is_err());
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = sample();
        let g = a.t_matmul(&a).add(&Mat::identity(3));
        let x = vec![0.3, -1.2, 2.0];
        let b = g.matvec(&x);
        let solved = g.solve_spd(&b).unwrap();
        for (s, e) in solved.iter().zip(&x) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_eigenvalues_of_diagonalizable_matrix() {
        let m = Mat::from_vec(2, 2, vec![2.0f64, 1.0, 1.0, 2.0]).unwrap();
        let (e, v) = m.symmetric_eigen();
        assert!((e[0] - 3.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
        let top = v.column(0);
        assert!((top[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((top[0] - top[1]).abs() < 1e-12);
    }
}
