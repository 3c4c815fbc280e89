//! Dense row-major matrices and the factorizations the solvers need.
//!
//! Everything here is deliberately small: a row-major [`Matrix`], an LU
//! factorization with partial pivoting and a 1-norm condition estimate, and a
//! Householder QR used to draw Haar orthogonal matrices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "row-major matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T * y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in self.row(i).iter().enumerate() {
                if aik != 0.0 {
                    axpy(aik, other.row(k), orow);
                }
            }
        }
        out
    }

    /// Scales column `j` by `s[j]`, i.e. `self * diag(s)`.
    pub fn scale_cols(&mut self, s: &[f64]) {
        debug_assert_eq!(s.len(), self.cols);
        for i in 0..self.rows {
            for (v, &sj) in self.row_mut(i).iter_mut().zip(s) {
                *v *= sj;
            }
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v.abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(norm2_sq(a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm_1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// LU factorization `P K = L U` with partial (row) pivoting.
///
/// An exactly zero pivot marks the factorization singular; the solves are then
/// meaningless and [`Lu::rcond`] reports 0.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    /// `perm[i]` is the original row placed at position `i`.
    perm: Vec<usize>,
    singular: bool,
    norm1: f64,
}

impl Lu {
    pub fn factor(mut a: Matrix) -> Self {
        assert!(a.is_square(), "LU needs a square matrix");
        let n = a.rows;
        let norm1 = a.norm_1();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut singular = !a.is_finite();

        for k in 0..n {
            let mut p = k;
            let mut best = a.get(k, k).abs();
            for i in k + 1..n {
                let v = a.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                singular = true;
                continue;
            }
            if p != k {
                perm.swap(p, k);
                let (lo, hi) = a.data.split_at_mut(p * n);
                lo[k * n..(k + 1) * n].swap_with_slice(&mut hi[..n]);
            }
            let (top, bottom) = a.data.split_at_mut((k + 1) * n);
            let pivot_row = &top[k * n..];
            let pivot = pivot_row[k];
            for row in bottom.chunks_exact_mut(n) {
                let l = row[k] / pivot;
                row[k] = l;
                if l != 0.0 {
                    axpy(-l, &pivot_row[k + 1..], &mut row[k + 1..]);
                }
            }
        }

        Self {
            lu: a,
            perm,
            singular,
            norm1,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    #[inline]
    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Solves `K x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            x[i] -= dot(&row[..i], &x[..i]);
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s = dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `K^T a = c`.
    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(c.len(), n);
        // U^T z = c, column-oriented so the inner loop walks rows of U.
        let mut z = c.to_vec();
        for i in 0..n {
            let row = self.lu.row(i);
            z[i] /= row[i];
            let zi = z[i];
            if zi != 0.0 {
                axpy(-zi, &row[i + 1..], &mut z[i + 1..]);
            }
        }
        // L^T w = z
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let wi = z[i];
            if wi != 0.0 {
                axpy(-wi, &row[..i], &mut z[..i]);
            }
        }
        let mut out = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = z[i];
        }
        out
    }

    /// Reciprocal 1-norm condition estimate in `[0, 1]`.
    ///
    /// `||K^{-1}||_1` is estimated with Hager's method (Higham's refinement,
    /// the same scheme as LAPACK `xLACON`), so the result is an upper bound on
    /// the true reciprocal condition number up to the estimator's slack.
    pub fn rcond(&self) -> f64 {
        if self.singular {
            return 0.0;
        }
        let n = self.dim();
        if n == 0 || self.norm1 == 0.0 {
            return 0.0;
        }
        let inv_norm = self.inverse_norm1_estimate();
        if !inv_norm.is_finite() || inv_norm == 0.0 {
            return 0.0;
        }
        (1.0 / (self.norm1 * inv_norm)).clamp(0.0, 1.0)
    }

    fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.dim();
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for iter in 0..5 {
            let y = self.solve(&x);
            let new_est = norm_1(&y);
            if iter > 0 && new_est <= est {
                break;
            }
            est = new_est;
            let xi: Vec<f64> = y
                .iter()
                .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
                .collect();
            let z = self.solve_transpose(&xi);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .fold((0, -1.0), |(bj, bv), (j, v)| {
                    if v.abs() > bv {
                        (j, v.abs())
                    } else {
                        (bj, bv)
                    }
                });
            if iter > 0 && zmax <= dot(&z, &x) {
                break;
            }
            x.iter_mut().for_each(|v| *v = 0.0);
            x[j] = 1.0;
        }
        if n > 1 {
            // Higham's alternating test vector guards against the cases where
            // the gradient iteration stalls.
            let alt: Vec<f64> = (0..n)
                .map(|i| {
                    let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                    s * (1.0 + i as f64 / (n - 1) as f64)
                })
                .collect();
            let y = self.solve(&alt);
            let alt_est = 2.0 * norm_1(&y) / (3.0 * n as f64);
            est = est.max(alt_est);
        }
        est
    }

    /// Dense inverse, column by column.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        inv
    }
}

/// Householder QR of a square matrix, returning the orthogonal factor with
/// columns sign-normalized so that `R` has a non-negative diagonal.
///
/// Applied to a matrix of iid standard normals this yields an exactly
/// Haar-distributed orthogonal matrix.
pub fn qr_orthogonal_factor(mut a: Matrix) -> Matrix {
    assert!(a.is_square(), "QR expects a square matrix");
    let n = a.rows;
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut signs = vec![1.0; n];
    let mut w = vec![0.0; n];

    for j in 0..n {
        let mut v: Vec<f64> = (j..n).map(|i| a.get(i, j)).collect();
        let xnorm = norm2(&v);
        if xnorm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -xnorm } else { xnorm };
        // R_jj = alpha after reflection.
        signs[j] = if alpha < 0.0 { -1.0 } else { 1.0 };
        v[0] -= alpha;
        let vnorm = norm2(&v);
        if vnorm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        apply_reflector(&mut a, &v, j, j, &mut w);
        reflectors.push(v);
    }

    let mut q = Matrix::identity(n);
    for j in (0..n).rev() {
        let v = &reflectors[j];
        if !v.is_empty() {
            apply_reflector(&mut q, v, j, 0, &mut w);
        }
    }
    q.scale_cols(&signs);
    q
}

/// `M[r0.., c0..] -= 2 v (v^T M[r0.., c0..])`
fn apply_reflector(m: &mut Matrix, v: &[f64], r0: usize, c0: usize, w: &mut [f64]) {
    let cols = m.cols;
    let w = &mut w[..cols - c0];
    w.iter_mut().for_each(|x| *x = 0.0);
    for (k, &vk) in v.iter().enumerate() {
        axpy(vk, &m.row(r0 + k)[c0..], w);
    }
    for (k, &vk) in v.iter().enumerate() {
        axpy(-2.0 * vk, w, &mut m.row_mut(r0 + k)[c0..]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> Matrix {
        // Small LCG keeps these tests independent of the RNG stack.
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        Matrix::from_fn(n, n, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn lu_solves_and_transposed_solves() {
        let a = sample(12, 3);
        let lu = Lu::factor(a.clone());
        let b: Vec<f64> = (0..12).map(|i| i as f64 - 5.0).collect();
        let x = lu.solve(&b);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10);
        }
        let y = lu.solve_transpose(&b);
        let r = a.tr_mul_vec(&y);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn rcond_of_identity_is_one() {
        assert_eq!(Lu::factor(Matrix::identity(7)).rcond(), 1.0);
    }

    #[test]
    fn rcond_of_exact_singularity_is_zero() {
        let lu = Lu::factor(Matrix::zeros(1, 1));
        assert!(lu.is_singular());
        assert_eq!(lu.rcond(), 0.0);
        let rank1 = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(Lu::factor(rank1).rcond(), 0.0);
    }

    #[test]
    fn rcond_tracks_diagonal_condition() {
        let lu = Lu::factor(Matrix::from_diag(&[1.0, 1e-13]));
        assert!((lu.rcond() - 1e-13).abs() < 1e-20);
        let lu = Lu::factor(Matrix::from_diag(&[4.0, 0.5, 2.0]));
        assert!((lu.rcond() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn inverse_reconstructs_identity() {
        let a = sample(9, 11);
        let inv = Lu::factor(a.clone()).inverse();
        let p = a.matmul(&inv);
        for i in 0..9 {
            for j in 0..9 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p.get(i, j) - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn qr_factor_is_orthogonal_with_positive_r() {
        let a = sample(10, 5);
        let q = qr_orthogonal_factor(a.clone());
        let qtq = q.transpose().matmul(&q);
        for i in 0..10 {
            for j in 0..10 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qtq.get(i, j) - e).abs() < 1e-12);
            }
        }
        // R = Q^T A must be upper triangular with a non-negative diagonal.
        let r = q.transpose().matmul(&a);
        for i in 0..10 {
            assert!(r.get(i, i) > 0.0);
            for j in 0..i {
                assert!(r.get(i, j).abs() < 1e-12);
            }
        }
    }
}
