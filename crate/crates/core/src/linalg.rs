//! Small dense linear algebra: column-major matrices, Cholesky with a
//! diagonally pivoted LDLᵀ fallback, and a Jacobi symmetric eigensolver.
//!
//! The matrices handled here are restricted Hessians (|Ŝ| × |Ŝ|), full
//! Hessians for moderate D, and N × N Woodbury cores, so straightforward
//! unblocked kernels are sufficient.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, sqrt};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorise without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    sqrt(dot(x, x))
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| if abs(*v) > m { abs(*v) } else { m })
}

pub fn norm1(x: &[f64]) -> f64 {
    x.iter().map(|v| abs(*v)).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from column-major storage. Panics if the length is wrong.
    pub fn from_col_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "column-major buffer has the wrong length");
        Self { nrows, ncols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut m = Self::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), ncols, "ragged rows");
            for (j, v) in r.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nrows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.nrows + i] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.ncols).map(|j| self.get(i, j)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut out = vec![0.0; self.nrows];
        for (j, xj) in x.iter().enumerate() {
            if *xj != 0.0 {
                axpy(*xj, self.col(j), &mut out);
            }
        }
        out
    }

    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.nrows);
        (0..self.ncols).map(|j| dot(self.col(j), v)).collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut out = DenseMatrix::zeros(self.nrows, other.ncols);
        for j in 0..other.ncols {
            let col = self.mul_vec(other.col(j));
            out.col_mut(j).copy_from_slice(&col);
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.ncols, self.nrows);
        for j in 0..self.ncols {
            for i in 0..self.nrows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn max_abs(&self) -> f64 {
        norm_inf(&self.data)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| if abs(a - b) > m { abs(a - b) } else { m })
    }

    /// Copies the lower triangle onto the upper one.
    pub fn symmetrize_from_lower(&mut self) {
        let n = self.nrows;
        for j in 0..n {
            for i in (j + 1)..n {
                let v = self.get(i, j);
                self.set(j, i, v);
            }
        }
    }
}

/// Lower Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    /// Returns `Err(pivot)` with the offending pivot when `a` is not
    /// numerically positive definite. Only the lower triangle is read.
    pub fn factor(a: &DenseMatrix) -> Result<Self, f64> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let scale = (0..n).fold(0.0f64, |m, i| m.max(abs(a.get(i, i))));
        let floor = 1e-14 * scale.max(f64::MIN_POSITIVE);
        // right-looking, column oriented so every update is contiguous
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            l.col_mut(j)[j..].copy_from_slice(&a.col(j)[j..]);
        }
        for j in 0..n {
            let d = l.get(j, j);
            if !(d > floor) {
                return Err(d);
            }
            let djj = sqrt(d);
            {
                let col = l.col_mut(j);
                col[j] = djj;
                for v in &mut col[j + 1..] {
                    *v /= djj;
                }
            }
            for k in (j + 1)..n {
                let lkj = l.get(k, j);
                if lkj == 0.0 {
                    continue;
                }
                let (left, right) = l.data.split_at_mut(k * n);
                let colj = &left[j * n + k..j * n + n];
                let colk = &mut right[k..n];
                axpy(-lkj, colj, colk);
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for k in 0..n {
            let col = self.l.col(k);
            b[k] /= col[k];
            let bk = b[k];
            if bk != 0.0 {
                axpy(-bk, &col[k + 1..], &mut b[k + 1..]);
            }
        }
        for i in (0..n).rev() {
            let col = self.l.col(i);
            let s = b[i] - dot(&col[i + 1..], &b[i + 1..]);
            b[i] = s / col[i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Smallest diagonal entry of `L`, squared (the smallest pivot of `A`).
    pub fn smallest_pivot(&self) -> f64 {
        (0..self.dim()).map(|i| self.l.get(i, i) * self.l.get(i, i)).fold(f64::INFINITY, f64::min)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.l.matmul(&self.l.transpose())
    }
}

/// Symmetric LDLᵀ with diagonal (largest-remaining-pivot) pivoting:
/// `Pᵀ A P = L D Lᵀ`.
#[derive(Debug, Clone)]
pub struct PivotedLdl {
    perm: Vec<usize>,
    l: DenseMatrix,
    d: Vec<f64>,
}

impl PivotedLdl {
    /// Fails with the smallest pivot magnitude when the matrix is
    /// numerically singular relative to its largest diagonal entry.
    pub fn factor(a: &DenseMatrix, rel_tol: f64) -> Result<Self, f64> {
        let n = a.nrows();
        let mut w = a.clone();
        w.symmetrize_from_lower();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = (0..n).fold(0.0f64, |m, i| m.max(abs(w.get(i, i))));
        let mut l = DenseMatrix::identity(n);
        let mut d = vec![0.0; n];
        let mut smallest = f64::INFINITY;
        for k in 0..n {
            // pick the largest remaining diagonal
            let mut p = k;
            for i in k..n {
                if abs(w.get(i, i)) > abs(w.get(p, p)) {
                    p = i;
                }
            }
            if p != k {
                swap_sym(&mut w, k, p);
                perm.swap(k, p);
                for c in 0..k {
                    let t = l.get(k, c);
                    l.set(k, c, l.get(p, c));
                    l.set(p, c, t);
                }
            }
            let piv = w.get(k, k);
            smallest = smallest.min(abs(piv));
            if abs(piv) <= rel_tol * scale.max(f64::MIN_POSITIVE) {
                return Err(smallest.min(abs(piv)));
            }
            d[k] = piv;
            for i in (k + 1)..n {
                l.set(i, k, w.get(i, k) / piv);
            }
            for j in (k + 1)..n {
                let ljk = l.get(j, k);
                if ljk == 0.0 {
                    continue;
                }
                for i in j..n {
                    let v = w.get(i, j) - l.get(i, k) * piv * ljk;
                    w.set(i, j, v);
                    w.set(j, i, v);
                }
            }
        }
        Ok(Self { perm, l, d })
    }

    pub fn smallest_pivot(&self) -> f64 {
        self.d.iter().map(|v| abs(*v)).fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l.get(i, k) * y[k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l.get(k, i) * y[k];
            }
            y[i] = s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.d.len();
        let mut ld = self.l.clone();
        for j in 0..n {
            for i in 0..n {
                let v = ld.get(i, j) * self.d[j];
                ld.set(i, j, v);
            }
        }
        let pa = ld.matmul(&self.l.transpose());
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a.set(self.perm[i], self.perm[j], pa.get(i, j));
            }
        }
        a
    }
}

fn swap_sym(w: &mut DenseMatrix, a: usize, b: usize) {
    let n = w.nrows();
    for c in 0..n {
        let t = w.get(a, c);
        w.set(a, c, w.get(b, c));
        w.set(b, c, t);
    }
    for r in 0..n {
        let t = w.get(r, a);
        w.set(r, a, w.get(r, b));
        w.set(r, b, t);
    }
}

/// Symmetric positive (semi)definite factorization: Cholesky first, then the
/// pivoted LDLᵀ when Cholesky rejects a pivot.
#[derive(Debug, Clone)]
pub enum SpdFactor {
    Cholesky(Cholesky),
    Pivoted(PivotedLdl),
}

impl SpdFactor {
    /// `Err(pivot)` reports the smallest pivot seen when both routes fail.
    pub fn factor(a: &DenseMatrix) -> Result<Self, f64> {
        match Cholesky::factor(a) {
            Ok(c) => Ok(SpdFactor::Cholesky(c)),
            Err(_) => PivotedLdl::factor(a, 1e-13).map(SpdFactor::Pivoted),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(b),
            SpdFactor::Pivoted(p) => p.solve(b),
        }
    }

    pub fn smallest_pivot(&self) -> f64 {
        match self {
            SpdFactor::Cholesky(c) => c.smallest_pivot(),
            SpdFactor::Pivoted(p) => p.smallest_pivot(),
        }
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        match self {
            SpdFactor::Cholesky(c) => c.reconstruct(),
            SpdFactor::Pivoted(p) => p.reconstruct(),
        }
    }

    pub fn is_pivoted(&self) -> bool {
        matches!(self, SpdFactor::Pivoted(_))
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    symmetric_eigen(a).0
}

/// Ascending eigenvalues and the matching orthonormal eigenvectors (columns).
pub fn symmetric_eigen(a: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut w = a.clone();
    w.symmetrize_from_lower();
    let mut v = DenseMatrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for j in 0..n {
            for i in (j + 1)..n {
                off += w.get(i, j) * w.get(i, j);
            }
        }
        let diag: f64 = (0..n).map(|i| w.get(i, i) * w.get(i, i)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = w.get(p, p);
                let aqq = w.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let tan = sign / (abs(theta) + sqrt(theta * theta + 1.0));
                let c = 1.0 / sqrt(tan * tan + 1.0);
                let s = tan * c;
                for m in [&mut w, &mut v] {
                    for k in 0..n {
                        let akp = m.get(k, p);
                        let akq = m.get(k, q);
                        m.set(k, p, c * akp - s * akq);
                        m.set(k, q, s * akp + c * akq);
                    }
                }
                for k in 0..n {
                    let apk = w.get(p, k);
                    let aqk = w.get(q, k);
                    w.set(p, k, c * apk - s * aqk);
                    w.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w.get(i, i).total_cmp(&w.get(j, j)));
    let values = order.iter().map(|&i| w.get(i, i)).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.col_mut(k).copy_from_slice(v.col(i));
    }
    (values, vectors)
}

pub fn smallest_eigenvalue(a: &DenseMatrix) -> f64 {
    symmetric_eigenvalues(a).first().copied().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_example() -> DenseMatrix {
        DenseMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
    }

    #[test]
    fn cholesky_solves_and_reconstructs() {
        let a = spd_example();
        let c = Cholesky::factor(&a).unwrap();
        assert!(c.reconstruct().max_abs_diff(&a) < 1e-14);
        let x = c.solve(&[1.0, 2.0, 3.0]);
        let back = a.mul_vec(&x);
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-13);
        }
    }

    #[test]
    fn cholesky_rejects_semidefinite() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(Cholesky::factor(&a).is_err());
        assert!(SpdFactor::factor(&a).is_err());
    }

    #[test]
    fn pivoted_ldl_matches_cholesky() {
        let a = spd_example();
        let p = PivotedLdl::factor(&a, 1e-13).unwrap();
        assert!(p.reconstruct().max_abs_diff(&a) < 1e-14);
        let x1 = p.solve(&[1.0, -1.0, 0.5]);
        let x2 = Cholesky::factor(&a).unwrap().solve(&[1.0, -1.0, 0.5]);
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn jacobi_eigenvalues_of_diagonal_and_rotated() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        let d = DenseMatrix::from_rows(&[vec![5.0, 0.0], vec![0.0, -1.0]]);
        assert_eq!(symmetric_eigenvalues(&d), vec![-1.0, 5.0]);
    }

    #[test]
    fn eigenvectors_diagonalize() {
        let a = spd_example();
        let (vals, vecs) = symmetric_eigen(&a);
        for k in 0..3 {
            let av = a.mul_vec(vecs.col(k));
            for i in 0..3 {
                assert!((av[i] - vals[k] * vecs.get(i, k)).abs() < 1e-12);
            }
            assert!((norm2(vecs.col(k)) - 1.0).abs() < 1e-12);
        }
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
    }
}
