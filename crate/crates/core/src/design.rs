//! Design matrices: dense column-major or compressed sparse column.
//!
//! Sparse designs keep a row-major (CSR) mirror so per-row gradients and
//! restricted-row gathers stay cheap; coordinate descent reads columns.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, DenseMatrix};

/// Above this fraction of nonzeros a sparse input is stored densely.
pub const DENSE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    // CSR mirror
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    row_values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= nrows {
                return Err(Error::IndexOutOfRange { index: r, len: nrows });
            }
            if c >= ncols {
                return Err(Error::IndexOutOfRange { index: c, len: ncols });
            }
            t.push((r, c, v));
        }
        t.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);

        let mut col_ptr = vec![0usize; ncols + 1];
        for e in &merged {
            col_ptr[e.1 + 1] += 1;
        }
        for j in 0..ncols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let row_idx: Vec<usize> = merged.iter().map(|e| e.0).collect();
        let values: Vec<f64> = merged.iter().map(|e| e.2).collect();

        let mut row_ptr = vec![0usize; nrows + 1];
        for e in &merged {
            row_ptr[e.0 + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut fill = row_ptr.clone();
        let mut col_idx = vec![0usize; merged.len()];
        let mut row_values = vec![0.0; merged.len()];
        // merged is column-sorted, so each row receives ascending columns
        for e in &merged {
            let slot = fill[e.0];
            col_idx[slot] = e.1;
            row_values[slot] = e.2;
            fill[e.0] += 1;
        }
        Ok(Self { nrows, ncols, col_ptr, row_idx, values, row_ptr, col_idx, row_values })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / ((self.nrows * self.ncols).max(1)) as f64
    }

    #[inline]
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.row_values[r])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            let (ri, v) = self.col(j);
            for (r, x) in ri.iter().zip(v) {
                m.set(*r, j, *x);
            }
        }
        m
    }
}

/// The N × D covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Dense(DenseMatrix),
    Sparse(CscMatrix),
}

impl From<DenseMatrix> for Design {
    fn from(m: DenseMatrix) -> Self {
        Design::Dense(m)
    }
}

impl Design {
    /// Stores a sparse matrix densely when more than a quarter of it is filled.
    pub fn from_sparse_auto(m: CscMatrix) -> Self {
        if m.density() > DENSE_THRESHOLD {
            Design::Dense(m.to_dense())
        } else {
            Design::Sparse(m)
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Design::Dense(DenseMatrix::from_rows(rows))
    }

    pub fn nrows(&self) -> usize {
        match self {
            Design::Dense(m) => m.nrows(),
            Design::Sparse(m) => m.nrows,
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Design::Dense(m) => m.ncols(),
            Design::Sparse(m) => m.ncols,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Design::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Design::Dense(m) => m.get(i, j),
            Design::Sparse(m) => {
                let (ri, v) = m.col(j);
                match ri.binary_search(&i) {
                    Ok(k) => v[k],
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// `X θ`, skipping zero coordinates of `θ`.
    pub fn mul_vec(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.ncols());
        match self {
            Design::Dense(m) => m.mul_vec(theta),
            Design::Sparse(m) => {
                let mut out = vec![0.0; m.nrows];
                for (j, t) in theta.iter().enumerate() {
                    if *t != 0.0 {
                        let (ri, v) = m.col(j);
                        for (r, x) in ri.iter().zip(v) {
                            out[*r] += t * x;
                        }
                    }
                }
                out
            }
        }
    }

    /// `Xᵀ v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.nrows());
        (0..self.ncols()).map(|j| self.col_dot(j, v)).collect()
    }

    #[inline]
    pub fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        match self {
            Design::Dense(m) => dot(m.col(j), v),
            Design::Sparse(m) => {
                let (ri, x) = m.col(j);
                ri.iter().zip(x).map(|(r, a)| a * v[*r]).sum()
            }
        }
    }

    /// `Σ_i w_i x_ij v_i`.
    #[inline]
    pub fn col_dot_weighted(&self, j: usize, w: &[f64], v: &[f64]) -> f64 {
        match self {
            Design::Dense(m) => {
                let c = m.col(j);
                let mut s = 0.0;
                for i in 0..c.len() {
                    s += w[i] * c[i] * v[i];
                }
                s
            }
            Design::Sparse(m) => {
                let (ri, x) = m.col(j);
                ri.iter().zip(x).map(|(r, a)| w[*r] * a * v[*r]).sum()
            }
        }
    }

    /// `Σ_i w_i x_ij²`.
    pub fn col_weighted_sq(&self, j: usize, w: &[f64]) -> f64 {
        match self {
            Design::Dense(m) => m.col(j).iter().zip(w).map(|(x, wi)| wi * x * x).sum(),
            Design::Sparse(m) => {
                let (ri, x) = m.col(j);
                ri.iter().zip(x).map(|(r, a)| w[*r] * a * a).sum()
            }
        }
    }

    /// `out += alpha · x_j`.
    #[inline]
    pub fn col_axpy(&self, j: usize, alpha: f64, out: &mut [f64]) {
        match self {
            Design::Dense(m) => axpy(alpha, m.col(j), out),
            Design::Sparse(m) => {
                let (ri, x) = m.col(j);
                for (r, a) in ri.iter().zip(x) {
                    out[*r] += alpha * a;
                }
            }
        }
    }

    pub fn row_dot(&self, i: usize, theta: &[f64]) -> f64 {
        match self {
            Design::Dense(m) => {
                let mut s = 0.0;
                for (j, t) in theta.iter().enumerate() {
                    if *t != 0.0 {
                        s += m.get(i, j) * t;
                    }
                }
                s
            }
            Design::Sparse(m) => {
                let (ci, x) = m.row(i);
                ci.iter().zip(x).map(|(c, a)| a * theta[*c]).sum()
            }
        }
    }

    /// `out += alpha · x_i` (row `i` as a length-D vector).
    pub fn row_axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        match self {
            Design::Dense(m) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += alpha * m.get(i, j);
                }
            }
            Design::Sparse(m) => {
                let (ci, x) = m.row(i);
                for (c, a) in ci.iter().zip(x) {
                    out[*c] += alpha * a;
                }
            }
        }
    }

    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols()];
        self.row_axpy(i, 1.0, &mut out);
        out
    }

    /// Entries of row `i` at the given columns.
    pub fn row_gather(&self, i: usize, cols: &[usize]) -> Vec<f64> {
        match self {
            Design::Dense(m) => cols.iter().map(|&c| m.get(i, c)).collect(),
            Design::Sparse(_) => cols.iter().map(|&c| self.get(i, c)).collect(),
        }
    }

    pub fn row_sq_norm(&self, i: usize) -> f64 {
        match self {
            Design::Dense(m) => (0..m.ncols()).map(|j| m.get(i, j) * m.get(i, j)).sum(),
            Design::Sparse(m) => m.row(i).1.iter().map(|x| x * x).sum(),
        }
    }

    pub fn row_max_abs(&self, i: usize) -> f64 {
        match self {
            Design::Dense(m) => (0..m.ncols()).fold(0.0, |a: f64, j| a.max(crate::math::abs(m.get(i, j)))),
            Design::Sparse(m) => m.row(i).1.iter().fold(0.0, |a: f64, x| a.max(crate::math::abs(*x))),
        }
    }

    /// Dense copy of the columns in `cols` (N × |cols|).
    pub fn columns(&self, cols: &[usize]) -> DenseMatrix {
        let n = self.nrows();
        let mut out = DenseMatrix::zeros(n, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            match self {
                Design::Dense(m) => out.col_mut(k).copy_from_slice(m.col(j)),
                Design::Sparse(_) => self.col_axpy(j, 1.0, out.col_mut(k)),
            }
        }
        out
    }

    /// Dense copy restricted to `cols`, kept as a [`Design`].
    pub fn select_columns(&self, cols: &[usize]) -> Design {
        Design::Dense(self.columns(cols))
    }

    /// `Xᵀ diag(w) X` (D × D, symmetric).
    pub fn weighted_gram(&self, w: &[f64]) -> DenseMatrix {
        let d = self.ncols();
        let n = self.nrows();
        let mut g = DenseMatrix::zeros(d, d);
        match self {
            Design::Dense(m) => {
                let mut wx = vec![0.0; n];
                for j in 0..d {
                    let cj = m.col(j);
                    for i in 0..n {
                        wx[i] = w[i] * cj[i];
                    }
                    for k in j..d {
                        let v = dot(&wx, m.col(k));
                        g.set(k, j, v);
                    }
                }
            }
            Design::Sparse(m) => {
                for i in 0..n {
                    let (ci, x) = m.row(i);
                    for (a, xa) in ci.iter().zip(x) {
                        for (b, xb) in ci.iter().zip(x) {
                            if b >= a {
                                let v = g.get(*b, *a) + w[i] * xa * xb;
                                g.set(*b, *a, v);
                            }
                        }
                    }
                }
            }
        }
        g.symmetrize_from_lower();
        g
    }

    /// Fraction of stored nonzeros (1.0 for dense storage).
    pub fn density(&self) -> f64 {
        match self {
            Design::Dense(_) => 1.0,
            Design::Sparse(m) => m.density(),
        }
    }
}
