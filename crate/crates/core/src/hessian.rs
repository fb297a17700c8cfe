//! Solves with GLM Hessians of the form `H = diag(Λ) + Xᵀ diag(ω) X`.
//!
//! When `D ≤ N` the matrix is formed and factored directly. For wide
//! problems the coordinates are split by the size of `Λ_d`: a large-`Λ` block
//! `B` is inverted through the `N × N` Woodbury core
//! `M = I + Ω^{1/2} X_B Λ_B⁻¹ X_Bᵀ Ω^{1/2}`, and the small-`Λ` block `A`
//! (typically the support under a smoothed ℓ1 penalty) goes through the
//! Schur complement `Λ_A + X_Aᵀ Ω^{1/2} M⁻¹ Ω^{1/2} X_A`.

use alloc::vec;
use alloc::vec::Vec;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix, SpdFactor};
use crate::math::sqrt;

/// Relative size below which a diagonal entry of `Λ` joins block `A`.
const SPLIT_RATIO: f64 = 1e-3;
/// Dense factorizations are refused past this dimension.
pub const DENSE_MAX_D: usize = 6000;

#[derive(Debug, Clone)]
enum Kind {
    Dense(SpdFactor),
    Woodbury(Woodbury),
}

#[derive(Debug, Clone)]
struct Woodbury {
    a: Vec<usize>,
    b: Vec<usize>,
    /// `Λ_B`
    lam_b: Vec<f64>,
    /// `Ω^{1/2} X_B` (N × |B|)
    wx_b: DenseMatrix,
    /// `Ω^{1/2} X_A` (N × |A|)
    wx_a: DenseMatrix,
    core: SpdFactor,
    schur: Option<SpdFactor>,
}

#[derive(Debug, Clone)]
pub struct StructuredHessian {
    dim: usize,
    kind: Kind,
    lam: Vec<f64>,
    omega: Vec<f64>,
}

impl StructuredHessian {
    pub fn build(x: &Design, lam: &[f64], omega: &[f64]) -> Result<Self> {
        let (n, d) = (x.nrows(), x.ncols());
        if lam.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: lam.len() });
        }
        if omega.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: omega.len() });
        }
        let kind = if d <= n {
            Kind::Dense(Self::dense_factor(x, lam, omega)?)
        } else {
            let data_diag: Vec<f64> = (0..d).map(|j| x.col_weighted_sq(j, omega)).collect();
            let mean = data_diag.iter().sum::<f64>() / d as f64;
            let tau = SPLIT_RATIO * mean;
            let (a, b): (Vec<usize>, Vec<usize>) = (0..d).partition(|&j| !(lam[j] > tau));
            if a.len() > n {
                if d > DENSE_MAX_D {
                    return Err(Error::invalid("Hessian too large for a dense factorization"));
                }
                Kind::Dense(Self::dense_factor(x, lam, omega)?)
            } else {
                Kind::Woodbury(Woodbury::build(x, lam, omega, a, b)?)
            }
        };
        Ok(Self { dim: d, kind, lam: lam.to_vec(), omega: omega.to_vec() })
    }

    fn dense_factor(x: &Design, lam: &[f64], omega: &[f64]) -> Result<SpdFactor> {
        let mut h = x.weighted_gram(omega);
        for (j, l) in lam.iter().enumerate() {
            h.set(j, j, h.get(j, j) + l);
        }
        SpdFactor::factor(&h).map_err(|pivot| Error::SingularHessian { pivot })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_woodbury(&self) -> bool {
        matches!(self.kind, Kind::Woodbury(_))
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.dim);
        match &self.kind {
            Kind::Dense(f) => f.solve(rhs),
            Kind::Woodbury(w) => w.solve(rhs),
        }
    }

    /// Smallest pivot across the factorizations involved.
    pub fn smallest_pivot(&self) -> f64 {
        match &self.kind {
            Kind::Dense(f) => f.smallest_pivot(),
            Kind::Woodbury(w) => {
                let s = w.schur.as_ref().map_or(f64::INFINITY, |s| s.smallest_pivot());
                w.core.smallest_pivot().min(s)
            }
        }
    }

    /// `H v` from the stored diagonal, weights and `x`.
    pub fn apply(&self, x: &Design, v: &[f64]) -> Vec<f64> {
        let mut xv = x.mul_vec(v);
        xv.iter_mut().zip(&self.omega).for_each(|(a, w)| *a *= w);
        let mut out = x.tr_mul_vec(&xv);
        out.iter_mut().zip(self.lam.iter().zip(v)).for_each(|(o, (l, vi))| *o += l * vi);
        out
    }

    /// Dense reconstruction of the factored matrix, when it was formed.
    pub fn reconstruct(&self) -> Option<DenseMatrix> {
        match &self.kind {
            Kind::Dense(f) => Some(f.reconstruct()),
            Kind::Woodbury(_) => None,
        }
    }
}

impl Woodbury {
    fn build(x: &Design, lam: &[f64], omega: &[f64], a: Vec<usize>, b: Vec<usize>) -> Result<Self> {
        let n = x.nrows();
        let sw: Vec<f64> = omega.iter().map(|w| sqrt(w.max(0.0))).collect();
        let scale_rows = |m: &mut DenseMatrix| {
            for k in 0..m.ncols() {
                m.col_mut(k).iter_mut().zip(&sw).for_each(|(v, s)| *v *= s);
            }
        };
        let mut wx_b = x.columns(&b);
        scale_rows(&mut wx_b);
        let mut wx_a = x.columns(&a);
        scale_rows(&mut wx_a);
        let lam_b: Vec<f64> = b.iter().map(|&j| lam[j]).collect();

        // M = I + Σ_b (Ω^{1/2} x_b)(Ω^{1/2} x_b)ᵀ / Λ_b
        let mut scaled = wx_b.clone();
        for (k, l) in lam_b.iter().enumerate() {
            let s = 1.0 / sqrt(*l);
            scaled.col_mut(k).iter_mut().for_each(|v| *v *= s);
        }
        let mut m = scaled.transpose_gram();
        for i in 0..n {
            m.set(i, i, m.get(i, i) + 1.0);
        }
        let core = SpdFactor::factor(&m).map_err(|pivot| Error::SingularHessian { pivot })?;

        let schur = if a.is_empty() {
            None
        } else {
            // Λ_A + (Ω^{1/2}X_A)ᵀ M⁻¹ (Ω^{1/2}X_A)
            let mut s = DenseMatrix::zeros(a.len(), a.len());
            let solved: Vec<Vec<f64>> = (0..a.len()).map(|k| core.solve(wx_a.col(k))).collect();
            for j in 0..a.len() {
                for i in j..a.len() {
                    let v = dot(wx_a.col(i), &solved[j]);
                    s.set(i, j, v);
                    s.set(j, i, v);
                }
                s.set(j, j, s.get(j, j) + lam[a[j]]);
            }
            Some(SpdFactor::factor(&s).map_err(|pivot| Error::SingularHessian { pivot })?)
        };
        Ok(Self { a, b, lam_b, wx_b, wx_a, core, schur })
    }

    /// `H_BB⁻¹ r` for `r` indexed like `b`.
    fn solve_bb(&self, r: &[f64]) -> Vec<f64> {
        let t: Vec<f64> = r.iter().zip(&self.lam_b).map(|(v, l)| v / l).collect();
        let u = self.wx_b.mul_vec(&t);
        let z = self.core.solve(&u);
        let back = self.wx_b.tr_mul_vec(&z);
        t.iter().zip(back.iter().zip(&self.lam_b)).map(|(ti, (bi, l))| ti - bi / l).collect()
    }

    /// `H_AB v` for `v` indexed like `b`.
    fn h_ab(&self, v: &[f64]) -> Vec<f64> {
        let u = self.wx_b.mul_vec(v);
        self.wx_a.tr_mul_vec(&u)
    }

    fn h_ba(&self, v: &[f64]) -> Vec<f64> {
        let u = self.wx_a.mul_vec(v);
        self.wx_b.tr_mul_vec(&u)
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let rb: Vec<f64> = self.b.iter().map(|&j| rhs[j]).collect();
        let mut out = vec![0.0; rhs.len()];
        match &self.schur {
            None => {
                let xb = self.solve_bb(&rb);
                for (k, &j) in self.b.iter().enumerate() {
                    out[j] = xb[k];
                }
            }
            Some(schur) => {
                let y = self.solve_bb(&rb);
                let hy = self.h_ab(&y);
                let ra: Vec<f64> = self.a.iter().zip(&hy).map(|(&j, h)| rhs[j] - h).collect();
                let xa = schur.solve(&ra);
                let corr = self.h_ba(&xa);
                let rb2: Vec<f64> = rb.iter().zip(&corr).map(|(r, c)| r - c).collect();
                let xb = self.solve_bb(&rb2);
                for (k, &j) in self.a.iter().enumerate() {
                    out[j] = xa[k];
                }
                for (k, &j) in self.b.iter().enumerate() {
                    out[j] = xb[k];
                }
            }
        }
        out
    }
}

impl DenseMatrix {
    /// `A Aᵀ` for an `n × k` matrix `A` (the result is `n × n`).
    pub(crate) fn transpose_gram(&self) -> DenseMatrix {
        let n = self.nrows();
        let mut out = DenseMatrix::zeros(n, n);
        for k in 0..self.ncols() {
            let c = self.col(k);
            for j in 0..n {
                let cj = c[j];
                if cj == 0.0 {
                    continue;
                }
                let col = out.col_mut(j);
                for i in j..n {
                    col[i] += c[i] * cj;
                }
            }
        }
        out.symmetrize_from_lower();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_design;

    fn check(n: usize, d: usize, lam: &[f64], seed: u64) -> StructuredHessian {
        let x = gen_design(n, d, seed);
        let omega: Vec<f64> = (0..n).map(|i| 0.05 + 0.2 * ((i * 7 % 11) as f64 / 11.0)).collect();
        let h = StructuredHessian::build(&x, lam, &omega).unwrap();
        let b: Vec<f64> = (0..d).map(|j| ((j * 13 % 17) as f64 - 8.0) / 5.0).collect();
        let sol = h.solve(&b);
        let back = h.apply(&x, &sol);
        let err = back.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "residual {err}");
        h
    }

    #[test]
    fn dense_path() {
        let h = check(40, 10, &[0.3; 10], 1);
        assert!(!h.is_woodbury());
    }

    #[test]
    fn woodbury_uniform_diagonal() {
        let h = check(20, 60, &[0.5; 60], 2);
        assert!(h.is_woodbury());
    }

    #[test]
    fn woodbury_with_schur_block() {
        let mut lam = vec![4.0; 80];
        for l in lam.iter_mut().take(5) {
            *l = 1e-9;
        }
        lam[6] = 0.0;
        let h = check(25, 80, &lam, 3);
        assert!(h.is_woodbury());
    }

    #[test]
    fn dense_reconstruction_matches() {
        let x = gen_design(30, 6, 4);
        let omega = vec![0.1; 30];
        let lam = vec![0.2; 6];
        let h = StructuredHessian::build(&x, &lam, &omega).unwrap();
        let mut want = x.weighted_gram(&omega);
        for j in 0..6 {
            want.set(j, j, want.get(j, j) + 0.2);
        }
        assert!(h.reconstruct().unwrap().max_abs_diff(&want) <= 1e-10 * want.max_abs());
    }
}
