//! Newton-step (NS) and infinitesimal-jackknife (IJ) approximations to the
//! leave-one-out parameters.
//!
//! One convention is used throughout: `H = (1/N) Σ_m d2_m x_m x_mᵀ + λ∇²R`
//! and every update carries an explicit `1/N`:
//!
//! * IJ: `θ̂ + (1/N) H⁻¹ ∇f_n(θ̂)`
//! * NS: `θ̂ + (1/N) (H − (1/N) ∇²f_n(θ̂))⁻¹ ∇f_n(θ̂)`
//!
//! For GLMs `∇f_n = d1_n x_n` and `∇²f_n = d2_n x_n x_nᵀ`, so with
//! `u = H⁻¹ x_n` the NS step is `(d1_n / N) u / (1 − (d2_n / N) x_nᵀ u)`.
//! The restricted variants do the same on the support Ŝ with
//! `H_ŜŜ = (1/N) X_Ŝᵀ diag(d2) X_Ŝ` (the ℓ1 term has no curvature there) and
//! leave every other coordinate at its value in θ̂, which is zero.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exact::{LooMethod, LooSet};
use crate::glm::{restricted_hessian, Dataset, FitResult, Penalty, Regularizer};
use crate::hessian::StructuredHessian;
use crate::linalg::{dot, DenseMatrix, SpdFactor};
use crate::math::abs;
use crate::smooth::hessian_at;

/// Sherman–Morrison denominators at or below this raise
/// [`Error::SingularDowndate`].
pub const DOWNDATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Solver {
    Full(StructuredHessian),
    Restricted(SpdFactor),
}

/// A factored Hessian reused for every left-out row.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    solver: Solver,
    /// Coordinates the factor acts on (`0..D` for the full Hessian).
    coords: Vec<usize>,
}

impl HessianFactor {
    /// `H(θ) = ∇²F(θ) + λ∇²R(θ)`; the regularizer must be twice differentiable.
    pub fn full(data: &Dataset, reg: &Regularizer, theta: &[f64]) -> Result<Self> {
        if !reg.is_smooth() {
            return Err(Error::NonDifferentiableRegularizer);
        }
        data.check_theta(theta)?;
        let z = data.x().mul_vec(theta);
        let h = hessian_at(data, reg, theta, &z, None)?;
        Ok(Self { solver: Solver::Full(h), coords: (0..data.d()).collect() })
    }

    /// `H_ŜŜ` at `θ` over the sorted index set `s`.
    pub fn restricted(data: &Dataset, theta: &[f64], s: &[usize]) -> Result<Self> {
        let h = restricted_hessian(data, theta, s, None)?;
        let f = SpdFactor::factor(&h).map_err(|pivot| Error::SingularRestrictedHessian { pivot })?;
        Ok(Self { solver: Solver::Restricted(f), coords: s.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.solver {
            Solver::Full(h) => h.solve(b),
            Solver::Restricted(f) => f.solve(b),
        }
    }

    pub fn smallest_pivot(&self) -> f64 {
        match &self.solver {
            Solver::Full(h) => h.smallest_pivot(),
            Solver::Restricted(f) => f.smallest_pivot(),
        }
    }

    /// `max |LLᵀ − A| / max |A|` against a reference matrix, when the factor
    /// holds an explicit matrix.
    pub fn reconstruction_error(&self, reference: &DenseMatrix) -> Option<f64> {
        let rebuilt = match &self.solver {
            Solver::Full(h) => h.reconstruct()?,
            Solver::Restricted(f) => f.reconstruct(),
        };
        Some(rebuilt.max_abs_diff(reference) / reference.max_abs().max(f64::MIN_POSITIVE))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ij,
    Ns,
}

fn sweep(data: &Dataset, fit: &FitResult, factor: &HessianFactor, kind: Kind, method: LooMethod) -> Result<LooSet> {
    data.check_theta(&fit.theta)?;
    let inv_n = 1.0 / data.n() as f64;
    let coords = factor.coords();
    let full = coords.len() == data.d();
    let mut set = LooSet::new(method);
    for n in 0..data.n() {
        let z = data.x().row_dot(n, &fit.theta);
        let (d1, d2) = data.d1_d2_at(n, z);
        let xn = if full { data.x().row_dense(n) } else { data.x().row_gather(n, coords) };
        let u = factor.solve(&xn);
        let mut scale = d1 * inv_n;
        if kind == Kind::Ns {
            let denom = 1.0 - d2 * inv_n * dot(&xn, &u);
            if !(denom > DOWNDATE_FLOOR) {
                return Err(Error::SingularDowndate { row: n, denominator: denom });
            }
            scale /= denom;
        }
        let mut theta = fit.theta.clone();
        for (k, &j) in coords.iter().enumerate() {
            theta[j] += scale * u[k];
        }
        set.thetas.insert(n, theta);
    }
    Ok(set)
}

fn full_method(reg: &Regularizer, kind: Kind) -> LooMethod {
    match (reg.kind, kind) {
        (Penalty::SmoothedL1 { .. }, Kind::Ij) => LooMethod::SmoothedIj,
        (Penalty::SmoothedL1 { .. }, Kind::Ns) => LooMethod::SmoothedNs,
        (_, Kind::Ij) => LooMethod::IjFull,
        (_, Kind::Ns) => LooMethod::NsFull,
    }
}

/// IJ with the full Hessian. Tagged `smoothed_ij` under a smoothed ℓ1 penalty.
pub fn ij_full(data: &Dataset, reg: &Regularizer, fit: &FitResult) -> Result<LooSet> {
    let factor = HessianFactor::full(data, reg, &fit.theta)?;
    sweep(data, fit, &factor, Kind::Ij, full_method(reg, Kind::Ij))
}

/// NS with the full Hessian, one factorization plus a Sherman–Morrison
/// correction per row. Tagged `smoothed_ns` under a smoothed ℓ1 penalty.
pub fn ns_full(data: &Dataset, reg: &Regularizer, fit: &FitResult) -> Result<LooSet> {
    let factor = HessianFactor::full(data, reg, &fit.theta)?;
    sweep(data, fit, &factor, Kind::Ns, full_method(reg, Kind::Ns))
}

fn restricted(data: &Dataset, lambda: f64, fit: &FitResult, kind: Kind) -> Result<LooSet> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    data.check_theta(&fit.theta)?;
    let method = if kind == Kind::Ij { LooMethod::IjRestricted } else { LooMethod::NsRestricted };
    let s = &fit.support;
    if kind == Kind::Ns && s.len() >= data.n() {
        return Err(Error::SupportTooLarge { support: s.len(), rows: data.n() });
    }
    if s.is_empty() {
        let mut set = LooSet::new(method);
        for n in 0..data.n() {
            set.thetas.insert(n, fit.theta.clone());
        }
        return Ok(set);
    }
    let factor = HessianFactor::restricted(data, &fit.theta, s)?;
    sweep(data, fit, &factor, kind, method)
}

/// IJ on the support of an ℓ1 fit. `lambda` only enters through `fit`; the
/// ℓ1 term has no curvature on Ŝ.
pub fn ij_restricted(data: &Dataset, lambda: f64, fit: &FitResult) -> Result<LooSet> {
    restricted(data, lambda, fit, Kind::Ij)
}

/// NS on the support of an ℓ1 fit. Requires `|Ŝ| < N`.
pub fn ns_restricted(data: &Dataset, lambda: f64, fit: &FitResult) -> Result<LooSet> {
    restricted(data, lambda, fit, Kind::Ns)
}

/// `(1/N) Σ_n f(x_nᵀ θ̃^{\n}, y_n)`.
pub fn aloo_estimate(data: &Dataset, loos: &LooSet) -> Result<f64> {
    if !loos.is_complete(data.n()) {
        return Err(Error::IncompleteLooSet { present: loos.len(), rows: data.n() });
    }
    let mut s = 0.0;
    for (n, theta) in &loos.thetas {
        data.check_theta(theta)?;
        s += data.loss_at(*n, data.x().row_dot(*n, theta));
    }
    Ok(s / data.n() as f64)
}

/// `|aloo − loo| / loo`.
pub fn percent_error(aloo: f64, loo: f64) -> Result<f64> {
    if loo == 0.0 {
        return Err(Error::DivisionByZero);
    }
    Ok(abs(aloo - loo) / loo)
}

/// Per-row NS by forming and solving each downdated Hessian directly. Used as
/// an independent check on the Sherman–Morrison path; `O(N D³)`.
pub fn ns_full_direct(data: &Dataset, reg: &Regularizer, fit: &FitResult) -> Result<LooSet> {
    if !reg.is_smooth() {
        return Err(Error::NonDifferentiableRegularizer);
    }
    let d = data.d();
    let inv_n = 1.0 / data.n() as f64;
    let z = data.x().mul_vec(&fit.theta);
    let (_, d2) = data.derivatives(&z);
    let w: Vec<f64> = d2.iter().map(|v| v * inv_n).collect();
    let mut h = data.x().weighted_gram(&w);
    for j in 0..d {
        h.set(j, j, h.get(j, j) + reg.lambda * reg.curv_coord(fit.theta[j]));
    }
    let mut set = LooSet::new(full_method(reg, Kind::Ns));
    for n in 0..data.n() {
        let (d1, d2n) = data.d1_d2_at(n, z[n]);
        let xn = data.x().row_dense(n);
        let mut hn = h.clone();
        for b in 0..d {
            for a in 0..d {
                hn.set(a, b, hn.get(a, b) - d2n * inv_n * xn[a] * xn[b]);
            }
        }
        let f = SpdFactor::factor(&hn).map_err(|pivot| Error::SingularHessian { pivot })?;
        let g: Vec<f64> = xn.iter().map(|v| d1 * v).collect();
        let step = f.solve(&g);
        let theta: Vec<f64> = fit.theta.iter().zip(&step).map(|(t, s)| t + inv_n * s).collect();
        set.thetas.insert(n, theta);
    }
    Ok(set)
}
