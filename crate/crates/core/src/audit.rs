//! Checkable quantities behind the support-stability guarantees: support
//! agreement across folds, incoherence, leave-one-out regression
//! coefficients `J_nd`, restricted eigenvalues, gradient bounds, beta-min
//! margins, the LSSC constant and the closed-form `λ` thresholds.
//!
//! Normalizations: gradients use `F^{\n} = (1/N) Σ_{m≠n} f_m`. Restricted
//! Hessian eigenvalues (`L_min`) are reported unnormalized,
//! `Σ_{m≠n} d2_m x_{mS} x_{mSᵀ}`, which is the scale at which `L_min ≈ N` for
//! linear regression and the scale the beta-min and `λ`-small bounds take.
//! Incoherence and `J_nd` are ratios and do not depend on the choice.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::approx::{ij_restricted, ns_restricted};
use crate::error::{Error, Result};
use crate::exact::{ExactLoo, LooRefitter, LooSet};
use crate::glm::{Dataset, FitResult, GlmFamily, Regularizer};
use crate::l1::{support_of, SolverConfig};
use crate::linalg::{dot, norm1, symmetric_eigen, DenseMatrix, SpdFactor};
use crate::math::{abs, ln, sqrt};

const DOWNDATE_FLOOR: f64 = 1e-12;

/// Weighted restricted Gram `Σ_m w_m x_{mS} x_{mS}ᵀ`.
fn gram_s(data: &Dataset, w: &[f64], s: &[usize]) -> DenseMatrix {
    let xs = data.x().columns(s);
    let mut g = DenseMatrix::zeros(s.len(), s.len());
    for b in 0..s.len() {
        for a in b..s.len() {
            let v: f64 = xs.col(a).iter().zip(xs.col(b)).zip(w).map(|((p, q), wi)| p * q * wi).sum();
            g.set(a, b, v);
            g.set(b, a, v);
        }
    }
    g
}

/// Columns `w ∘ x_j` for `j ∈ S`.
fn weighted_cols(data: &Dataset, w: &[f64], s: &[usize]) -> Vec<Vec<f64>> {
    let xs = data.x().columns(s);
    (0..s.len()).map(|a| xs.col(a).iter().zip(w).map(|(x, wi)| x * wi).collect()).collect()
}

fn curvature_weights(data: &Dataset, theta_star: &[f64]) -> Result<Vec<f64>> {
    data.check_theta(theta_star)?;
    let z = data.x().mul_vec(theta_star);
    Ok(data.derivatives(&z).1)
}

fn check_support(data: &Dataset, s: &[usize]) -> Result<()> {
    data.check_indices(s)?;
    if s.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("support indices must be strictly increasing"));
    }
    Ok(())
}

fn complement(d: usize, s: &[usize]) -> Vec<usize> {
    (0..d).filter(|j| s.binary_search(j).is_err()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition1 {
    pub holds: bool,
    pub full_support: Vec<usize>,
    /// Support of the exact fit for each fold that converged.
    pub supports_by_n: BTreeMap<usize, Vec<usize>>,
}

/// Compares supports of the full fit, every exact LOO fit and both
/// restricted approximations.
pub fn condition1_from(fit: &FitResult, exact: &ExactLoo, ij: &LooSet, ns: &LooSet, n: usize) -> Condition1 {
    let full = fit.support.clone();
    let supports_by_n: BTreeMap<usize, Vec<usize>> =
        exact.set.thetas.iter().map(|(k, t)| (*k, support_of(t))).collect();
    if n == 1 {
        return Condition1 { holds: true, full_support: full, supports_by_n };
    }
    let agree = |set: &LooSet| set.is_complete(n) && set.thetas.values().all(|t| support_of(t) == full);
    let holds = supports_by_n.len() == n && supports_by_n.values().all(|s| *s == full) && agree(ij) && agree(ns);
    Condition1 { holds, full_support: full, supports_by_n }
}

/// Fits the ℓ1 problem, runs exact LOO and the restricted approximations,
/// and checks that every support equals `Ŝ`. A single row holds trivially.
pub fn check_condition1(data: &Dataset, lambda: f64, config: &SolverConfig) -> Result<Condition1> {
    let reg = Regularizer::l1(lambda);
    let refitter = LooRefitter::new(data, &reg, config)?;
    let fit = refitter.full_fit().clone();
    if data.n() == 1 {
        let supports_by_n = BTreeMap::from([(0, fit.support.clone())]);
        return Ok(Condition1 { holds: true, full_support: fit.support, supports_by_n });
    }
    let exact = crate::exact::assemble_exact(&refitter, refitter.refit_all(&(0..data.n()).collect::<Vec<_>>()));
    let ij = ij_restricted(data, lambda, &fit)?;
    let ns = ns_restricted(data, lambda, &fit)?;
    Ok(condition1_from(&fit, &exact, &ij, &ns, data.n()))
}

/// `‖∇²F(θ*)_{Sᶜ,S} (∇²F(θ*)_{SS})⁻¹‖_∞`.
pub fn incoherence_norm(data: &Dataset, theta_star: &[f64], s: &[usize]) -> Result<f64> {
    check_support(data, s)?;
    let w = curvature_weights(data, theta_star)?;
    if s.is_empty() {
        return Ok(0.0);
    }
    let g = gram_s(data, &w, s);
    let f = SpdFactor::factor(&g).map_err(|pivot| Error::SingularRestrictedHessian { pivot })?;
    let wx = weighted_cols(data, &w, s);
    let mut worst = 0.0_f64;
    for d in complement(data.d(), s) {
        let c: Vec<f64> = wx.iter().map(|col| data.x().col_dot(d, col)).collect();
        worst = worst.max(norm1(&f.solve(&c)));
    }
    Ok(worst)
}

/// `J_nd = (X_{\n,S}ᵀ W X_{\n,S})⁻¹ X_{\n,S}ᵀ W X_{\n,d}` with
/// `W = diag(d2(x_mᵀθ*))`, and its ℓ1 norm.
pub fn jnd_loo(data: &Dataset, theta_star: &[f64], s: &[usize], n: usize, d: usize) -> Result<(Vec<f64>, f64)> {
    check_support(data, s)?;
    data.check_exclude(Some(n))?;
    if d >= data.d() || s.binary_search(&d).is_ok() {
        return Err(Error::invalid(format!("column {d} must lie outside the support")));
    }
    let mut w = curvature_weights(data, theta_star)?;
    w[n] = 0.0;
    if s.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let g = gram_s(data, &w, s);
    let f = SpdFactor::factor(&g).map_err(|pivot| Error::SingularRestrictedHessian { pivot })?;
    let c: Vec<f64> = weighted_cols(data, &w, s).iter().map(|col| data.x().col_dot(d, col)).collect();
    let j = f.solve(&c);
    let l1 = norm1(&j);
    Ok((j, l1))
}

/// `max_{n, d ∉ S} ‖J_nd‖₁`, one factorization plus a rank-one downdate per
/// row.
pub fn max_jnd_norm(data: &Dataset, theta_star: &[f64], s: &[usize]) -> Result<f64> {
    check_support(data, s)?;
    let w = curvature_weights(data, theta_star)?;
    let sc = complement(data.d(), s);
    if s.is_empty() || sc.is_empty() {
        return Ok(0.0);
    }
    let k = s.len();
    let g = gram_s(data, &w, s);
    let f = SpdFactor::factor(&g).map_err(|pivot| Error::SingularRestrictedHessian { pivot })?;
    // P_d = G⁻¹ c_d for every d ∉ S
    let wx = weighted_cols(data, &w, s);
    let p: Vec<Vec<f64>> = sc
        .iter()
        .map(|&d| f.solve(&wx.iter().map(|col| data.x().col_dot(d, col)).collect::<Vec<_>>()))
        .collect();
    let xs = data.x().columns(s);
    let mut worst = 0.0_f64;
    let mut jv = vec![0.0; k];
    for n in 0..data.n() {
        let wn = w[n];
        let u: Vec<f64> = (0..k).map(|a| xs.get(n, a)).collect();
        let q = f.solve(&u);
        let h = dot(&u, &q);
        let denom = 1.0 - wn * h;
        if !(denom > DOWNDATE_FLOOR) {
            return Err(Error::SingularRestrictedHessian { pivot: denom });
        }
        for (pd, &d) in p.iter().zip(&sc) {
            let xnd = data.x().get(n, d);
            // G⁻¹ c_{d,n} with c_{d,n} = c_d − w_n x_nd u
            let t = wn * xnd;
            let ut = dot(&u, pd) - t * h;
            let corr = wn * ut / denom;
            for a in 0..k {
                jv[a] = pd[a] - t * q[a] + corr * q[a];
            }
            worst = worst.max(norm1(&jv));
        }
    }
    Ok(worst)
}

/// `min_n λ_min(Σ_{m≠n} d2_m x_{mS} x_{mS}ᵀ)` and the lower bound
/// `λ_min(full) − max_n d2_n ‖x_{nS}‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinEig {
    pub value: f64,
    pub lower_bound: f64,
    pub full: f64,
}

pub fn min_eig_loo(data: &Dataset, theta_star: &[f64], s: &[usize]) -> Result<MinEig> {
    check_support(data, s)?;
    if s.is_empty() {
        return Err(Error::invalid("restricted eigenvalues need a nonempty support"));
    }
    let w = curvature_weights(data, theta_star)?;
    let k = s.len();
    let g = gram_s(data, &w, s);
    let (vals, vecs) = symmetric_eigen(&g);
    let xs = data.x().columns(s);
    let mut value = f64::INFINITY;
    let mut max_row = 0.0_f64;
    let mut z = vec![0.0; k];
    for n in 0..data.n() {
        let sw = sqrt(w[n].max(0.0));
        let u: Vec<f64> = (0..k).map(|a| sw * xs.get(n, a)).collect();
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = dot(vecs.col(i), &u);
        }
        max_row = max_row.max(dot(&u, &u));
        value = value.min(smallest_downdated(&vals, &z));
    }
    Ok(MinEig { value, lower_bound: vals[0] - max_row, full: vals[0] })
}

/// Smallest eigenvalue of `diag(vals) − z zᵀ` (ascending `vals`) from the
/// secular equation `1 = Σ z_i² / (vals_i − μ)`.
fn smallest_downdated(vals: &[f64], z: &[f64]) -> f64 {
    let zz = dot(z, z);
    if zz == 0.0 {
        return vals[0];
    }
    let secular = |mu: f64| 1.0 - vals.iter().zip(z).map(|(l, zi)| zi * zi / (l - mu)).sum::<f64>();
    let mut lo = vals[0] - zz;
    let mut hi = vals[0];
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if secular(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `max_n ‖∇F^{\n}(θ*)‖_∞` and whether it stays within `(γ/4)λ`.
pub fn bounded_gradient_stat(data: &Dataset, theta_star: &[f64], gamma: f64, lambda: f64) -> Result<(f64, bool)> {
    data.check_theta(theta_star)?;
    let inv_n = 1.0 / data.n() as f64;
    let z = data.x().mul_vec(theta_star);
    let (d1, _) = data.derivatives(&z);
    let g: Vec<f64> = data.x().tr_mul_vec(&d1).iter().map(|v| v * inv_n).collect();
    let mut worst = 0.0_f64;
    let mut row = vec![0.0; data.d()];
    for n in 0..data.n() {
        row.copy_from_slice(&g);
        data.x().row_axpy(n, -d1[n] * inv_n, &mut row);
        worst = row.iter().fold(worst, |m, v| m.max(abs(*v)));
    }
    Ok((worst, worst <= 0.25 * gamma * lambda))
}

/// LSSC constant: `¼ max_n ‖x_n‖_∞ · max_n ‖x_{nS}‖²` for logistic, `0` for
/// linear.
pub fn lssc_constant(data: &Dataset, s: &[usize]) -> Result<f64> {
    check_support(data, s)?;
    Ok(match data.family() {
        GlmFamily::Linear => 0.0,
        GlmFamily::Logistic => {
            let mut inf = 0.0_f64;
            let mut sq = 0.0_f64;
            for n in 0..data.n() {
                inf = inf.max(data.x().row_max_abs(n));
                let r = data.x().row_gather(n, s);
                sq = sq.max(dot(&r, &r));
            }
            0.25 * inf * sq
        }
    })
}

/// `λ < L_min² γ / (4 (γ + 4)² d_eff K)`; no constraint when `K = 0`.
pub fn lambda_small_ok(lssc_k: f64, l_min: f64, gamma: f64, deff: usize, lambda: f64) -> bool {
    if lssc_k == 0.0 {
        return true;
    }
    lambda < l_min * l_min * gamma / (4.0 * (gamma + 4.0) * (gamma + 4.0) * deff as f64 * lssc_k)
}

/// `min_{s∈S} |θ*_s| − √d_eff (γ + 4) λ / L_min`; `None` for an empty support.
pub fn beta_min_margin(theta_star: &[f64], s: &[usize], gamma: f64, l_min: f64, deff: usize, lambda: f64) -> Option<f64> {
    let min = s.iter().map(|&j| abs(theta_star[j])).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))?;
    Some(min - sqrt(deff as f64) * (gamma + 4.0) * lambda / l_min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdParams {
    pub family: GlmFamily,
    pub n: usize,
    pub d: usize,
    pub deff: usize,
    pub alpha: f64,
    pub c_x: f64,
    /// Noise sub-Gaussian parameter; linear only.
    pub c_eps: f64,
    /// Restricted eigenvalue floor; logistic only.
    pub l_min: f64,
    /// Value for every unspecified constant `C`.
    pub big_c: f64,
}

impl ThresholdParams {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid("n and d must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if !(self.c_x > 0.0 && self.big_c > 0.0) {
            return Err(Error::invalid("c_x and big_c must be positive"));
        }
        if self.family == GlmFamily::Linear && !(self.c_eps > 0.0) {
            return Err(Error::invalid("c_eps must be positive"));
        }
        Ok(())
    }
}

/// The `M_J` scalar for the given family.
pub fn m_j(p: &ThresholdParams) -> Result<f64> {
    p.validate()?;
    if p.deff == 0 {
        return Ok(0.0);
    }
    if p.d <= p.deff {
        return Err(Error::invalid("M_J needs d > deff"));
    }
    let (n, d, deff) = (p.n as f64, p.d as f64, p.deff as f64);
    let cx2 = p.c_x * p.c_x;
    let cx4 = cx2 * cx2;
    let denom = match p.family {
        GlmFamily::Linear => n - 3.0 * cx2 * sqrt(n) * (sqrt(deff) + 5.0),
        GlmFamily::Logistic => p.l_min - cx2 * sqrt(n) * (sqrt(deff) + 5.0),
    };
    if !(denom > 0.0) {
        return Err(Error::invalid(format!("M_J denominator {denom} is not positive")));
    }
    let first = p.big_c
        * deff
        * (sqrt(50.0 * cx2) + sqrt(2.0 * cx2 * ln(n * (d - deff))))
        * (sqrt(deff) + sqrt(50.0 * cx4) + sqrt(2.0 * cx4 * ln(n)))
        / denom;
    let second = p.big_c
        * deff
        * (deff + deff * cx2 * (ln(n) + 26.0))
        * (sqrt(n) + sqrt(50.0 * cx4) + sqrt(2.0 * cx4 * ln(d - deff)))
        * (sqrt(n * deff) + sqrt(50.0 * cx4))
        / (denom * denom);
    Ok(first + second)
}

/// Smallest `λ` the support-stability theorems allow, with `M_J`.
pub fn lambda_threshold(p: &ThresholdParams) -> Result<(f64, f64)> {
    let mj = m_j(p)?;
    if mj >= p.alpha {
        return Err(Error::AlphaExceeded { mj, alpha: p.alpha });
    }
    let (n, d) = (p.n as f64, p.d as f64);
    let cx2 = p.c_x * p.c_x;
    let bracket = match p.family {
        GlmFamily::Linear => {
            let ce2 = p.c_eps * p.c_eps;
            sqrt(cx2 * ce2 * ln(d) / n + 25.0 * cx2 * ce2 / n) + 4.0 * p.c_x * p.c_eps * (ln(n * d) + 26.0) / n
        }
        GlmFamily::Logistic => sqrt(cx2 * (25.0 + ln(d)) / n) + (sqrt(2.0 * cx2 * ln(n * d)) + sqrt(50.0 * cx2)) / n,
    };
    Ok((p.big_c / (p.alpha - mj) * bracket, mj))
}

/// Inputs for [`audit`]. `theta_star` is the ground truth for synthetic data,
/// or the full-data fit as a surrogate (flag `surrogate`).
#[derive(Debug, Clone)]
pub struct AuditInput<'a> {
    pub data: &'a Dataset,
    pub theta_star: Vec<f64>,
    pub s: Vec<usize>,
    pub lambda: f64,
    pub alpha: f64,
    pub c_x: f64,
    pub c_eps: f64,
    pub big_c: f64,
    pub surrogate: bool,
    /// Run exact LOO to check support agreement across folds.
    pub check_supports: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub surrogate_truth: bool,
    pub condition1_holds: Option<bool>,
    pub supports_by_n: BTreeMap<usize, Vec<usize>>,
    pub incoherence_norm: Option<f64>,
    pub max_jnd_norm: Option<f64>,
    /// `1 − max ‖J_nd‖₁`.
    pub gamma: Option<f64>,
    pub min_eig_loo: Option<f64>,
    pub min_eig_lower_bound: Option<f64>,
    /// Measured `L_min / N` (logistic); reported without a verdict.
    pub l_min_over_n: Option<f64>,
    pub max_grad_inf_loo: Option<f64>,
    pub bounded_gradient_ok: Option<bool>,
    pub beta_min_margin: Option<f64>,
    pub lssc_k: f64,
    pub lambda_small_ok: Option<bool>,
    pub lambda_threshold: Option<f64>,
    pub mj: Option<f64>,
    /// Why a quantity above is unavailable.
    pub notes: Vec<String>,
}

/// Every audit quantity on one dataset. Failures of individual pieces are
/// recorded in `notes` and leave the field empty.
pub fn audit(input: &AuditInput<'_>, config: &SolverConfig) -> Result<AuditReport> {
    let data = input.data;
    check_support(data, &input.s)?;
    data.check_theta(&input.theta_star)?;
    if !(input.alpha > 0.0 && input.alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    let s = &input.s;
    let deff = s.len();
    let mut notes = Vec::new();
    let mut keep = |label: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{label}: {e}"));
            None
        }
    };
    let incoherence = keep("incoherence_norm", incoherence_norm(data, &input.theta_star, s));
    let jnd = keep("max_jnd_norm", max_jnd_norm(data, &input.theta_star, s));
    let eig = match min_eig_loo(data, &input.theta_star, s) {
        Ok(e) => Some(e),
        Err(e) => {
            keep("min_eig_loo", Err(e));
            None
        }
    };
    let gamma = jnd.map(|j| 1.0 - j);
    let grad = gamma.map(|g| bounded_gradient_stat(data, &input.theta_star, g, input.lambda)).transpose()?;
    let lssc_k = lssc_constant(data, s)?;
    let l_min = eig.map(|e| e.value);
    let lambda_small = match (gamma, l_min) {
        (Some(g), Some(l)) => Some(lambda_small_ok(lssc_k, l, g, deff, input.lambda)),
        _ => None,
    };
    let beta = match (gamma, l_min) {
        (Some(g), Some(l)) => beta_min_margin(&input.theta_star, s, g, l, deff, input.lambda),
        _ => None,
    };
    let params = ThresholdParams {
        family: data.family(),
        n: data.n(),
        d: data.d(),
        deff,
        alpha: input.alpha,
        c_x: input.c_x,
        c_eps: input.c_eps,
        l_min: l_min.unwrap_or(f64::NAN),
        big_c: input.big_c,
    };
    let (threshold, mj) = match lambda_threshold(&params) {
        Ok((t, m)) => (Some(t), Some(m)),
        Err(Error::AlphaExceeded { mj, alpha }) => {
            notes.push(format!("lambda_threshold: M_J = {mj} is not below alpha = {alpha}"));
            (None, Some(mj))
        }
        Err(e) => {
            notes.push(format!("lambda_threshold: {e}"));
            (None, None)
        }
    };
    let (condition1, supports) = if input.check_supports {
        match check_condition1(data, input.lambda, config) {
            Ok(c) => (Some(c.holds), c.supports_by_n),
            Err(e) => {
                notes.push(format!("condition1: {e}"));
                (None, BTreeMap::new())
            }
        }
    } else {
        (None, BTreeMap::new())
    };
    let l_min_over_n = match data.family() {
        GlmFamily::Logistic => l_min.map(|l| l / data.n() as f64),
        GlmFamily::Linear => None,
    };
    Ok(AuditReport {
        surrogate_truth: input.surrogate,
        condition1_holds: condition1,
        supports_by_n: supports,
        incoherence_norm: incoherence,
        max_jnd_norm: jnd,
        gamma,
        min_eig_loo: l_min,
        min_eig_lower_bound: eig.map(|e| e.lower_bound),
        l_min_over_n,
        max_grad_inf_loo: grad.map(|g| g.0),
        bounded_gradient_ok: grad.map(|g| g.1),
        beta_min_margin: beta,
        lssc_k,
        lambda_small_ok: lambda_small,
        lambda_threshold: threshold,
        mj,
        notes,
    })
}
