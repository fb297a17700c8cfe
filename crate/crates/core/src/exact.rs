//! Exact leave-one-out refits and subsampled CV.
//!
//! Every fold is warm-started at the full-data fit θ̂, never at a neighbouring
//! fold, so fold results do not depend on evaluation order. [`LooRefitter`]
//! holds the per-dataset state (θ̂, Gram matrix, Hessian factor) and is
//! `Sync`, so callers can spread folds over threads.
//!
//! Smooth folds are solved by a chord iteration: Newton steps that all reuse
//! `H(θ̂)` downdated by row `n` through Sherman–Morrison. The first chord step
//! is the NS approximation itself; the iteration then runs to the gradient
//! tolerance. A fold that stops contracting falls back to a full damped
//! Newton solve.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::glm::{Dataset, FitResult, Penalty, Regularizer};
use crate::hessian::StructuredHessian;
use crate::l1::{fit_l1_excluding, support_of, L1Context, SolverConfig};
use crate::linalg::{dot, norm2, norm_inf};
use crate::math::sqrt;
use crate::smooth::{fit_smooth, fit_smooth_excluding, gradient_at, hessian_at};

const MAX_CHORD_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LooMethod {
    Exact,
    NsFull,
    IjFull,
    NsRestricted,
    IjRestricted,
    IjLissa,
    SmoothedNs,
    SmoothedIj,
}

impl LooMethod {
    pub const ALL: [LooMethod; 8] = [
        LooMethod::Exact,
        LooMethod::NsFull,
        LooMethod::IjFull,
        LooMethod::NsRestricted,
        LooMethod::IjRestricted,
        LooMethod::IjLissa,
        LooMethod::SmoothedNs,
        LooMethod::SmoothedIj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LooMethod::Exact => "exact",
            LooMethod::NsFull => "ns_full",
            LooMethod::IjFull => "ij_full",
            LooMethod::NsRestricted => "ns_restricted",
            LooMethod::IjRestricted => "ij_restricted",
            LooMethod::IjLissa => "ij_lissa",
            LooMethod::SmoothedNs => "smoothed_ns",
            LooMethod::SmoothedIj => "smoothed_ij",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.name() == s)
    }

    pub fn is_restricted(self) -> bool {
        matches!(self, LooMethod::NsRestricted | LooMethod::IjRestricted)
    }
}

/// Per-fold parameter vectors, keyed by the left-out row.
#[derive(Debug, Clone, PartialEq)]
pub struct LooSet {
    pub method: LooMethod,
    pub thetas: BTreeMap<usize, Vec<f64>>,
    /// Seconds; filled in by callers that can read a clock.
    pub wall_time: Option<f64>,
}

impl LooSet {
    pub fn new(method: LooMethod) -> Self {
        Self { method, thetas: BTreeMap::new(), wall_time: None }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn get(&self, n: usize) -> Option<&[f64]> {
        self.thetas.get(&n).map(|v| v.as_slice())
    }

    /// True when rows `0..n` are all present.
    pub fn is_complete(&self, n: usize) -> bool {
        self.thetas.len() == n && self.thetas.keys().enumerate().all(|(i, k)| i == *k)
    }

    /// `‖θ_self^{\n} − θ_other^{\n}‖₂` for every row present in both.
    pub fn distances(&self, other: &LooSet) -> BTreeMap<usize, f64> {
        self.thetas
            .iter()
            .filter_map(|(n, a)| {
                other.thetas.get(n).map(|b| {
                    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    (*n, sqrt(s))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactLoo {
    pub set: LooSet,
    /// Mean left-out loss; `None` unless every fold converged.
    pub loo: Option<f64>,
    /// Left-out losses in row order (rows whose refit errored are absent).
    pub losses: BTreeMap<usize, f64>,
    pub failed_folds: Vec<usize>,
    pub full_fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampledCv {
    /// Mean left-out loss over the sampled folds; `None` if any failed.
    pub estimate: Option<f64>,
    /// Sample standard deviation over `√k`; `None` when `k = 1`.
    pub stderr: Option<f64>,
    pub folds: Vec<usize>,
    pub losses: Vec<f64>,
    pub failed_folds: Vec<usize>,
}

enum Engine<'a> {
    L1(L1Context<'a>),
    Smooth(Option<Chord>),
}

struct Chord {
    factor: StructuredHessian,
    z_hat: Vec<f64>,
    d2_hat: Vec<f64>,
}

/// Full-data fit plus the state needed to refit any fold cheaply.
pub struct LooRefitter<'a> {
    data: &'a Dataset,
    reg: Regularizer,
    config: SolverConfig,
    full: FitResult,
    engine: Engine<'a>,
}

impl<'a> LooRefitter<'a> {
    pub fn new(data: &'a Dataset, reg: &Regularizer, config: &SolverConfig) -> Result<Self> {
        reg.validate()?;
        let full = match reg.kind {
            Penalty::L1 => crate::l1::fit_l1(data, reg.lambda, config)?,
            _ => fit_smooth(data, reg, config)?,
        };
        Self::with_fit(data, reg, config, full)
    }

    /// Uses a full-data fit computed elsewhere.
    pub fn with_fit(data: &'a Dataset, reg: &Regularizer, config: &SolverConfig, full: FitResult) -> Result<Self> {
        data.check_theta(&full.theta)?;
        let config = SolverConfig { warm_start: None, ..config.clone() };
        let engine = match reg.kind {
            Penalty::L1 => Engine::L1(L1Context::new(data, reg.lambda, &config, true)?),
            _ => {
                let z_hat = data.x().mul_vec(&full.theta);
                let chord = hessian_at(data, reg, &full.theta, &z_hat, None).ok().map(|factor| {
                    let d2_hat = z_hat.iter().enumerate().map(|(i, &z)| data.d1_d2_at(i, z).1).collect();
                    Chord { factor, z_hat, d2_hat }
                });
                Engine::Smooth(chord)
            }
        };
        Ok(Self { data, reg: *reg, config, full, engine })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn full_fit(&self) -> &FitResult {
        &self.full
    }

    /// Minimizer of the objective with row `n` removed, warm-started at θ̂.
    pub fn refit(&self, n: usize) -> Result<FitResult> {
        self.data.check_exclude(Some(n))?;
        if self.data.n() == 1 {
            return Ok(zero_fit(self.data.d(), &self.reg));
        }
        match &self.engine {
            Engine::L1(ctx) => ctx.solve(&self.config, Some(&self.full.theta), Some(n)),
            Engine::Smooth(chord) => {
                if let Some(ch) = chord {
                    if let Some(fit) = self.chord(ch, n) {
                        return Ok(fit);
                    }
                }
                let cfg = SolverConfig { warm_start: Some(self.full.theta.clone()), ..self.config.clone() };
                fit_smooth_excluding(self.data, &self.reg, &cfg, Some(n))
            }
        }
    }

    fn chord(&self, ch: &Chord, n: usize) -> Option<FitResult> {
        let data = self.data;
        let inv_n = 1.0 / data.n() as f64;
        let xn = data.x().row_dense(n);
        let u = ch.factor.solve(&xn);
        let a = ch.d2_hat[n] * inv_n;
        let denom = 1.0 - a * dot(&xn, &u);
        if !(denom > 1e-12) {
            return None;
        }
        let mut theta = self.full.theta.clone();
        let mut z = ch.z_hat.clone();
        let mut prev = f64::INFINITY;
        let mut best: Option<(Vec<f64>, Vec<f64>, f64, usize)> = None;
        for step in 0..=MAX_CHORD_STEPS {
            let g = gradient_at(data, &self.reg, &theta, &z, Some(n));
            let gnorm = norm2(&g);
            if !(gnorm < prev) {
                break;
            }
            prev = gnorm;
            // H_n⁻¹ g = H⁻¹ g + a (x_nᵀ H⁻¹ g) / (1 − a h) · H⁻¹ x_n
            let mut s = ch.factor.solve(&g);
            let coef = a * dot(&xn, &s) / denom;
            s.iter_mut().zip(&u).for_each(|(si, ui)| *si += coef * ui);
            let done = gnorm <= self.config.kkt_tol && norm_inf(&s) <= self.config.tol;
            best = Some((theta.clone(), z.clone(), gnorm, step));
            if done {
                break;
            }
            theta.iter_mut().zip(&s).for_each(|(t, si)| *t -= si);
            let dz = data.x().mul_vec(&s);
            z.iter_mut().zip(&dz).for_each(|(zi, d)| *zi -= d);
        }
        let (theta, z, gnorm, steps) = best?;
        if gnorm > self.config.kkt_tol {
            return None;
        }
        let f = data.data_loss(&z, Some(n)) + self.reg.lambda * self.reg.penalty(&theta);
        Some(FitResult {
            support: support_of(&theta),
            theta,
            objective_value: f,
            iterations: steps,
            converged: true,
            kkt_violation: gnorm,
            gradient_fallbacks: 0,
        })
    }

    /// `f(x_nᵀθ, y_n)`.
    pub fn left_out_loss(&self, n: usize, theta: &[f64]) -> f64 {
        self.data.loss_at(n, self.data.x().row_dot(n, theta))
    }

    /// Refit every listed fold in order; returns per-fold outcomes.
    pub fn refit_all(&self, folds: &[usize]) -> Vec<(usize, Result<FitResult>)> {
        folds.iter().map(|&n| (n, self.refit(n))).collect()
    }
}

fn zero_fit(d: usize, reg: &Regularizer) -> FitResult {
    let theta = vec![0.0; d];
    FitResult {
        objective_value: reg.lambda * reg.penalty(&theta),
        support: Vec::new(),
        theta,
        iterations: 0,
        converged: true,
        kkt_violation: 0.0,
        gradient_fallbacks: 0,
    }
}

/// Minimizer of `(1/N) Σ_{m ≠ n} f_m + λR`, warm-started at `warm`, using the
/// direct solver for the regularizer (no chord shortcut).
pub fn loo_refit(data: &Dataset, reg: &Regularizer, n: usize, warm: &[f64], config: &SolverConfig) -> Result<Vec<f64>> {
    data.check_exclude(Some(n))?;
    data.check_theta(warm)?;
    reg.validate()?;
    if data.n() == 1 {
        return Ok(vec![0.0; data.d()]);
    }
    let cfg = SolverConfig { warm_start: Some(warm.to_vec()), ..config.clone() };
    let fit = match reg.kind {
        Penalty::L1 => fit_l1_excluding(data, reg.lambda, &cfg, Some(n))?,
        _ => fit_smooth_excluding(data, reg, &cfg, Some(n))?,
    };
    Ok(fit.theta)
}

/// Collects refit outcomes into an [`ExactLoo`]. `outcomes` must be in row order.
pub fn assemble_exact(refitter: &LooRefitter<'_>, outcomes: Vec<(usize, Result<FitResult>)>) -> ExactLoo {
    let mut set = LooSet::new(LooMethod::Exact);
    let mut losses = BTreeMap::new();
    let mut failed = Vec::new();
    for (n, out) in outcomes {
        match out {
            Ok(fit) => {
                if !fit.converged {
                    failed.push(n);
                }
                losses.insert(n, refitter.left_out_loss(n, &fit.theta));
                set.thetas.insert(n, fit.theta);
            }
            Err(e) => {
                log::warn!("fold {n} failed: {e}");
                failed.push(n);
            }
        }
    }
    let n = refitter.data().n();
    let loo = if failed.is_empty() && losses.len() == n {
        Some(losses.values().sum::<f64>() / n as f64)
    } else {
        None
    };
    ExactLoo { set, loo, losses, failed_folds: failed, full_fit: refitter.full_fit().clone() }
}

pub fn exact_loocv(data: &Dataset, reg: &Regularizer, config: &SolverConfig) -> Result<ExactLoo> {
    let refitter = LooRefitter::new(data, reg, config)?;
    let folds: Vec<usize> = (0..data.n()).collect();
    let outcomes = refitter.refit_all(&folds);
    Ok(assemble_exact(&refitter, outcomes))
}

/// `k` distinct rows drawn uniformly from `0..n`, sorted.
pub fn sample_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::invalid("fold count must satisfy 1 <= k <= N"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        perm.swap(i, j);
    }
    let mut out = perm[..k].to_vec();
    out.sort_unstable();
    Ok(out)
}

pub fn assemble_subsampled(refitter: &LooRefitter<'_>, outcomes: Vec<(usize, Result<FitResult>)>) -> SubsampledCv {
    let mut folds = Vec::with_capacity(outcomes.len());
    let mut losses = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    for (n, out) in outcomes {
        folds.push(n);
        match out {
            Ok(fit) => {
                if !fit.converged {
                    failed.push(n);
                }
                losses.push(refitter.left_out_loss(n, &fit.theta));
            }
            Err(_) => {
                failed.push(n);
                losses.push(f64::NAN);
            }
        }
    }
    let k = losses.len();
    let (estimate, stderr) = if failed.is_empty() {
        let mean = losses.iter().sum::<f64>() / k as f64;
        let se = if k > 1 {
            let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (k - 1) as f64;
            Some(sqrt(var / k as f64))
        } else {
            None
        };
        (Some(mean), se)
    } else {
        (None, None)
    };
    SubsampledCv { estimate, stderr, folds, losses, failed_folds: failed }
}

pub fn subsampled_cv(data: &Dataset, reg: &Regularizer, k: usize, seed: u64, config: &SolverConfig) -> Result<SubsampledCv> {
    let folds = sample_folds(data.n(), k, seed)?;
    let refitter = LooRefitter::new(data, reg, config)?;
    let outcomes = refitter.refit_all(&folds);
    Ok(assemble_subsampled(&refitter, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::GlmFamily;
    use crate::linalg::DenseMatrix;
    use crate::synth::{gen_design, gen_responses, gen_theta_star, ThetaMode};
    use nalgebra::{DMatrix, DVector};

    fn data(n: usize, d: usize, family: GlmFamily, seed: u64) -> Dataset {
        let x = gen_design(n, d, seed);
        let t = gen_theta_star(d, 2.min(d), ThetaMode::Unit, seed);
        let y = gen_responses(&x, &t, family, 1.0, seed + 3).unwrap();
        Dataset::new(x, y, family).unwrap()
    }

    #[test]
    fn ols_leave_one_out_matches_leverage_formula() {
        let ds = data(30, 4, GlmFamily::Linear, 2);
        let x = ds.x().columns(&[0, 1, 2, 3]);
        let xm = DMatrix::from_column_slice(30, 4, x.as_col_major());
        let xtx_inv = (xm.transpose() * &xm).try_inverse().unwrap();
        let yv = DVector::from_column_slice(ds.y());
        let theta_hat = &xtx_inv * xm.transpose() * &yv;
        let reg = Regularizer::l2(0.0);
        for n in [0, 7, 29] {
            let xn = xm.row(n).transpose();
            let r = ds.y()[n] - (xn.transpose() * &theta_hat)[0];
            let h = (xn.transpose() * &xtx_inv * &xn)[0];
            let want = &theta_hat - &xtx_inv * &xn * (r / (1.0 - h));
            let got = loo_refit(&ds, &reg, n, &vec![0.0; 4], &SolverConfig::default()).unwrap();
            for d in 0..4 {
                assert!((got[d] - want[d]).abs() < 1e-8, "{} vs {}", got[d], want[d]);
            }
        }
    }

    #[test]
    fn duplicated_rows_leave_fit_unchanged() {
        // with λ = 0 the LOO objective is half the full one
        let lin = Dataset::new(DenseMatrix::from_rows(&[vec![2.0], vec![2.0]]), vec![3.0, 3.0], GlmFamily::Linear).unwrap();
        let reg0 = Regularizer::l1(0.0);
        let fit = crate::l1::fit_l1(&lin, 0.0, &SolverConfig::default()).unwrap();
        let loo = loo_refit(&lin, &reg0, 1, &fit.theta, &SolverConfig::default()).unwrap();
        assert!((loo[0] - fit.theta[0]).abs() < 1e-12);
    }

    #[test]
    fn single_row_gives_zero_parameters() {
        let x = DenseMatrix::from_rows(&[vec![1.5, -2.0]]);
        let ds = Dataset::new(x, vec![-1.0], GlmFamily::Logistic).unwrap();
        for reg in [Regularizer::l1(0.3), Regularizer::l2(0.3), Regularizer::smoothed_l1(0.3, 10.0)] {
            let out = exact_loocv(&ds, &reg, &SolverConfig::default()).unwrap();
            assert_eq!(out.set.get(0).unwrap(), &[0.0, 0.0]);
            assert!((out.loo.unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_matches_cold_start_refits() {
        for (family, reg) in [
            (GlmFamily::Linear, Regularizer::l1(0.05)),
            (GlmFamily::Logistic, Regularizer::l1(0.03)),
            (GlmFamily::Logistic, Regularizer::l2(0.02)),
            (GlmFamily::Linear, Regularizer::smoothed_l1(0.05, 20.0)),
        ] {
            let ds = data(40, 6, family, 5);
            let cfg = SolverConfig::default();
            let out = exact_loocv(&ds, &reg, &cfg).unwrap();
            assert!(out.failed_folds.is_empty());
            assert!(out.loo.unwrap().is_finite());
            for n in 0..40 {
                let cold = loo_refit(&ds, &reg, n, &vec![0.0; 6], &cfg).unwrap();
                let warm = out.set.get(n).unwrap();
                for d in 0..6 {
                    assert!((cold[d] - warm[d]).abs() <= 1e-8, "{:?} fold {n}", reg.kind);
                }
            }
        }
    }

    #[test]
    fn subsampled_with_all_folds_is_exact() {
        let ds = data(25, 5, GlmFamily::Logistic, 8);
        let reg = Regularizer::l1(0.04);
        let cfg = SolverConfig::default();
        let exact = exact_loocv(&ds, &reg, &cfg).unwrap();
        let sub = subsampled_cv(&ds, &reg, 25, 99, &cfg).unwrap();
        assert_eq!(sub.estimate.unwrap().to_bits(), exact.loo.unwrap().to_bits());
        let one = subsampled_cv(&ds, &reg, 1, 4, &cfg).unwrap();
        assert!(one.stderr.is_none());
        assert_eq!(one.estimate.unwrap(), exact.losses[&one.folds[0]]);
        assert!(subsampled_cv(&ds, &reg, 0, 4, &cfg).is_err());
    }

    #[test]
    fn fold_sampling_is_reproducible_and_distinct() {
        let a = sample_folds(100, 41, 7).unwrap();
        assert_eq!(a, sample_folds(100, 41, 7).unwrap());
        let mut b = a.clone();
        b.dedup();
        assert_eq!(b.len(), 41);
        assert_ne!(a, sample_folds(100, 41, 8).unwrap());
    }

    #[test]
    fn method_names_round_trip() {
        for m in LooMethod::ALL {
            assert_eq!(LooMethod::from_name(m.name()), Some(m));
        }
    }
}
