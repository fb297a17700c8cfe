//! Stochastic inverse-Hessian-vector products from a truncated, sampled
//! Neumann series.
//!
//! With `H/s` spectrally bounded by one, `H⁻¹v = (1/s) Σ_k (I − H/s)^k v`.
//! Each term replaces `H` by `A_k = d2_{n_k} x_{n_k} x_{n_k}ᵀ + λ∇²R(θ)` for a
//! uniformly drawn row `n_k`, whose mean over rows is `H`. The recursion
//! `v + (I − A_k/s) est` is run `depth_k` times, averaged over `repeats_m`
//! independent runs and divided by `s`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exact::{LooMethod, LooSet};
use crate::glm::{Dataset, FitResult, Regularizer};
use crate::linalg::{dot, norm2};
use crate::math::sqrt;

const DIVERGENCE_RATIO: f64 = 1e8;
const POWER_ITERS: usize = 50;
const SCALE_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LissaConfig {
    /// Series truncation depth `K`.
    pub depth_k: usize,
    /// Independent runs averaged, `M`.
    pub repeats_m: usize,
    /// Spectral normalization `s`. `None` picks one from the data.
    pub scale: Option<f64>,
    pub seed: u64,
    /// Use `λ∇²R / N` in `A_k` instead of `λ∇²R`. The samples are then biased
    /// for `H`; kept for comparison only.
    pub literal_regularizer: bool,
}

impl Default for LissaConfig {
    fn default() -> Self {
        Self { depth_k: 100, repeats_m: 10, scale: None, seed: 0, literal_regularizer: false }
    }
}

impl LissaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats_m == 0 {
            return Err(Error::invalid("repeats_m must be at least 1"));
        }
        if let Some(s) = self.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("scale must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Per-row curvatures and the regularizer diagonal at a fixed `θ`.
struct Sampler<'a> {
    data: &'a Dataset,
    d2: Vec<f64>,
    reg_diag: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a Dataset, reg: &Regularizer, theta: &[f64], literal: bool) -> Result<Self> {
        if !reg.is_smooth() {
            return Err(Error::NonDifferentiableRegularizer);
        }
        reg.validate()?;
        data.check_theta(theta)?;
        let z = data.x().mul_vec(theta);
        let (_, d2) = data.derivatives(&z);
        let factor = if literal { reg.lambda / data.n() as f64 } else { reg.lambda };
        let reg_diag = theta.iter().map(|t| factor * reg.curv_coord(*t)).collect();
        Ok(Self { data, d2, reg_diag })
    }

    /// `out = A_n v`.
    fn apply_sample(&self, n: usize, v: &[f64], out: &mut [f64]) {
        for ((o, r), vi) in out.iter_mut().zip(&self.reg_diag).zip(v) {
            *o = r * vi;
        }
        let c = self.d2[n] * self.data.x().row_dot(n, v);
        if c != 0.0 {
            self.data.x().row_axpy(n, c, out);
        }
    }

    /// `(1/N) Σ_n A_n v`.
    fn apply_mean(&self, v: &[f64]) -> Vec<f64> {
        let inv_n = 1.0 / self.data.n() as f64;
        let mut xv = self.data.x().mul_vec(v);
        xv.iter_mut().zip(&self.d2).for_each(|(a, w)| *a *= w * inv_n);
        let mut out = self.data.x().tr_mul_vec(&xv);
        out.iter_mut().zip(self.reg_diag.iter().zip(v)).for_each(|(o, (r, vi))| *o += r * vi);
        out
    }

    /// `1.1 · max(‖E[A]‖ by power iteration, max_n ‖A_n‖)`. The second bound
    /// keeps every single-sample factor `I − A_n/s` from expanding.
    fn auto_scale(&self) -> f64 {
        let d = self.reg_diag.len();
        let mut v = vec![1.0 / sqrt(d as f64); d];
        let mut est = 0.0;
        for _ in 0..POWER_ITERS {
            let w = self.apply_mean(&v);
            let nw = norm2(&w);
            if nw == 0.0 {
                break;
            }
            est = dot(&v, &w);
            v = w.into_iter().map(|x| x / nw).collect();
        }
        let reg_max = self.reg_diag.iter().fold(0.0_f64, |a, b| a.max(*b));
        let sample_max = (0..self.data.n())
            .map(|n| self.d2[n] * self.data.x().row_sq_norm(n))
            .fold(0.0_f64, f64::max)
            + reg_max;
        let s = SCALE_MARGIN * est.max(sample_max);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    fn scale(&self, cfg: &LissaConfig) -> f64 {
        cfg.scale.unwrap_or_else(|| self.auto_scale())
    }

    fn solve(&self, v: &[f64], cfg: &LissaConfig, scale: f64, key: u64) -> Result<Vec<f64>> {
        let d = v.len();
        let n = self.data.n();
        let bound = DIVERGENCE_RATIO * norm2(v);
        let mut total = vec![0.0; d];
        let mut est = vec![0.0; d];
        let mut av = vec![0.0; d];
        for repeat in 0..cfg.repeats_m {
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            rng.set_stream(repeat as u64);
            est.copy_from_slice(v);
            for _ in 0..cfg.depth_k {
                let k = rng.random_range(0..n);
                self.apply_sample(k, &est, &mut av);
                for ((e, a), vi) in est.iter_mut().zip(&av).zip(v) {
                    *e = vi + *e - a / scale;
                }
                let norm = norm2(&est);
                if !(norm <= bound) {
                    return Err(Error::LissaDiverged { norm });
                }
            }
            total.iter_mut().zip(&est).for_each(|(t, e)| *t += e);
        }
        let c = 1.0 / (cfg.repeats_m as f64 * scale);
        total.iter_mut().for_each(|t| *t *= c);
        Ok(total)
    }
}

fn mix(seed: u64, n: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ n.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The scale [`lissa_inverse_hvp`] uses when `cfg.scale` is `None`.
pub fn auto_scale(data: &Dataset, reg: &Regularizer, theta: &[f64], literal: bool) -> Result<f64> {
    Ok(Sampler::new(data, reg, theta, literal)?.auto_scale())
}

/// Stochastic estimate of `H(θ)⁻¹ v`.
pub fn lissa_inverse_hvp(data: &Dataset, reg: &Regularizer, theta: &[f64], v: &[f64], cfg: &LissaConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if v.len() != data.d() {
        return Err(Error::DimensionMismatch { expected: data.d(), got: v.len() });
    }
    let sampler = Sampler::new(data, reg, theta, cfg.literal_regularizer)?;
    let scale = sampler.scale(cfg);
    sampler.solve(v, cfg, scale, mix(cfg.seed, u64::MAX))
}

/// IJ with each solve `H⁻¹∇f_n` replaced by a stochastic estimate. Row `n`
/// draws from its own seed, so any subset of rows reproduces.
pub fn ij_full_lissa(data: &Dataset, reg: &Regularizer, fit: &FitResult, cfg: &LissaConfig) -> Result<LooSet> {
    ij_full_lissa_rows(data, reg, fit, cfg, &(0..data.n()).collect::<Vec<_>>())
}

/// [`ij_full_lissa`] over the given rows only.
pub fn ij_full_lissa_rows(
    data: &Dataset,
    reg: &Regularizer,
    fit: &FitResult,
    cfg: &LissaConfig,
    rows: &[usize],
) -> Result<LooSet> {
    cfg.validate()?;
    if let Some(&bad) = rows.iter().find(|&&n| n >= data.n()) {
        return Err(Error::IndexOutOfRange { index: bad, len: data.n() });
    }
    let sampler = Sampler::new(data, reg, &fit.theta, cfg.literal_regularizer)?;
    let scale = sampler.scale(cfg);
    let inv_n = 1.0 / data.n() as f64;
    let mut set = LooSet::new(LooMethod::IjLissa);
    for &n in rows {
        let z = data.x().row_dot(n, &fit.theta);
        let (d1, _) = data.d1_d2_at(n, z);
        let mut g = vec![0.0; data.d()];
        data.x().row_axpy(n, d1, &mut g);
        let step = sampler.solve(&g, cfg, scale, mix(cfg.seed, n as u64))?;
        let theta: Vec<f64> = fit.theta.iter().zip(&step).map(|(t, s)| t + inv_n * s).collect();
        set.thetas.insert(n, theta);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::ij_full;
    use crate::design::Design;
    use crate::glm::GlmFamily;
    use crate::l1::SolverConfig;
    use crate::linalg::DenseMatrix;
    use crate::smooth::fit_smooth;
    use crate::synth::{gen_design, gen_responses, gen_theta_star, ThetaMode};
    use nalgebra::{DMatrix, DVector};

    fn logistic(n: usize, d: usize, seed: u64) -> Dataset {
        let x = gen_design(n, d, seed);
        let t = gen_theta_star(d, 2, ThetaMode::Unit, seed);
        let y = gen_responses(&x, &t, GlmFamily::Logistic, 1.0, seed + 1).unwrap();
        Dataset::new(x, y, GlmFamily::Logistic).unwrap()
    }

    fn direct(ds: &Dataset, reg: &Regularizer, theta: &[f64], v: &[f64]) -> DVector<f64> {
        let (n, d) = (ds.n(), ds.d());
        let mut h = DMatrix::<f64>::zeros(d, d);
        for m in 0..n {
            let z = ds.x().row_dot(m, theta);
            let (_, d2) = ds.d1_d2_at(m, z);
            let x = DVector::from_vec(ds.x().row_dense(m));
            h += &x * x.transpose() * (d2 / n as f64);
        }
        for j in 0..d {
            h[(j, j)] += reg.lambda * reg.curv_coord(theta[j]);
        }
        h.lu().solve(&DVector::from_column_slice(v)).unwrap()
    }

    fn rel(a: &[f64], b: &DVector<f64>) -> f64 {
        let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        (num / b.norm_squared()).sqrt()
    }

    #[test]
    fn depth_zero_is_scaled_identity() {
        let ds = logistic(20, 4, 1);
        let cfg = LissaConfig { depth_k: 0, repeats_m: 3, scale: Some(4.0), ..Default::default() };
        let v = [1.0, -2.0, 0.5, 8.0];
        let out = lissa_inverse_hvp(&ds, &Regularizer::l2(0.1), &[0.0; 4], &v, &cfg).unwrap();
        assert_eq!(out, vec![0.25, -0.5, 0.125, 2.0]);
    }

    #[test]
    fn identity_samples_return_v() {
        // one row, x = √½, linear d2 = 1, λ = ¼: A = ½ + 2·¼ = 1
        let x = Design::Dense(DenseMatrix::from_col_major(1, 1, vec![0.5f64.sqrt()]));
        let ds = Dataset::new(x, vec![0.3], GlmFamily::Linear).unwrap();
        let reg = Regularizer::l2(0.25);
        for (k, m) in [(1, 1), (7, 3), (50, 2)] {
            let cfg = LissaConfig { depth_k: k, repeats_m: m, scale: Some(1.0), ..Default::default() };
            let out = lissa_inverse_hvp(&ds, &reg, &[0.7], &[-1.5], &cfg).unwrap();
            assert!((out[0] + 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn samples_average_to_hessian() {
        let ds = logistic(15, 5, 2);
        let reg = Regularizer::smoothed_l1(0.3, 5.0);
        let theta = [0.2, -0.1, 0.0, 0.4, -0.3];
        let s = Sampler::new(&ds, &reg, &theta, false).unwrap();
        for j in 0..5 {
            let mut e = vec![0.0; 5];
            e[j] = 1.0;
            let mut mean = vec![0.0; 5];
            let mut out = vec![0.0; 5];
            for n in 0..15 {
                s.apply_sample(n, &e, &mut out);
                mean.iter_mut().zip(&out).for_each(|(m, o)| *m += o / 15.0);
            }
            let want = s.apply_mean(&e);
            for i in 0..5 {
                assert!((mean[i] - want[i]).abs() < 1e-14);
            }
        }
        // the literal form is off by (1 − 1/N) λ∇²R on the diagonal
        let lit = Sampler::new(&ds, &reg, &theta, true).unwrap();
        let e0 = [1.0, 0.0, 0.0, 0.0, 0.0];
        let gap = s.apply_mean(&e0)[0] - lit.apply_mean(&e0)[0];
        assert!((gap - (1.0 - 1.0 / 15.0) * reg.lambda * reg.curv_coord(theta[0])).abs() < 1e-14);
    }

    #[test]
    fn converges_to_direct_solve() {
        let ds = logistic(200, 5, 3);
        let reg = Regularizer::l2(2.0);
        let fit = fit_smooth(&ds, &reg, &SolverConfig::default()).unwrap();
        let v: Vec<f64> = (0..5).map(|j| (j as f64 - 2.5) / 3.0).collect();
        let cfg = LissaConfig { depth_k: 500, repeats_m: 50, seed: 9, ..Default::default() };
        let out = lissa_inverse_hvp(&ds, &reg, &fit.theta, &v, &cfg).unwrap();
        let want = direct(&ds, &reg, &fit.theta, &v);
        assert!(rel(&out, &want) < 1e-2, "{}", rel(&out, &want));
    }

    #[test]
    fn deeper_series_is_more_accurate() {
        let ds = logistic(100, 20, 4);
        let reg = Regularizer::l2(0.5);
        let theta = vec![0.0; 20];
        let v: Vec<f64> = (0..20).map(|j| 1.0 + j as f64 / 8.0).collect();
        let want = direct(&ds, &reg, &theta, &v);
        let median = |k: usize| {
            let mut errs: Vec<f64> = (0..20)
                .map(|seed| {
                    let cfg = LissaConfig { depth_k: k, repeats_m: 1, seed, ..Default::default() };
                    rel(&lissa_inverse_hvp(&ds, &reg, &theta, &v, &cfg).unwrap(), &want)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            (errs[9] + errs[10]) / 2.0
        };
        assert!(median(200) < median(20));
    }

    #[test]
    fn reproducible_and_seed_dependent() {
        let ds = logistic(40, 6, 5);
        let reg = Regularizer::l2(0.1);
        let fit = fit_smooth(&ds, &reg, &SolverConfig::default()).unwrap();
        let cfg = LissaConfig { depth_k: 30, repeats_m: 2, seed: 7, ..Default::default() };
        let a = ij_full_lissa(&ds, &reg, &fit, &cfg).unwrap();
        let b = ij_full_lissa(&ds, &reg, &fit, &cfg).unwrap();
        assert_eq!(a, b);
        let sub = ij_full_lissa_rows(&ds, &reg, &fit, &cfg, &[3, 17]).unwrap();
        assert_eq!(sub.get(17), a.get(17));
        let c = ij_full_lissa(&ds, &reg, &fit, &LissaConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ij_converges_to_exact_solve() {
        let ds = logistic(60, 5, 6);
        let reg = Regularizer::l2(2.0);
        let fit = fit_smooth(&ds, &reg, &SolverConfig::default()).unwrap();
        let exact = ij_full(&ds, &reg, &fit).unwrap();
        let cfg = LissaConfig { depth_k: 400, repeats_m: 40, seed: 1, ..Default::default() };
        let approx = ij_full_lissa(&ds, &reg, &fit, &cfg).unwrap();
        for n in 0..60 {
            let e = exact.get(n).unwrap();
            let a = approx.get(n).unwrap();
            let num: f64 = e.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let den: f64 = e.iter().zip(&fit.theta).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!(num <= 5e-2 * den, "row {n}: {num} vs {den}");
        }
    }

    #[test]
    fn depth_zero_ij_is_gradient_step() {
        let ds = logistic(10, 3, 7);
        let reg = Regularizer::l2(0.1);
        let fit = fit_smooth(&ds, &reg, &SolverConfig::default()).unwrap();
        let cfg = LissaConfig { depth_k: 0, repeats_m: 1, scale: Some(2.0), ..Default::default() };
        let set = ij_full_lissa(&ds, &reg, &fit, &cfg).unwrap();
        for n in 0..10 {
            let z = ds.x().row_dot(n, &fit.theta);
            let (d1, _) = ds.d1_d2_at(n, z);
            for j in 0..3 {
                let want = fit.theta[j] + d1 * ds.x().get(n, j) / (10.0 * 2.0);
                assert!((set.get(n).unwrap()[j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tiny_scale_diverges() {
        let ds = logistic(30, 4, 8);
        let cfg = LissaConfig { depth_k: 200, repeats_m: 1, scale: Some(1e-3), ..Default::default() };
        let r = lissa_inverse_hvp(&ds, &Regularizer::l2(0.1), &[0.0; 4], &[1.0; 4], &cfg);
        assert!(matches!(r, Err(Error::LissaDiverged { .. })));
    }

    #[test]
    fn rejects_bad_config_and_l1() {
        let ds = logistic(10, 2, 9);
        let bad = LissaConfig { repeats_m: 0, ..Default::default() };
        assert!(lissa_inverse_hvp(&ds, &Regularizer::l2(0.1), &[0.0; 2], &[1.0; 2], &bad).is_err());
        let neg = LissaConfig { scale: Some(-1.0), ..Default::default() };
        assert!(lissa_inverse_hvp(&ds, &Regularizer::l2(0.1), &[0.0; 2], &[1.0; 2], &neg).is_err());
        assert!(matches!(
            lissa_inverse_hvp(&ds, &Regularizer::l1(0.1), &[0.0; 2], &[1.0; 2], &LissaConfig::default()),
            Err(Error::NonDifferentiableRegularizer)
        ));
    }
}
