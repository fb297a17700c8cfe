//! ℓ1-regularized GLM solver.
//!
//! Linear problems use cyclic coordinate descent; logistic problems wrap the
//! same kernel in an IRLS outer loop with step halving. Sweeps follow the
//! order `0..D` so results are bit-reproducible.
//!
//! Two inner representations are available. Residual mode keeps `u − Xθ`
//! and costs `O(N)` per coordinate. Gram mode (linear only) keeps the
//! gradient through a precomputed `XᵀX`, costs `O(D)` per *changed*
//! coordinate, and pays off when the same data is refit many times, as in
//! exact leave-one-out.
//!
//! After convergence the fit is polished: Newton steps on the final support
//! with the signs held fixed, kept only if no sign flips and the KKT residual
//! does not grow.

use alloc::vec;
use alloc::vec::Vec;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::glm::{Dataset, FitResult, GlmFamily};
use crate::linalg::{axpy, Cholesky, DenseMatrix};
use crate::math::{abs, signum, sqrt};

/// Floor on IRLS working weights.
const D2_FLOOR: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;
const MAX_POLISH_STEPS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Largest coordinate change in a full sweep at convergence.
    pub tol: f64,
    /// Budget on coordinate sweeps (ℓ1) or Newton iterations (smooth).
    pub max_iters: usize,
    /// KKT residual (ℓ1) or gradient norm (smooth) required at return.
    pub kkt_tol: f64,
    pub warm_start: Option<Vec<f64>>,
    /// Penalize `θ_d` by the column's root-mean-square (equivalent to fitting
    /// on columns scaled to unit second moment).
    pub standardize: bool,
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 100_000, kkt_tol: 1e-8, warm_start: None, standardize: false, polish: true }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.kkt_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Indices of the exact nonzeros.
pub fn support_of(theta: &[f64]) -> Vec<usize> {
    theta.iter().enumerate().filter(|(_, t)| **t != 0.0).map(|(i, _)| i).collect()
}

pub fn fit_l1(data: &Dataset, lambda: f64, config: &SolverConfig) -> Result<FitResult> {
    L1Context::new(data, lambda, config, false)?.solve(config, config.warm_start.as_deref(), None)
}

/// Same as [`fit_l1`] with row `exclude` removed (divisor stays `N`).
pub fn fit_l1_excluding(data: &Dataset, lambda: f64, config: &SolverConfig, exclude: Option<usize>) -> Result<FitResult> {
    L1Context::new(data, lambda, config, false)?.solve(config, config.warm_start.as_deref(), exclude)
}

/// Largest KKT residual of `θ` for the unweighted ℓ1 problem.
pub fn kkt_violation(data: &Dataset, lambda: f64, theta: &[f64], exclude: Option<usize>) -> Result<f64> {
    data.check_theta(theta)?;
    data.check_exclude(exclude)?;
    let g = crate::glm::data_gradient(data, theta, exclude);
    let pf = vec![1.0; data.d()];
    Ok(kkt_from_gradient(&g, theta, lambda, &pf))
}

fn kkt_from_gradient(g: &[f64], theta: &[f64], lambda: f64, pf: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for d in 0..g.len() {
        let v = if theta[d] != 0.0 {
            abs(g[d] + lambda * pf[d] * signum(theta[d]))
        } else {
            (abs(g[d]) - lambda * pf[d]).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

struct Gram {
    g: DenseMatrix,
    xty: Vec<f64>,
}

/// Per-dataset state shared by every fit on the same `(data, λ)`.
pub(crate) struct L1Context<'a> {
    data: &'a Dataset,
    lambda: f64,
    pf: Vec<f64>,
    col_sq: Vec<f64>,
    gram: Option<Gram>,
}

/// Gram mode is used for linear refits up to this many columns.
pub(crate) const GRAM_MAX_D: usize = 2048;

impl<'a> L1Context<'a> {
    pub(crate) fn new(data: &'a Dataset, lambda: f64, config: &SolverConfig, use_gram: bool) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        config.validate()?;
        let n = data.n();
        let ones = vec![1.0; n];
        let col_sq: Vec<f64> = (0..data.d()).map(|j| data.x().col_weighted_sq(j, &ones)).collect();
        let pf = if config.standardize {
            col_sq.iter().map(|s| if *s > 0.0 { sqrt(s / n as f64) } else { 1.0 }).collect()
        } else {
            vec![1.0; data.d()]
        };
        let gram = if use_gram && data.family() == GlmFamily::Linear && data.d() <= GRAM_MAX_D {
            Some(Gram { g: data.x().weighted_gram(&ones), xty: data.x().tr_mul_vec(data.y()) })
        } else {
            None
        };
        Ok(Self { data, lambda, pf, col_sq, gram })
    }

    pub(crate) fn solve(&self, config: &SolverConfig, warm: Option<&[f64]>, exclude: Option<usize>) -> Result<FitResult> {
        self.data.check_exclude(exclude)?;
        let mut theta = match warm {
            Some(w) => {
                self.data.check_theta(w)?;
                w.to_vec()
            }
            None => vec![0.0; self.data.d()],
        };
        let (mut iterations, mut converged) = match (&self.gram, self.data.family()) {
            (Some(gram), _) => self.cd_gram(gram, &mut theta, config, exclude),
            (None, GlmFamily::Linear) => self.cd_linear(&mut theta, config, exclude),
            (None, GlmFamily::Logistic) => self.irls(&mut theta, config, exclude),
        };
        let mut kkt = self.kkt(&theta, exclude);
        if config.polish && !theta.iter().all(|t| *t == 0.0) {
            if let Some((polished, steps)) = self.polish(&theta, exclude) {
                let k2 = self.kkt(&polished, exclude);
                if k2 <= kkt {
                    theta = polished;
                    kkt = k2;
                    iterations += steps;
                }
            }
        }
        converged = converged && kkt <= config.kkt_tol;
        if !converged {
            log::warn!("l1 solver stopped after {iterations} sweeps with KKT residual {kkt:e}");
        }
        let z = self.data.x().mul_vec(&theta);
        let penalty: f64 = theta.iter().zip(&self.pf).map(|(t, p)| p * abs(*t)).sum();
        let objective_value = self.data.data_loss(&z, exclude) + self.lambda * penalty;
        Ok(FitResult {
            support: support_of(&theta),
            theta,
            objective_value,
            iterations,
            converged,
            kkt_violation: kkt,
            gradient_fallbacks: 0,
        })
    }

    fn gradient(&self, theta: &[f64], exclude: Option<usize>) -> Vec<f64> {
        match &self.gram {
            Some(gram) => self.gram_gradient(gram, theta, exclude),
            None => crate::glm::data_gradient(self.data, theta, exclude),
        }
    }

    fn kkt(&self, theta: &[f64], exclude: Option<usize>) -> f64 {
        kkt_from_gradient(&self.gradient(theta, exclude), theta, self.lambda, &self.pf)
    }

    /// `(1/N)(G^{\n} θ − b^{\n})`, touching only the nonzero columns.
    fn gram_gradient(&self, gram: &Gram, theta: &[f64], exclude: Option<usize>) -> Vec<f64> {
        let inv_n = 1.0 / self.data.n() as f64;
        let mut g: Vec<f64> = gram.xty.iter().map(|b| -b).collect();
        for (j, t) in theta.iter().enumerate() {
            if *t != 0.0 {
                axpy(*t, gram.g.col(j), &mut g);
            }
        }
        if let Some(n) = exclude {
            let r = self.data.x().row_dot(n, theta) - self.data.y()[n];
            self.data.x().row_axpy(n, -r, &mut g);
        }
        g.iter_mut().for_each(|v| *v *= inv_n);
        g
    }

    fn cd_gram(&self, gram: &Gram, theta: &mut [f64], config: &SolverConfig, exclude: Option<usize>) -> (usize, bool) {
        let d = self.data.d();
        let inv_n = 1.0 / self.data.n() as f64;
        let xn = exclude.map(|n| self.data.x().row_dense(n));
        let mut g = self.gram_gradient(gram, theta, exclude);
        let a: Vec<f64> = (0..d)
            .map(|j| {
                let gjj = gram.g.get(j, j) - xn.as_ref().map_or(0.0, |x| x[j] * x[j]);
                gjj * inv_n
            })
            .collect();
        let lambda = self.lambda;
        let pf = &self.pf;
        let mut update = |j: usize, theta: &mut [f64], g: &mut [f64]| -> f64 {
            let old = theta[j];
            let new = if a[j] > 0.0 { soft_threshold(a[j] * old - g[j], lambda * pf[j]) / a[j] } else { 0.0 };
            let delta = new - old;
            if delta != 0.0 {
                theta[j] = new;
                axpy(delta * inv_n, gram.g.col(j), g);
                if let Some(x) = &xn {
                    axpy(-delta * x[j] * inv_n, x, g);
                }
            }
            abs(delta)
        };
        active_set_loop(d, theta, &mut g, config, &mut update)
    }

    fn cd_linear(&self, theta: &mut [f64], config: &SolverConfig, exclude: Option<usize>) -> (usize, bool) {
        let data = self.data;
        let x = data.x();
        let d = data.d();
        let inv_n = 1.0 / data.n() as f64;
        let mut r = data.y().to_vec();
        for (j, t) in theta.iter().enumerate() {
            if *t != 0.0 {
                x.col_axpy(j, -t, &mut r);
            }
        }
        let a: Vec<f64> = (0..d)
            .map(|j| {
                let excl = exclude.map_or(0.0, |n| {
                    let v = x.get(n, j);
                    v * v
                });
                (self.col_sq[j] - excl) * inv_n
            })
            .collect();
        let lambda = self.lambda;
        let pf = &self.pf;
        let mut update = |j: usize, theta: &mut [f64], r: &mut [f64]| -> f64 {
            if a[j] <= 0.0 && theta[j] == 0.0 {
                return 0.0;
            }
            let old = theta[j];
            let mut xr = x.col_dot(j, r);
            if let Some(n) = exclude {
                xr -= x.get(n, j) * r[n];
            }
            let new = if a[j] > 0.0 { soft_threshold(xr * inv_n + a[j] * old, lambda * pf[j]) / a[j] } else { 0.0 };
            let delta = new - old;
            if delta != 0.0 {
                theta[j] = new;
                x.col_axpy(j, -delta, r);
            }
            abs(delta)
        };
        active_set_loop(d, theta, &mut r, config, &mut update)
    }

    /// Weighted lasso `min (1/2N) Σ w_i (u_i − x_iᵀθ)² + λ Σ pf_j |θ_j|` from
    /// `θ`, with `r = u − Xθ` supplied.
    fn cd_weighted(&self, theta: &mut [f64], r: &mut [f64], w: &[f64], config: &SolverConfig, budget: usize) -> (usize, bool) {
        let x = self.data.x();
        let d = self.data.d();
        let inv_n = 1.0 / self.data.n() as f64;
        let a: Vec<f64> = (0..d).map(|j| x.col_weighted_sq(j, w) * inv_n).collect();
        let lambda = self.lambda;
        let pf = &self.pf;
        let mut update = |j: usize, theta: &mut [f64], r: &mut [f64]| -> f64 {
            if a[j] <= 0.0 && theta[j] == 0.0 {
                return 0.0;
            }
            let old = theta[j];
            let xr = x.col_dot_weighted(j, w, r);
            let new = if a[j] > 0.0 { soft_threshold(xr * inv_n + a[j] * old, lambda * pf[j]) / a[j] } else { 0.0 };
            let delta = new - old;
            if delta != 0.0 {
                theta[j] = new;
                x.col_axpy(j, -delta, r);
            }
            abs(delta)
        };
        let cfg = SolverConfig { max_iters: budget.max(1), ..config.clone() };
        active_set_loop(d, theta, r, &cfg, &mut update)
    }

    fn irls(&self, theta: &mut Vec<f64>, config: &SolverConfig, exclude: Option<usize>) -> (usize, bool) {
        let data = self.data;
        let n = data.n();
        let mut sweeps = 0usize;
        let mut z = data.x().mul_vec(theta);
        let mut f_old = self.penalized(&z, theta, exclude);
        loop {
            if sweeps >= config.max_iters {
                return (sweeps, false);
            }
            let mut w = vec![0.0; n];
            let mut r = vec![0.0; n];
            for i in 0..n {
                if Some(i) == exclude {
                    continue;
                }
                let (d1, d2) = data.d1_d2_at(i, z[i]);
                w[i] = d2.max(D2_FLOOR);
                r[i] = -d1 / w[i];
            }
            // u = z + r, so after the inner solve X θ_new = u − r_new
            let u: Vec<f64> = z.iter().zip(&r).map(|(a, b)| a + b).collect();
            let mut cand = theta.clone();
            let (used, inner_ok) = self.cd_weighted(&mut cand, &mut r, &w, config, config.max_iters - sweeps);
            sweeps += used;
            let z_new: Vec<f64> = u.iter().zip(&r).map(|(a, b)| a - b).collect();
            let step: Vec<f64> = cand.iter().zip(theta.iter()).map(|(a, b)| a - b).collect();
            let dz: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
            let max_step = step.iter().fold(0.0f64, |m, v| m.max(abs(*v)));

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let (th, zz) = if t == 1.0 {
                    (cand.clone(), z_new.clone())
                } else {
                    (
                        theta.iter().zip(&step).map(|(a, s)| a + t * s).collect::<Vec<_>>(),
                        z.iter().zip(&dz).map(|(a, s)| a + t * s).collect::<Vec<_>>(),
                    )
                };
                let f_new = self.penalized(&zz, &th, exclude);
                if f_new <= f_old {
                    accepted = Some((th, zz, f_new));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((th, zz, f_new)) => {
                    *theta = th;
                    z = zz;
                    f_old = f_new;
                    if t * max_step <= config.tol && inner_ok {
                        return (sweeps, true);
                    }
                }
                // no decrease along the step: θ is optimal to rounding
                None => return (sweeps, inner_ok && max_step <= sqrt(config.tol)),
            }
        }
    }

    fn penalized(&self, z: &[f64], theta: &[f64], exclude: Option<usize>) -> f64 {
        let pen: f64 = theta.iter().zip(&self.pf).map(|(t, p)| p * abs(*t)).sum();
        self.data.data_loss(z, exclude) + self.lambda * pen
    }

    /// Newton iterations on the support of `θ` with signs held fixed.
    fn polish(&self, theta: &[f64], exclude: Option<usize>) -> Option<(Vec<f64>, usize)> {
        let s = support_of(theta);
        let inv_n = 1.0 / self.data.n() as f64;
        let sign: Vec<f64> = s.iter().map(|&j| signum(theta[j])).collect();
        let mut th = theta.to_vec();
        let xs = match &self.gram {
            Some(_) => None,
            None => Some(Design::Dense(self.data.x().columns(&s))),
        };
        let mut last = f64::INFINITY;
        for step in 0..MAX_POLISH_STEPS {
            let (h, g) = match (&self.gram, &xs) {
                (Some(gram), _) => {
                    let mut h = DenseMatrix::zeros(s.len(), s.len());
                    let xn = exclude.map(|n| self.data.x().row_gather(n, &s));
                    for (b, &jb) in s.iter().enumerate() {
                        for (a, &ja) in s.iter().enumerate() {
                            let mut v = gram.g.get(ja, jb);
                            if let Some(x) = &xn {
                                v -= x[a] * x[b];
                            }
                            h.set(a, b, v * inv_n);
                        }
                    }
                    let full = self.gram_gradient(gram, &th, exclude);
                    (h, s.iter().map(|&j| full[j]).collect::<Vec<_>>())
                }
                (None, Some(xs)) => {
                    let z = self.data.x().mul_vec(&th);
                    let (mut d1, mut d2) = self.data.derivatives(&z);
                    if let Some(n) = exclude {
                        d1[n] = 0.0;
                        d2[n] = 0.0;
                    }
                    d2.iter_mut().for_each(|v| *v *= inv_n);
                    let g: Vec<f64> = (0..s.len()).map(|k| xs.col_dot(k, &d1) * inv_n).collect();
                    (xs.weighted_gram(&d2), g)
                }
                _ => unreachable!(),
            };
            let rhs: Vec<f64> =
                g.iter().zip(&sign).zip(&s).map(|((gk, sk), &j)| -(gk + self.lambda * self.pf[j] * sk)).collect();
            let chol = Cholesky::factor(&h).ok()?;
            let delta = chol.solve(&rhs);
            let size = delta.iter().fold(0.0f64, |m, v| m.max(abs(*v)));
            for (k, &j) in s.iter().enumerate() {
                th[j] += delta[k];
                if signum(th[j]) != sign[k] {
                    return None;
                }
            }
            let scale = s.iter().fold(1.0f64, |m, &j| m.max(abs(th[j])));
            if size <= 4.0 * f64::EPSILON * scale || size >= last {
                return Some((th, step + 1));
            }
            last = size;
        }
        Some((th, MAX_POLISH_STEPS))
    }
}

/// Full sweep, then sweeps over the nonzero coordinates until they settle,
/// then another full sweep to check nothing new enters. `update` returns the
/// absolute change it made to coordinate `j`.
fn active_set_loop<F>(d: usize, theta: &mut [f64], state: &mut [f64], config: &SolverConfig, update: &mut F) -> (usize, bool)
where
    F: FnMut(usize, &mut [f64], &mut [f64]) -> f64,
{
    let mut sweeps = 0;
    loop {
        let mut change = 0.0f64;
        for j in 0..d {
            change = change.max(update(j, theta, state));
        }
        sweeps += 1;
        if change <= config.tol {
            return (sweeps, true);
        }
        if sweeps >= config.max_iters {
            return (sweeps, false);
        }
        let active = support_of(theta);
        loop {
            let mut change = 0.0f64;
            for &j in &active {
                change = change.max(update(j, theta, state));
            }
            sweeps += 1;
            if change <= config.tol {
                break;
            }
            if sweeps >= config.max_iters {
                return (sweeps, false);
            }
        }
    }
}
