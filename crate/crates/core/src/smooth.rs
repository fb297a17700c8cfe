//! Damped Newton for twice-differentiable objectives (ℓ2, smoothed ℓ1).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::glm::{Dataset, FitResult, Regularizer};
use crate::hessian::StructuredHessian;
use crate::l1::{support_of, SolverConfig};
use crate::linalg::{dot, norm2, norm_inf};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

pub fn fit_smooth(data: &Dataset, reg: &Regularizer, config: &SolverConfig) -> Result<FitResult> {
    fit_smooth_excluding(data, reg, config, None)
}

/// [`fit_smooth`] with row `exclude` dropped from the sum (divisor stays `N`).
pub fn fit_smooth_excluding(
    data: &Dataset,
    reg: &Regularizer,
    config: &SolverConfig,
    exclude: Option<usize>,
) -> Result<FitResult> {
    if !reg.is_smooth() {
        return Err(Error::NonDifferentiableRegularizer);
    }
    reg.validate()?;
    config.validate()?;
    data.check_exclude(exclude)?;
    let mut theta = match &config.warm_start {
        Some(w) => {
            data.check_theta(w)?;
            w.clone()
        }
        None => alloc::vec![0.0; data.d()],
    };
    let mut state = State::at(data, reg, &theta, exclude);
    let mut fallbacks = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut prev_gnorm = f64::INFINITY;
    while iterations < config.max_iters {
        if state.gnorm == 0.0 {
            converged = true;
            break;
        }
        let dir: Vec<f64> = match state.hessian(data, reg, &theta, exclude) {
            Ok(h) => h.solve(&state.grad).iter().map(|v| -v).collect(),
            Err(_) => {
                fallbacks += 1;
                state.grad.iter().map(|v| -v).collect()
            }
        };
        // converged once the gradient is small and Newton would barely move,
        // or has stopped making progress at rounding level
        if state.gnorm <= config.kkt_tol && (norm_inf(&dir) <= config.tol || state.gnorm >= prev_gnorm) {
            converged = true;
            break;
        }
        iterations += 1;
        prev_gnorm = state.gnorm;
        let slope = dot(&state.grad, &dir);
        let (dir, slope) = if slope < 0.0 {
            (dir, slope)
        } else {
            fallbacks += 1;
            let g: Vec<f64> = state.grad.iter().map(|v| -v).collect();
            let s = -dot(&g, &g);
            (g, s)
        };
        let dz = data.x().mul_vec(&dir);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let z: Vec<f64> = state.z.iter().zip(&dz).map(|(a, b)| a + t * b).collect();
            let f = data.data_loss(&z, exclude) + reg.lambda * reg.penalty(&cand);
            // below rounding level the predicted decrease is unobservable
            let flat = -slope <= 1e-14 * state.f.abs().max(1e-300);
            if f <= state.f + ARMIJO_C * t * slope || (flat && t == 1.0) {
                next = Some((cand, z, f));
                break;
            }
            t *= 0.5;
        }
        match next {
            Some((cand, z, f)) => {
                theta = cand;
                state = State::with_z(data, reg, &theta, z, f, exclude);
            }
            None => break,
        }
    }
    if !converged && state.gnorm <= config.kkt_tol {
        converged = true;
    }
    if !converged {
        log::warn!("smooth solver stopped after {iterations} iterations with gradient norm {:e}", state.gnorm);
    }
    Ok(FitResult {
        support: support_of(&theta),
        theta,
        objective_value: state.f,
        iterations,
        converged,
        kkt_violation: state.gnorm,
        gradient_fallbacks: fallbacks,
    })
}

struct State {
    z: Vec<f64>,
    f: f64,
    grad: Vec<f64>,
    gnorm: f64,
}

impl State {
    fn at(data: &Dataset, reg: &Regularizer, theta: &[f64], exclude: Option<usize>) -> Self {
        let z = data.x().mul_vec(theta);
        let f = data.data_loss(&z, exclude) + reg.lambda * reg.penalty(theta);
        Self::with_z(data, reg, theta, z, f, exclude)
    }

    fn with_z(data: &Dataset, reg: &Regularizer, theta: &[f64], z: Vec<f64>, f: f64, exclude: Option<usize>) -> Self {
        let grad = gradient_at(data, reg, theta, &z, exclude);
        let gnorm = norm2(&grad);
        Self { z, f, grad, gnorm }
    }

    fn hessian(&self, data: &Dataset, reg: &Regularizer, theta: &[f64], exclude: Option<usize>) -> Result<StructuredHessian> {
        hessian_at(data, reg, theta, &self.z, exclude)
    }
}

pub(crate) fn gradient_at(data: &Dataset, reg: &Regularizer, theta: &[f64], z: &[f64], exclude: Option<usize>) -> Vec<f64> {
    let inv_n = 1.0 / data.n() as f64;
    let mut d1: Vec<f64> = z.iter().enumerate().map(|(i, &zi)| data.d1_d2_at(i, zi).0).collect();
    if let Some(n) = exclude {
        d1[n] = 0.0;
    }
    let mut g = data.x().tr_mul_vec(&d1);
    for (gd, t) in g.iter_mut().zip(theta) {
        *gd = *gd * inv_n + reg.lambda * reg.grad_coord(*t);
    }
    g
}

/// `H = diag(λ R'') + Xᵀ diag(d2 / N) X` with row `exclude` zeroed.
pub(crate) fn hessian_at(
    data: &Dataset,
    reg: &Regularizer,
    theta: &[f64],
    z: &[f64],
    exclude: Option<usize>,
) -> Result<StructuredHessian> {
    let inv_n = 1.0 / data.n() as f64;
    let mut omega: Vec<f64> = z.iter().enumerate().map(|(i, &zi)| data.d1_d2_at(i, zi).1 * inv_n).collect();
    if let Some(n) = exclude {
        omega[n] = 0.0;
    }
    let lam: Vec<f64> = theta.iter().map(|t| reg.lambda * reg.curv_coord(*t)).collect();
    StructuredHessian::build(data.x(), &lam, &omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{objective_gradient, GlmFamily};
    use crate::l1::fit_l1;
    use crate::synth::{gen_design, gen_responses, gen_theta_star, ThetaMode};
    use alloc::vec;
    use nalgebra::{DMatrix, DVector};

    fn data(n: usize, d: usize, family: GlmFamily, seed: u64) -> Dataset {
        let x = gen_design(n, d, seed);
        let t = gen_theta_star(d, 2.min(d), ThetaMode::Unit, seed);
        let y = gen_responses(&x, &t, family, 1.0, seed + 7).unwrap();
        Dataset::new(x, y, family).unwrap()
    }

    #[test]
    fn ridge_matches_closed_form() {
        let ds = data(60, 8, GlmFamily::Linear, 1);
        let lambda = 0.3;
        let fit = fit_smooth(&ds, &Regularizer::l2(lambda), &SolverConfig::default()).unwrap();
        let x = ds.x().columns(&(0..8).collect::<Vec<_>>());
        let xm = DMatrix::from_column_slice(60, 8, x.as_col_major());
        let a = xm.transpose() * &xm / 60.0 + DMatrix::identity(8, 8) * (2.0 * lambda);
        let b = xm.transpose() * DVector::from_column_slice(ds.y()) / 60.0;
        let want = a.lu().solve(&b).unwrap();
        for d in 0..8 {
            assert!((fit.theta[d] - want[d]).abs() < 1e-8);
        }
        assert!(fit.converged && fit.kkt_violation <= 1e-8);
    }

    #[test]
    fn unregularized_logistic_matches_gradient_descent() {
        let ds = data(200, 3, GlmFamily::Logistic, 4);
        let reg = Regularizer::l2(0.0);
        let fit = fit_smooth(&ds, &reg, &SolverConfig::default()).unwrap();
        // plain gradient descent oracle, step 1/L with L ≤ ¼ λ_max(XᵀX/N)
        let mut theta = vec![0.0; 3];
        for _ in 0..200_000 {
            let g = objective_gradient(&ds, &reg, &theta, None).unwrap();
            if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
                break;
            }
            for d in 0..3 {
                theta[d] -= 2.0 * g[d];
            }
        }
        for d in 0..3 {
            assert!((fit.theta[d] - theta[d]).abs() < 1e-6);
        }
    }

    #[test]
    fn smoothed_l1_is_close_to_l1() {
        let ds = data(300, 20, GlmFamily::Linear, 6);
        let lambda = 10.0 * ((20f64).ln() / 300.0).sqrt() * 0.2;
        let l1 = fit_l1(&ds, lambda, &SolverConfig::default()).unwrap();
        let sm = fit_smooth(&ds, &Regularizer::smoothed_l1(lambda, 100.0), &SolverConfig::default()).unwrap();
        assert!(sm.converged);
        let gap = l1.theta.iter().zip(&sm.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 0.05, "gap {gap}");
    }

    #[test]
    fn wide_problem_uses_woodbury_and_converges() {
        let ds = data(30, 200, GlmFamily::Logistic, 8);
        for reg in [Regularizer::l2(0.05), Regularizer::smoothed_l1(0.05, 100.0)] {
            let fit = fit_smooth(&ds, &reg, &SolverConfig::default()).unwrap();
            assert!(fit.converged, "{:?}", fit.kkt_violation);
            let g = objective_gradient(&ds, &reg, &fit.theta, None).unwrap();
            assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-8);
        }
    }

    #[test]
    fn rejects_l1() {
        let ds = data(10, 2, GlmFamily::Linear, 1);
        assert!(matches!(
            fit_smooth(&ds, &Regularizer::l1(0.1), &SolverConfig::default()),
            Err(Error::NonDifferentiableRegularizer)
        ));
    }
}
