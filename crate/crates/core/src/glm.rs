//! Datasets, GLM families, regularizers, and every loss/objective derivative
//! the solvers and approximations share.
//!
//! The objective is `(1/N) Σ_n f(x_nᵀθ, y_n) + λ R(θ)`. Leaving a row out
//! drops its term but keeps the `1/N` divisor.

use alloc::vec::Vec;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::math;

/// Largest smoothing sharpness accepted; larger values are clamped.
pub const ETA_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlmFamily {
    /// `f(z, y) = ½ (z − y)²`
    Linear,
    /// `f(z, y) = log(1 + e^{−yz})`, `y ∈ {−1, +1}`
    Logistic,
}

impl GlmFamily {
    pub fn name(self) -> &'static str {
        match self {
            GlmFamily::Linear => "linear",
            GlmFamily::Logistic => "logistic",
        }
    }

    fn check_label(self, y: f64) -> bool {
        match self {
            GlmFamily::Linear => y.is_finite(),
            GlmFamily::Logistic => y == 1.0 || y == -1.0,
        }
    }

    #[inline]
    pub(crate) fn value_unchecked(self, z: f64, y: f64) -> f64 {
        match self {
            GlmFamily::Linear => 0.5 * (z - y) * (z - y),
            GlmFamily::Logistic => math::softplus(-y * z),
        }
    }

    #[inline]
    pub(crate) fn d1_d2_unchecked(self, z: f64, y: f64) -> (f64, f64) {
        match self {
            GlmFamily::Linear => (z - y, 1.0),
            GlmFamily::Logistic => (-y * math::sigmoid(-y * z), math::sigmoid_slope(z)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// `‖θ‖₁`
    L1,
    /// `‖θ‖₂²`
    L2,
    /// `(1/η) Σ_d [softplus(ηθ_d) + softplus(−ηθ_d)]`
    SmoothedL1 { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    pub kind: Penalty,
    pub lambda: f64,
}

impl Regularizer {
    pub fn l1(lambda: f64) -> Self {
        Self { kind: Penalty::L1, lambda }
    }

    pub fn l2(lambda: f64) -> Self {
        Self { kind: Penalty::L2, lambda }
    }

    /// Smoothed ℓ1. `eta` above [`ETA_MAX`] is clamped with a warning.
    pub fn smoothed_l1(lambda: f64, eta: f64) -> Self {
        let eta = if eta > ETA_MAX {
            log::warn!("smoothing sharpness {eta} clamped to {ETA_MAX}");
            ETA_MAX
        } else {
            eta
        };
        Self { kind: Penalty::SmoothedL1 { eta }, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if let Penalty::SmoothedL1 { eta } = self.kind {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::invalid("eta must be finite and positive"));
            }
        }
        Ok(())
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, Penalty::L1)
    }

    /// `R(θ)` without the `λ` factor.
    pub fn penalty(&self, theta: &[f64]) -> f64 {
        match self.kind {
            Penalty::L1 => theta.iter().map(|t| math::abs(*t)).sum(),
            Penalty::L2 => theta.iter().map(|t| t * t).sum(),
            Penalty::SmoothedL1 { eta } => {
                theta.iter().map(|t| math::softplus(eta * t) + math::softplus(-eta * t)).sum::<f64>() / eta
            }
        }
    }

    /// `∂R/∂θ_d` (smooth kinds; the subgradient sign for L1).
    #[inline]
    pub fn grad_coord(&self, t: f64) -> f64 {
        match self.kind {
            Penalty::L1 => math::signum(t),
            Penalty::L2 => 2.0 * t,
            Penalty::SmoothedL1 { eta } => math::tanh(0.5 * eta * t),
        }
    }

    /// `∂²R/∂θ_d²` (zero for L1).
    #[inline]
    pub fn curv_coord(&self, t: f64) -> f64 {
        match self.kind {
            Penalty::L1 => 0.0,
            Penalty::L2 => 2.0,
            Penalty::SmoothedL1 { eta } => 2.0 * eta * math::sigmoid_slope(eta * t),
        }
    }

    /// Upper bound on `curv_coord` over all `t`.
    pub fn max_curv(&self) -> f64 {
        match self.kind {
            Penalty::L1 => 0.0,
            Penalty::L2 => 2.0,
            Penalty::SmoothedL1 { eta } => 0.5 * eta,
        }
    }
}

/// `(X, y)` plus the family. Labels are validated once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Design,
    y: Vec<f64>,
    family: GlmFamily,
}

impl Dataset {
    pub fn new(x: impl Into<Design>, y: Vec<f64>, family: GlmFamily) -> Result<Self> {
        let x = x.into();
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::EmptyDataset);
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        for (row, &value) in y.iter().enumerate() {
            if !family.check_label(value) {
                return Err(Error::InvalidLabel { row, value });
            }
        }
        Ok(Self { x, y, family })
    }

    pub fn x(&self) -> &Design {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn family(&self) -> GlmFamily {
        self.family
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// The same rows with only the columns in `cols`.
    pub fn restrict_columns(&self, cols: &[usize]) -> Result<Self> {
        self.check_indices(cols)?;
        Ok(Self { x: self.x.select_columns(cols), y: self.y.clone(), family: self.family })
    }

    pub(crate) fn check_indices(&self, cols: &[usize]) -> Result<()> {
        let d = self.d();
        match cols.iter().find(|&&c| c >= d) {
            Some(&c) => Err(Error::IndexOutOfRange { index: c, len: d }),
            None => Ok(()),
        }
    }

    pub(crate) fn check_exclude(&self, exclude: Option<usize>) -> Result<()> {
        match exclude {
            Some(n) if n >= self.n() => Err(Error::IndexOutOfRange { index: n, len: self.n() }),
            _ => Ok(()),
        }
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: theta.len() });
        }
        Ok(())
    }

    pub(crate) fn loss_at(&self, n: usize, z: f64) -> f64 {
        self.family.value_unchecked(z, self.y[n])
    }

    #[inline]
    pub(crate) fn d1_d2_at(&self, n: usize, z: f64) -> (f64, f64) {
        self.family.d1_d2_unchecked(z, self.y[n])
    }

    /// Per-row `(d1, d2)` at linear predictors `z`.
    pub(crate) fn derivatives(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d1 = Vec::with_capacity(z.len());
        let mut d2 = Vec::with_capacity(z.len());
        for (n, &zn) in z.iter().enumerate() {
            let (a, b) = self.d1_d2_at(n, zn);
            d1.push(a);
            d2.push(b);
        }
        (d1, d2)
    }

    /// `(1/N) Σ_{m ≠ exclude} f_m` at linear predictors `z`.
    pub(crate) fn data_loss(&self, z: &[f64], exclude: Option<usize>) -> f64 {
        let mut s = 0.0;
        for (n, &zn) in z.iter().enumerate() {
            if Some(n) != exclude {
                s += self.loss_at(n, zn);
            }
        }
        s / self.n() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: Vec<f64>,
    /// Sorted indices of the exact nonzeros of `theta`.
    pub support: Vec<usize>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// ℓ1: largest KKT residual. Smooth: gradient 2-norm.
    pub kkt_violation: f64,
    /// Smooth solver: number of Newton systems that had to be replaced by a
    /// gradient step.
    pub gradient_fallbacks: usize,
}

pub fn loss_value(family: GlmFamily, z: f64, y: f64) -> Result<f64> {
    if !family.check_label(y) {
        return Err(Error::InvalidLabel { row: 0, value: y });
    }
    Ok(family.value_unchecked(z, y))
}

/// First and second derivatives of the loss in `z`.
pub fn loss_d1_d2(family: GlmFamily, z: f64, y: f64) -> Result<(f64, f64)> {
    if !family.check_label(y) {
        return Err(Error::InvalidLabel { row: 0, value: y });
    }
    Ok(family.d1_d2_unchecked(z, y))
}

pub fn objective_value(data: &Dataset, reg: &Regularizer, theta: &[f64], exclude: Option<usize>) -> Result<f64> {
    data.check_theta(theta)?;
    data.check_exclude(exclude)?;
    let z = data.x.mul_vec(theta);
    Ok(data.data_loss(&z, exclude) + reg.lambda * reg.penalty(theta))
}

pub fn objective_gradient(
    data: &Dataset,
    reg: &Regularizer,
    theta: &[f64],
    exclude: Option<usize>,
) -> Result<Vec<f64>> {
    if !reg.is_smooth() {
        return Err(Error::NonDifferentiableRegularizer);
    }
    data.check_theta(theta)?;
    data.check_exclude(exclude)?;
    let z = data.x.mul_vec(theta);
    let (mut d1, _) = data.derivatives(&z);
    if let Some(n) = exclude {
        d1[n] = 0.0;
    }
    let inv_n = 1.0 / data.n() as f64;
    let mut g = data.x.tr_mul_vec(&d1);
    for (gd, t) in g.iter_mut().zip(theta) {
        *gd = *gd * inv_n + reg.lambda * reg.grad_coord(*t);
    }
    Ok(g)
}

/// Gradient of the data term only, `(1/N) Σ_{m ≠ exclude} d1_m x_m`.
pub(crate) fn data_gradient(data: &Dataset, theta: &[f64], exclude: Option<usize>) -> Vec<f64> {
    let z = data.x.mul_vec(theta);
    let (mut d1, _) = data.derivatives(&z);
    if let Some(n) = exclude {
        d1[n] = 0.0;
    }
    let inv_n = 1.0 / data.n() as f64;
    let mut g = data.x.tr_mul_vec(&d1);
    g.iter_mut().for_each(|v| *v *= inv_n);
    g
}

/// `(1/N) Σ_{m ≠ exclude} d2_m x_{m,s} x_{m,s}ᵀ`, without regularizer curvature.
pub fn restricted_hessian(data: &Dataset, theta: &[f64], s: &[usize], exclude: Option<usize>) -> Result<DenseMatrix> {
    data.check_theta(theta)?;
    data.check_indices(s)?;
    data.check_exclude(exclude)?;
    if s.is_empty() {
        return Err(Error::invalid("restricted Hessian needs a nonempty index set"));
    }
    let z = data.x.mul_vec(theta);
    let (_, mut d2) = data.derivatives(&z);
    if let Some(n) = exclude {
        d2[n] = 0.0;
    }
    let inv_n = 1.0 / data.n() as f64;
    d2.iter_mut().for_each(|w| *w *= inv_n);
    let xs = data.x.columns(s);
    Ok(Design::Dense(xs).weighted_gram(&d2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn toy(family: GlmFamily) -> Dataset {
        let x = DenseMatrix::from_rows(&[
            vec![1.0, 0.5, -0.3],
            vec![-0.2, 1.5, 0.8],
            vec![0.7, -1.1, 0.4],
            vec![0.3, 0.2, -1.6],
        ]);
        let y = match family {
            GlmFamily::Linear => vec![0.4, -1.2, 2.0, 0.1],
            GlmFamily::Logistic => vec![1.0, -1.0, -1.0, 1.0],
        };
        Dataset::new(x, y, family).unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_value(GlmFamily::Linear, 1.0, 1.0).unwrap(), 0.0);
        assert!((loss_value(GlmFamily::Logistic, 0.0, 1.0).unwrap() - core::f64::consts::LN_2).abs() < 1e-16);
        // log(1 + e^3) from an independent expansion: 3 + log(1 + e^-3)
        let want = 3.0 + (1.0 + (-3.0f64).exp()).ln();
        assert!((loss_value(GlmFamily::Logistic, 3.0, -1.0).unwrap() - want).abs() < 1e-14);
        assert!((want - 3.0486).abs() < 1e-4);
        assert_eq!(loss_d1_d2(GlmFamily::Linear, 2.0, 1.0).unwrap(), (1.0, 1.0));
        assert_eq!(loss_d1_d2(GlmFamily::Logistic, 0.0, 1.0).unwrap(), (-0.5, 0.25));
        assert!(matches!(loss_value(GlmFamily::Logistic, 0.0, 0.0), Err(Error::InvalidLabel { .. })));
        assert!(loss_value(GlmFamily::Logistic, 1e6, -1.0).unwrap().is_finite());
    }

    #[test]
    fn dataset_rejects_bad_labels_and_shapes() {
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert!(matches!(
            Dataset::new(x.clone(), vec![1.0, 0.0], GlmFamily::Logistic),
            Err(Error::InvalidLabel { row: 1, .. })
        ));
        assert!(Dataset::new(x, vec![1.0], GlmFamily::Linear).is_err());
    }

    #[test]
    fn objective_at_zero_is_half_mean_square_plus_constant() {
        let data = toy(GlmFamily::Linear);
        let yy: f64 = data.y().iter().map(|v| v * v).sum::<f64>() / (2.0 * 4.0);
        let zero = [0.0; 3];
        for reg in [Regularizer::l1(0.7), Regularizer::l2(0.7)] {
            assert!((objective_value(&data, &reg, &zero, None).unwrap() - yy).abs() < 1e-15);
        }
        let eta = 50.0;
        let reg = Regularizer::smoothed_l1(0.7, eta);
        let c = 0.7 * 2.0 * 3.0 * core::f64::consts::LN_2 / eta;
        assert!((objective_value(&data, &reg, &zero, None).unwrap() - yy - c).abs() < 1e-14);
    }

    #[test]
    fn ols_objective_equals_residual_sum() {
        // two rows, two columns: exact fit, so the objective is zero
        let x = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let data = Dataset::new(x, vec![5.0, 10.0], GlmFamily::Linear).unwrap();
        let theta = [1.0, 3.0];
        assert_eq!(objective_value(&data, &Regularizer::l2(0.0), &theta, None).unwrap(), 0.0);
    }

    #[test]
    fn exclusion_drops_exactly_one_term() {
        let data = toy(GlmFamily::Logistic);
        let reg = Regularizer::l2(0.3);
        let theta = [0.2, -0.4, 0.9];
        let full = objective_value(&data, &reg, &theta, None).unwrap();
        let g = objective_gradient(&data, &reg, &theta, None).unwrap();
        for n in 0..4 {
            let z = data.x().row_dot(n, &theta);
            let fo = objective_value(&data, &reg, &theta, Some(n)).unwrap();
            assert!((fo + data.loss_at(n, z) / 4.0 - full).abs() <= 1e-12 * full.abs());
            let go = objective_gradient(&data, &reg, &theta, Some(n)).unwrap();
            let (d1, _) = data.d1_d2_at(n, z);
            for d in 0..3 {
                let want = g[d] - d1 * data.x().get(n, d) / 4.0;
                assert!((go[d] - want).abs() < 1e-15);
            }
        }
        assert!(objective_value(&data, &reg, &theta, Some(4)).is_err());
        assert!(matches!(
            objective_gradient(&data, &Regularizer::l1(0.1), &theta, None),
            Err(Error::NonDifferentiableRegularizer)
        ));
    }

    #[test]
    fn restricted_hessian_examples() {
        let data = toy(GlmFamily::Logistic);
        let zero = [0.0; 3];
        let h = restricted_hessian(&data, &zero, &[0, 2], None).unwrap();
        let x = data.x().columns(&[0, 2]);
        let want = x.transpose().matmul(&x);
        for i in 0..2 {
            for j in 0..2 {
                assert!((h.get(i, j) - want.get(i, j) / 16.0).abs() < 1e-15);
            }
        }
        let theta = [0.5, -0.1, 0.2];
        let full = restricted_hessian(&data, &theta, &[1, 2], None).unwrap();
        let ex = restricted_hessian(&data, &theta, &[1, 2], Some(2)).unwrap();
        let (_, d2) = data.d1_d2_at(2, data.x().row_dot(2, &theta));
        let xs = [data.x().get(2, 1), data.x().get(2, 2)];
        for i in 0..2 {
            for j in 0..2 {
                assert!((full.get(i, j) - d2 * xs[i] * xs[j] / 4.0 - ex.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn smoothed_l1_tends_to_l1() {
        let reg = Regularizer::smoothed_l1(1.0, 100.0);
        let theta = [0.1, -0.5, 2.0, -0.1];
        let gap = (reg.penalty(&theta) - Regularizer::l1(1.0).penalty(&theta)).abs();
        assert!(gap <= 4.0 * 2.0 * core::f64::consts::LN_2 / 100.0 + 1e-6);
    }

    #[test]
    fn eta_is_clamped() {
        assert_eq!(Regularizer::smoothed_l1(1.0, 1e9).kind, Penalty::SmoothedL1 { eta: ETA_MAX });
    }

    fn fd_rel_ok(analytic: f64, numeric: f64) -> bool {
        (analytic - numeric).abs() <= 1e-5 * analytic.abs().max(numeric.abs()).max(1e-3)
    }

    proptest! {
        #[test]
        fn logistic_derivative_bounds(z in -800.0f64..800.0, pos in any::<bool>()) {
            let y = if pos { 1.0 } else { -1.0 };
            let (d1, d2) = loss_d1_d2(GlmFamily::Logistic, z, y).unwrap();
            prop_assert!(d1.abs() <= 1.0);
            prop_assert!((0.0..=0.25).contains(&d2));
        }

        #[test]
        fn loss_derivatives_match_finite_differences(z in -8.0f64..8.0, pos in any::<bool>(), yl in -3.0f64..3.0) {
            let h = 1e-5;
            for (fam, y) in [(GlmFamily::Logistic, if pos { 1.0 } else { -1.0 }), (GlmFamily::Linear, yl)] {
                let f = |t: f64| loss_value(fam, t, y).unwrap();
                let (d1, d2) = loss_d1_d2(fam, z, y).unwrap();
                let g = (f(z + h) - f(z - h)) / (2.0 * h);
                prop_assert!((d1 - g).abs() < 1e-6, "d1 {} vs {}", d1, g);
                let dd = |t: f64| loss_d1_d2(fam, t, y).unwrap().0;
                let c = (dd(z + h) - dd(z - h)) / (2.0 * h);
                prop_assert!(fd_rel_ok(d2, c), "d2 {} vs {}", d2, c);
            }
        }

        #[test]
        fn regularizer_derivatives_match_finite_differences(t in -3.0f64..3.0, eta in 0.5f64..30.0) {
            let h = 1e-5;
            for reg in [Regularizer::l2(1.0), Regularizer::smoothed_l1(1.0, eta)] {
                let r = |v: f64| reg.penalty(&[v]);
                let g = (r(t + h) - r(t - h)) / (2.0 * h);
                prop_assert!(fd_rel_ok(reg.grad_coord(t), g));
                let c = (reg.grad_coord(t + h) - reg.grad_coord(t - h)) / (2.0 * h);
                prop_assert!(fd_rel_ok(reg.curv_coord(t), c));
                prop_assert!(reg.curv_coord(t) <= reg.max_curv() + 1e-12);
            }
        }

        #[test]
        fn objective_gradient_matches_finite_differences(
            theta in proptest::collection::vec(-1.5f64..1.5, 3),
            logistic in any::<bool>(),
            exclude in proptest::option::of(0usize..4),
        ) {
            let data = toy(if logistic { GlmFamily::Logistic } else { GlmFamily::Linear });
            let reg = Regularizer::smoothed_l1(0.4, 5.0);
            let g = objective_gradient(&data, &reg, &theta, exclude).unwrap();
            let h = 1e-5;
            for d in 0..3 {
                let mut p = theta.clone();
                p[d] += h;
                let mut m = theta.clone();
                m[d] -= h;
                let num = (objective_value(&data, &reg, &p, exclude).unwrap()
                    - objective_value(&data, &reg, &m, exclude).unwrap()) / (2.0 * h);
                prop_assert!(fd_rel_ok(g[d], num), "coord {}: {} vs {}", d, g[d], num);
            }
            // Hessian of the data term against differences of the gradient
            let all = [0usize, 1, 2];
            let hess = restricted_hessian(&data, &theta, &all, exclude).unwrap();
            let zero = Regularizer::l2(0.0);
            for d in 0..3 {
                let mut p = theta.clone();
                p[d] += h;
                let mut m = theta.clone();
                m[d] -= h;
                let gp = objective_gradient(&data, &zero, &p, exclude).unwrap();
                let gm = objective_gradient(&data, &zero, &m, exclude).unwrap();
                for e in 0..3 {
                    let num = (gp[e] - gm[e]) / (2.0 * h);
                    prop_assert!(fd_rel_ok(hess.get(e, d), num));
                }
            }
        }
    }
}
