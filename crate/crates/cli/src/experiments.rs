//! Experiment orchestration. Grid cells run in a fixed order; LOO folds are
//! spread over a bounded rayon pool. A failing cell is recorded in the report
//! and the remaining cells still run.

use std::time::Instant;

use aloo_core::approx::{aloo_estimate, ij_full, ij_restricted, ns_full, ns_restricted, percent_error};
use aloo_core::audit::{audit, AuditInput};
use aloo_core::exact::{assemble_exact, assemble_subsampled, sample_folds, ExactLoo, LooRefitter, LooSet};
use aloo_core::linalg::{norm2, sub};
use aloo_core::lissa::{ij_full_lissa, ij_full_lissa_rows, LissaConfig};
use aloo_core::{
    fit_l1, fit_smooth, gen_design, gen_responses, gen_theta_star, loss_value, support_of, Dataset, FitResult, Penalty,
    Regularizer, SolverConfig,
};
use anyhow::{bail, Context};
use rayon::prelude::*;

use crate::config::{coef_lambda, DataSource, Experiment, ExperimentConfig, Method, RegKind};
use crate::io::load_dataset;
use crate::report::{loglog_slope, AuditBlock, MethodResult, Num, Row, RunReport, NOT_COMPUTED, TIMING_DISABLED};
use crate::seed_of;

/// Folds per row used by subsampled CV when `subsample_k` is unset.
const MATCHED_FOLDS_PER_ROW: f64 = 41.0 / 500.0;
const DEFAULT_LISSA_K: usize = 100;
const DEFAULT_LISSA_M: usize = 10;

pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<RunReport> {
    cfg.validate().map_err(anyhow::Error::msg)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().context("building the worker pool")?;
    // a bad input file fails the whole run rather than every cell
    let file = match &cfg.data {
        DataSource::File { path, format } => Some(load_dataset(path, *format, cfg.family.into())?),
        DataSource::Synthetic { .. } => None,
    };
    let mut ctx = Ctx { cfg, pool, file, report: RunReport::new(cfg.clone()) };
    match cfg.experiment {
        Experiment::Fit => ctx.fit(),
        Experiment::Cv | Experiment::SparseSim => ctx.cv(),
        Experiment::Scaling => ctx.scaling(),
        Experiment::SupportSweep => ctx.support_sweep(),
        Experiment::LambdaSweep => ctx.lambda_sweep(),
        Experiment::LissaFrontier => ctx.lissa_frontier(),
        Experiment::Audit => ctx.audit(),
    }
    let Ctx { mut report, .. } = ctx;
    report.finalize();
    if cfg.experiment == Experiment::Scaling {
        add_scaling_summary(&mut report, cfg);
    }
    Ok(report)
}

/// Synthetic dataset for one cell: design, truth and noise keyed separately
/// so grids over `N` and `D` share nested data.
pub fn synthetic(cfg: &ExperimentConfig, n: usize, d: usize, seed: u64) -> aloo_core::Result<(Dataset, Vec<f64>)> {
    let family = cfg.family.into();
    let x = gen_design(n, d, seed_of!(seed, "design"));
    let theta = gen_theta_star(d, cfg.deff.min(d), cfg.theta.into(), seed_of!(seed, "theta"));
    let y = gen_responses(&x, &theta, family, cfg.noise_sigma, seed_of!(seed, "response", n, d))?;
    Ok((Dataset::new(x, y, family)?, theta))
}

fn matched_k(cfg: &ExperimentConfig, n: usize) -> usize {
    cfg.subsample_k.unwrap_or_else(|| (MATCHED_FOLDS_PER_ROW * n as f64).ceil() as usize).clamp(1, n)
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn full_fit(data: &Dataset, reg: &Regularizer, solver: &SolverConfig) -> aloo_core::Result<FitResult> {
    match reg.kind {
        Penalty::L1 => fit_l1(data, reg.lambda, solver),
        _ => fit_smooth(data, reg, solver),
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    pool: rayon::ThreadPool,
    file: Option<Dataset>,
    report: RunReport,
}

/// Per-dataset state shared by the methods of one cell.
struct Cell<'d> {
    key: String,
    seed: u64,
    data: &'d Dataset,
    lambda: f64,
    /// Appended to method names, e.g. `@fixed`.
    tag: String,
}

impl Ctx<'_> {
    fn wall(&self, s: f64) -> Num {
        if self.cfg.timings {
            Num::of(s)
        } else {
            Num::missing(TIMING_DISABLED)
        }
    }

    fn dataset(&self, seed: u64) -> anyhow::Result<(Dataset, Option<Vec<f64>>)> {
        match (&self.cfg.data, &self.file) {
            (_, Some(data)) => Ok((data.clone(), None)),
            (DataSource::File { .. }, None) => bail!("file data source was not loaded"),
            (DataSource::Synthetic { n, d }, None) => {
                let (data, theta) = synthetic(self.cfg, *n, *d, seed)?;
                Ok((data, Some(theta)))
            }
        }
    }

    fn exact(&self, refitter: &LooRefitter<'_>) -> ExactLoo {
        let folds: Vec<usize> = (0..refitter.data().n()).collect();
        let outcomes = self.pool.install(|| folds.par_iter().map(|&n| (n, refitter.refit(n))).collect());
        assemble_exact(refitter, outcomes)
    }

    fn push(&mut self, cell: &Cell<'_>, method: &str, aloo: Num, loo: Num, pe: Num, wall: Num, sizes: Option<Vec<usize>>) {
        let (n, d, seed) = (cell.data.n(), cell.data.d(), cell.seed);
        let method = &format!("{method}{}", cell.tag);
        for (metric, v) in [("aloo", &aloo), ("loo", &loo), ("percent_error", &pe), ("wall_time_seconds", &wall)] {
            if v.reason.as_deref() != Some(NOT_COMPUTED) {
                self.report.row(method, n, d, metric, v.clone(), seed);
            }
        }
        self.report.results.push(MethodResult {
            cell: cell.key.clone(),
            method: method.to_string(),
            seed,
            n,
            d,
            lambda: cell.lambda,
            aloo,
            loo,
            percent_error: pe,
            wall_time_seconds: wall,
            support_sizes: sizes,
        });
    }

    fn cell_error(&mut self, cell: &str, seed: u64, e: impl std::fmt::Display) {
        self.report.error(cell, Some(seed), e);
    }

    fn fit(&mut self) {
        for &seed in &self.cfg.seeds {
            let key = format!("fit/seed={seed}");
            if let Err(e) = self.fit_cell(seed) {
                self.cell_error(&key, seed, format!("{e:#}"));
            }
        }
    }

    fn fit_cell(&mut self, seed: u64) -> anyhow::Result<()> {
        let (data, _) = self.dataset(seed)?;
        let lambda = self.cfg.lambda.lambda(data.n(), data.d());
        let reg = self.cfg.regularizer(lambda);
        let t = Instant::now();
        let fit = full_fit(&data, &reg, &self.cfg.solver())?;
        let wall = self.wall(secs(t));
        let (n, d) = (data.n(), data.d());
        let r = &mut self.report;
        r.row("fit", n, d, "objective", Num::of(fit.objective_value), seed);
        r.row("fit", n, d, "support_size", Num::of(fit.support.len() as f64), seed);
        r.row("fit", n, d, "kkt_violation", Num::of(fit.kkt_violation), seed);
        r.row("fit", n, d, "iterations", Num::of(fit.iterations as f64), seed);
        r.row("fit", n, d, "lambda", Num::of(lambda), seed);
        r.row("fit", n, d, "wall_time_seconds", wall, seed);
        if !fit.converged {
            r.error(format!("fit/seed={seed}"), Some(seed), "solver did not converge");
        }
        Ok(())
    }

    fn cv(&mut self) {
        for &seed in &self.cfg.seeds {
            let key = format!("{}/seed={seed}", self.cfg.experiment.name());
            if let Err(e) = self.cv_cell(&key, seed) {
                self.cell_error(&key, seed, format!("{e:#}"));
            }
        }
    }

    fn cv_cell(&mut self, key: &str, seed: u64) -> anyhow::Result<()> {
        let (data, _) = self.dataset(seed)?;
        let lambda = self.cfg.lambda.lambda(data.n(), data.d());
        let cell = Cell { key: key.to_string(), seed, data: &data, lambda, tag: String::new() };
        self.evaluate(&cell, self.cfg.exact)?;
        Ok(())
    }

    /// Full fit, optional exact LOO, then every configured method. Returns
    /// the exact LOO when computed.
    fn evaluate(&mut self, cell: &Cell<'_>, run_exact: bool) -> anyhow::Result<Option<ExactLoo>> {
        let data = cell.data;
        let reg = self.cfg.regularizer(cell.lambda);
        let solver = self.cfg.solver();
        let t = Instant::now();
        let refitter = LooRefitter::new(data, &reg, &solver)?;
        let fit_wall = self.wall(secs(t));
        let fit = refitter.full_fit().clone();
        let fit_name = format!("fit{}", cell.tag);
        self.report.row(&fit_name, data.n(), data.d(), "support_size", Num::of(fit.support.len() as f64), cell.seed);
        self.report.row(&fit_name, data.n(), data.d(), "wall_time_seconds", fit_wall, cell.seed);
        let exact = if run_exact {
            let t = Instant::now();
            let ex = self.exact(&refitter);
            let wall = self.wall(secs(t));
            let sizes = ex.set.thetas.values().map(|th| support_of(th).len()).collect();
            let loo = Num::opt(ex.loo, "some folds failed to converge");
            if !ex.failed_folds.is_empty() {
                self.report.error(&cell.key, Some(cell.seed), format!("exact LOO folds failed: {:?}", ex.failed_folds));
            }
            self.push(cell, "exact", Num::not_computed(), loo, Num::not_computed(), wall, Some(sizes));
            Some(ex)
        } else {
            None
        };
        let loo = exact.as_ref().and_then(|e| e.loo);
        for &m in &self.cfg.methods {
            if let Err(e) = self.method(cell, m, &reg, &refitter, loo) {
                self.cell_error(&format!("{}/{}", cell.key, m.name()), cell.seed, format!("{e:#}"));
            }
        }
        Ok(exact)
    }

    fn method(
        &mut self,
        cell: &Cell<'_>,
        m: Method,
        reg: &Regularizer,
        refitter: &LooRefitter<'_>,
        loo: Option<f64>,
    ) -> anyhow::Result<()> {
        let data = cell.data;
        let fit = refitter.full_fit();
        let loo_num = loo.map_or_else(Num::not_computed, Num::of);
        let pe = |aloo: f64| loo.map_or_else(Num::not_computed, |l| Num::from_result(percent_error(aloo, l)));
        if m == Method::SubsampledCv {
            let k = matched_k(self.cfg, data.n());
            let folds = sample_folds(data.n(), k, seed_of!(cell.seed, cell.key.as_str(), "subsample"))?;
            let t = Instant::now();
            let outcomes = self.pool.install(|| folds.par_iter().map(|&n| (n, refitter.refit(n))).collect());
            let sub = assemble_subsampled(refitter, outcomes);
            let wall = self.wall(secs(t));
            let est = sub.estimate.context("subsampled folds failed to converge")?;
            self.push(cell, m.name(), Num::of(est), loo_num, pe(est), wall, None);
            return Ok(());
        }
        let t = Instant::now();
        let set: LooSet = match m {
            Method::NsFull | Method::IjFull => {
                if reg.kind == Penalty::L1 {
                    bail!("{} needs a twice-differentiable regularizer", m.name());
                }
                if m == Method::IjFull { ij_full(data, reg, fit)? } else { ns_full(data, reg, fit)? }
            }
            Method::NsRestricted | Method::IjRestricted => {
                if reg.kind != Penalty::L1 {
                    bail!("{} needs the l1 regularizer", m.name());
                }
                if m == Method::IjRestricted {
                    ij_restricted(data, cell.lambda, fit)?
                } else {
                    ns_restricted(data, cell.lambda, fit)?
                }
            }
            Method::SmoothedIj | Method::SmoothedNs => {
                let sreg = Regularizer::smoothed_l1(cell.lambda, self.cfg.eta);
                let sfit = fit_smooth(data, &sreg, &self.cfg.solver())?;
                if m == Method::SmoothedIj { ij_full(data, &sreg, &sfit)? } else { ns_full(data, &sreg, &sfit)? }
            }
            Method::IjLissa => {
                if reg.kind == Penalty::L1 {
                    bail!("ij_lissa needs a twice-differentiable regularizer");
                }
                let lc = LissaConfig {
                    depth_k: self.cfg.lissa_k.first().copied().unwrap_or(DEFAULT_LISSA_K),
                    repeats_m: self.cfg.lissa_m.first().copied().unwrap_or(DEFAULT_LISSA_M),
                    seed: seed_of!(cell.seed, cell.key.as_str(), "lissa"),
                    ..Default::default()
                };
                ij_full_lissa(data, reg, fit, &lc)?
            }
            Method::SubsampledCv => unreachable!("handled above"),
        };
        let wall = self.wall(secs(t));
        let aloo = aloo_estimate(data, &set)?;
        let sizes = m.name().contains("restricted").then(|| vec![fit.support.len(); data.n()]);
        self.push(cell, m.name(), Num::of(aloo), loo_num, pe(aloo), wall, sizes);
        Ok(())
    }

    fn scaling(&mut self) {
        let arms: Vec<(&str, usize, usize)> = self
            .cfg
            .n_grid
            .iter()
            .map(|&n| ("fixed", n, self.cfg.d_fixed))
            .chain(self.cfg.wide_grid.iter().map(|&n| ("wide", n, (n / 10).max(1))))
            .collect();
        for &seed in &self.cfg.seeds {
            for &(arm, n, d) in &arms {
                let key = format!("scaling/{arm}/N={n}/seed={seed}");
                if let Err(e) = self.scaling_cell(&key, arm, n, d, seed) {
                    self.cell_error(&key, seed, format!("{e:#}"));
                }
            }
        }
    }

    fn scaling_cell(&mut self, key: &str, arm: &str, n: usize, d: usize, seed: u64) -> anyhow::Result<()> {
        let (data, _) = synthetic(self.cfg, n, d, seed_of!(seed, "scaling", arm))?;
        let lambda = self.cfg.lambda.lambda(n, d);
        let cell = Cell { key: key.to_string(), seed, data: &data, lambda, tag: format!("@{arm}") };
        self.evaluate(&cell, true)?;
        Ok(())
    }

    fn support_sweep(&mut self) {
        for &coef in &self.cfg.lambda_coefs {
            for &n in &self.cfg.n_grid {
                for &seed in &self.cfg.seeds {
                    let key = format!("support-sweep/coef={coef}/N={n}/seed={seed}");
                    if let Err(e) = self.support_cell(&key, coef, n, seed) {
                        self.cell_error(&key, seed, format!("{e:#}"));
                    }
                }
            }
        }
    }

    fn support_cell(&mut self, key: &str, coef: f64, n: usize, seed: u64) -> anyhow::Result<()> {
        let d = (n / 10).max(1);
        let (data, theta) = synthetic(self.cfg, n, d, seed)?;
        let lambda = coef_lambda(coef, n, d);
        let reg = self.cfg.regularizer(lambda);
        let t = Instant::now();
        let refitter = LooRefitter::new(&data, &reg, &self.cfg.solver())?;
        let ex = self.exact(&refitter);
        let wall = self.wall(secs(t));
        if !ex.failed_folds.is_empty() {
            bail!("exact LOO folds failed: {:?}", ex.failed_folds);
        }
        let truth = support_of(&theta);
        let supports: Vec<Vec<usize>> = ex.set.thetas.values().map(|th| support_of(th)).collect();
        let sizes: Vec<usize> = supports.iter().map(Vec::len).collect();
        let method = format!("coef={coef}");
        let full = refitter.full_fit().support.len();
        let max = sizes.iter().copied().max().unwrap_or(0);
        let min = sizes.iter().copied().min().unwrap_or(0);
        let exact_match = supports.iter().filter(|s| **s == truth).count() as f64 / sizes.len().max(1) as f64;
        let r = &mut self.report;
        r.row(&method, n, d, "full_support", Num::of(full as f64), seed);
        r.row(&method, n, d, "max_fold_support", Num::of(max as f64), seed);
        r.row(&method, n, d, "min_fold_support", Num::of(min as f64), seed);
        r.row(&method, n, d, "fraction_folds_true_support", Num::of(exact_match), seed);
        r.row(&method, n, d, "lambda", Num::of(lambda), seed);
        r.row(&method, n, d, "wall_time_seconds", wall.clone(), seed);
        r.results.push(MethodResult {
            cell: key.to_string(),
            method: format!("exact@{method}"),
            seed,
            n,
            d,
            lambda,
            aloo: Num::not_computed(),
            loo: Num::opt(ex.loo, "some folds failed to converge"),
            percent_error: Num::not_computed(),
            wall_time_seconds: wall,
            support_sizes: Some(sizes),
        });
        Ok(())
    }

    fn lambda_sweep(&mut self) {
        let n = match self.cfg.data {
            DataSource::Synthetic { n, .. } => n,
            DataSource::File { .. } => {
                self.report.error("lambda-sweep", None, "lambda-sweep needs a synthetic data source");
                return;
            }
        };
        for &d in &self.cfg.d_grid {
            for &seed in &self.cfg.seeds {
                for &coef in &self.cfg.lambda_coefs {
                    let key = format!("lambda-sweep/D={d}/coef={coef}/seed={seed}");
                    if let Err(e) = self.lambda_cell(&key, n, d, coef, seed) {
                        self.cell_error(&key, seed, format!("{e:#}"));
                    }
                }
            }
        }
    }

    fn lambda_cell(&mut self, key: &str, n: usize, d: usize, coef: f64, seed: u64) -> anyhow::Result<()> {
        let (data, theta) = synthetic(self.cfg, n, d, seed)?;
        let lambda = coef_lambda(coef, n, d);
        let family = data.family();
        let tag = format!("@coef={coef}");
        let cell = Cell { key: key.to_string(), seed, data: &data, lambda, tag: tag.clone() };
        self.evaluate(&cell, self.cfg.exact)?;
        let reg = self.cfg.regularizer(lambda);
        let fit = full_fit(&data, &reg, &self.cfg.solver())?;
        let mean_loss = |ds: &Dataset| -> anyhow::Result<f64> {
            let z = ds.x().mul_vec(&fit.theta);
            let mut s = 0.0;
            for (zi, yi) in z.iter().zip(ds.y()) {
                s += loss_value(family, *zi, *yi)?;
            }
            Ok(s / ds.n() as f64)
        };
        let train = mean_loss(&data)?;
        let tx = gen_design(self.cfg.test_n, d, seed_of!(seed, "test-design"));
        let ty = gen_responses(&tx, &theta, family, self.cfg.noise_sigma, seed_of!(seed, "test-response", d))?;
        let test = mean_loss(&Dataset::new(tx, ty, family)?)?;
        self.report.row(&format!("train{tag}"), n, d, "loss", Num::of(train), seed);
        self.report.row(&format!("test{tag}"), n, d, "loss", Num::of(test), seed);
        self.report.row(&format!("fit{tag}"), n, d, "lambda", Num::of(lambda), seed);
        Ok(())
    }

    fn lissa_frontier(&mut self) {
        for &seed in &self.cfg.seeds {
            let key = format!("lissa-frontier/seed={seed}");
            if let Err(e) = self.lissa_cell(&key, seed) {
                self.cell_error(&key, seed, format!("{e:#}"));
            }
        }
    }

    fn lissa_cell(&mut self, key: &str, seed: u64) -> anyhow::Result<()> {
        if self.cfg.reg == RegKind::L1 {
            bail!("lissa-frontier needs a twice-differentiable regularizer");
        }
        let (data, _) = self.dataset(seed)?;
        let (n, d) = (data.n(), data.d());
        let lambda = self.cfg.lambda.lambda(n, d);
        let reg = self.cfg.regularizer(lambda);
        let fit = full_fit(&data, &reg, &self.cfg.solver())?;
        let t = Instant::now();
        let direct = ij_full(&data, &reg, &fit)?;
        let direct_wall = self.wall(secs(t));
        self.report.row("ij_full", n, d, "wall_time_seconds", direct_wall, seed);
        let rows = sample_folds(n, self.cfg.lissa_rows.clamp(1, n), seed_of!(seed, "lissa-rows"))?;
        for &m in &self.cfg.lissa_m {
            for &k in &self.cfg.lissa_k {
                let lc = LissaConfig { depth_k: k, repeats_m: m, seed: seed_of!(seed, "lissa", k, m), ..Default::default() };
                let method = format!("lissa_M={m}_K={k}");
                let t = Instant::now();
                let approx = match ij_full_lissa_rows(&data, &reg, &fit, &lc, &rows) {
                    Ok(a) => a,
                    Err(e) => {
                        self.cell_error(&format!("{key}/{method}"), seed, e);
                        continue;
                    }
                };
                let wall = self.wall(secs(t));
                let errs = relative_solve_errors(&fit.theta, &direct, &approx, &rows);
                let med = crate::report::median(&errs);
                let max = errs.iter().copied().fold(f64::NAN, f64::max);
                self.report.row(&method, n, d, "rel_error_median", Num::opt(med, "no rows"), seed);
                self.report.row(&method, n, d, "rel_error_max", Num::of(max), seed);
                self.report.row(&method, n, d, "wall_time_seconds", wall, seed);
            }
        }
        Ok(())
    }

    fn audit(&mut self) {
        for &seed in &self.cfg.seeds {
            let key = format!("audit/seed={seed}");
            if let Err(e) = self.audit_cell(seed) {
                self.cell_error(&key, seed, format!("{e:#}"));
            }
        }
    }

    fn audit_cell(&mut self, seed: u64) -> anyhow::Result<()> {
        if self.cfg.reg != RegKind::L1 {
            bail!("the audit concerns l1-regularized fits");
        }
        let (data, truth) = self.dataset(seed)?;
        let (n, d) = (data.n(), data.d());
        let lambda = self.cfg.lambda.lambda(n, d);
        let surrogate = truth.is_none();
        let theta_star = match truth {
            Some(t) => t,
            None => fit_l1(&data, lambda, &self.cfg.solver())?.theta,
        };
        let input = AuditInput {
            data: &data,
            s: support_of(&theta_star),
            theta_star,
            lambda,
            alpha: self.cfg.alpha,
            c_x: self.cfg.c_x,
            c_eps: self.cfg.c_eps,
            big_c: self.cfg.big_c,
            surrogate,
            check_supports: self.cfg.exact,
        };
        let rep = audit(&input, &self.cfg.solver())?;
        let block = AuditBlock::new(seed, n, d, lambda, &rep);
        for (metric, v) in [
            ("incoherence_norm", &block.incoherence_norm),
            ("gamma", &block.gamma),
            ("min_eig_loo", &block.min_eig_loo),
            ("lambda_threshold", &block.lambda_threshold),
            ("mj", &block.mj),
        ] {
            self.report.row("audit", n, d, metric, v.clone(), seed);
        }
        self.report.audit.push(block);
        Ok(())
    }
}

/// `‖θ̃_approx − θ̃_direct‖ / ‖θ̃_direct − θ̂‖` per row: the relative error of
/// the inverse-Hessian solve inside IJ.
pub fn relative_solve_errors(theta_hat: &[f64], direct: &LooSet, approx: &LooSet, rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .filter_map(|&n| {
            let a = approx.get(n)?;
            let b = direct.get(n)?;
            let step = norm2(&sub(b, theta_hat));
            (step > 0.0).then(|| norm2(&sub(a, b)) / step)
        })
        .collect()
}

/// Log-log slope of each arm's median percent error over `N`, and the
/// wide-to-fixed ratio at the largest `N` shared by both arms.
fn add_scaling_summary(report: &mut RunReport, cfg: &ExperimentConfig) {
    let methods: Vec<String> = cfg.methods.iter().map(|m| m.name().to_string()).collect();
    let mut extra = Vec::new();
    for m in &methods {
        let mut curves = Vec::new();
        for (arm, grid) in [("fixed", &cfg.n_grid), ("wide", &cfg.wide_grid)] {
            let name = format!("{m}@{arm}");
            let pts: Vec<(f64, f64)> = grid
                .iter()
                .filter_map(|&n| report.summary_value(&name, n, "median_percent_error").map(|v| (n as f64, v)))
                .collect();
            let slope = loglog_slope(&pts);
            extra.push(Row {
                method: name,
                n: 0,
                d: 0,
                metric: "loglog_slope_percent_error".into(),
                value: Num::opt(slope, "fewer than two positive medians"),
                seed: None,
            });
            curves.push(pts);
        }
        let shared = cfg.n_grid.iter().filter(|n| cfg.wide_grid.contains(n)).max().copied();
        if let Some(n) = shared {
            let fixed = report.summary_value(&format!("{m}@fixed"), n, "median_percent_error");
            let wide = report.summary_value(&format!("{m}@wide"), n, "median_percent_error");
            let ratio = match (fixed, wide) {
                (Some(f), Some(w)) if f > 0.0 => Num::of(w / f),
                _ => Num::missing("a median is missing or zero"),
            };
            extra.push(Row { method: m.clone(), n, d: 0, metric: "wide_to_fixed_ratio".into(), value: ratio, seed: None });
        }
    }
    report.summary.extend(extra);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Family, LambdaRule};

    fn small(experiment: Experiment) -> ExperimentConfig {
        ExperimentConfig { threads: Some(1), timings: false, ..ExperimentConfig::preset(experiment) }
    }

    #[test]
    fn cv_on_small_l1_logistic() {
        let cfg = ExperimentConfig {
            data: DataSource::Synthetic { n: 60, d: 8 },
            methods: vec![Method::IjRestricted, Method::NsRestricted, Method::SubsampledCv, Method::SmoothedIj],
            lambda: LambdaRule::Coef(0.5),
            exact: true,
            seeds: vec![1, 2],
            ..small(Experiment::Cv)
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        let ij = r.results.iter().find(|m| m.method == "ij_restricted" && m.seed == 1).unwrap();
        assert!(ij.percent_error.value.unwrap() < 0.1);
        assert!(ij.wall_time_seconds.value.is_none());
        assert!(r.results.iter().any(|m| m.method == "exact"));
    }

    #[test]
    fn skipped_exact_marks_loo_not_computed() {
        let cfg = ExperimentConfig { data: DataSource::Synthetic { n: 40, d: 5 }, exact: false, ..small(Experiment::Cv) };
        let r = run_experiment(&cfg).unwrap();
        let m = &r.results[0];
        assert_eq!(m.loo.reason.as_deref(), Some(NOT_COMPUTED));
        assert_eq!(m.percent_error.reason.as_deref(), Some(NOT_COMPUTED));
    }

    #[test]
    fn cell_errors_are_captured() {
        // full-Hessian methods cannot run with the l1 penalty
        let cfg = ExperimentConfig {
            data: DataSource::Synthetic { n: 30, d: 4 },
            methods: vec![Method::IjFull, Method::IjRestricted],
            ..small(Experiment::Cv)
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.errors.len(), 1);
        assert!(r.results.iter().any(|m| m.method == "ij_restricted"));
    }

    #[test]
    fn scaling_summary_has_slopes() {
        let cfg = ExperimentConfig {
            n_grid: vec![100, 200],
            wide_grid: vec![100, 200],
            seeds: vec![0],
            solver_tol: 1e-10,
            kkt_tol: 1e-10,
            ..small(Experiment::Scaling)
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        let slope = r.summary.iter().find(|s| s.method == "ij_full@fixed" && s.metric == "loglog_slope_percent_error");
        assert!(slope.unwrap().value.value.is_some());
        assert!(r.summary.iter().any(|s| s.metric == "wide_to_fixed_ratio"));
    }

    #[test]
    fn lissa_frontier_runs() {
        let cfg = ExperimentConfig {
            data: DataSource::Synthetic { n: 50, d: 5 },
            lambda: LambdaRule::Absolute(2.0),
            lissa_k: vec![1, 50],
            lissa_m: vec![2],
            lissa_rows: 5,
            ..small(Experiment::LissaFrontier)
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        let deep = r.summary_value("lissa_M=2_K=50", 50, "median_rel_error_median").unwrap();
        let shallow = r.summary_value("lissa_M=2_K=1", 50, "median_rel_error_median").unwrap();
        assert!(deep < shallow);
    }

    #[test]
    fn lambda_sweep_and_audit_run() {
        let cfg = ExperimentConfig {
            data: DataSource::Synthetic { n: 60, d: 10 },
            d_grid: vec![10],
            lambda_coefs: vec![0.5, 1.0],
            test_n: 200,
            ..small(Experiment::LambdaSweep)
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        assert!(r.rows.iter().any(|x| x.method == "test@coef=0.5"));
        assert!(r.rows.iter().any(|x| x.method == "ij_restricted@coef=1"));

        let cfg = ExperimentConfig {
            data: DataSource::Synthetic { n: 400, d: 20 },
            lambda: LambdaRule::Coef(5.0),
            family: Family::Linear,
            ..small(Experiment::Audit)
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.audit.len(), 1);
        assert!(r.audit[0].incoherence_norm.value.is_some());
    }
}
