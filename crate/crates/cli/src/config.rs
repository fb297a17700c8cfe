//! Experiment configuration, read from JSON or assembled from CLI flags.

use std::path::PathBuf;

use aloo_core::{GlmFamily, Regularizer, ThetaMode};
use serde::{Deserialize, Serialize};

use crate::io::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Fit,
    Cv,
    Scaling,
    SparseSim,
    SupportSweep,
    LambdaSweep,
    LissaFrontier,
    Audit,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fit => "fit",
            Experiment::Cv => "cv",
            Experiment::Scaling => "scaling",
            Experiment::SparseSim => "sparse-sim",
            Experiment::SupportSweep => "support-sweep",
            Experiment::LambdaSweep => "lambda-sweep",
            Experiment::LissaFrontier => "lissa-frontier",
            Experiment::Audit => "audit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Logistic,
}

impl From<Family> for GlmFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Linear => GlmFamily::Linear,
            Family::Logistic => GlmFamily::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RegKind {
    L1,
    L2,
    SmoothedL1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ThetaKind {
    Unit,
    Gaussian,
}

impl From<ThetaKind> for ThetaMode {
    fn from(t: ThetaKind) -> Self {
        match t {
            ThetaKind::Unit => ThetaMode::Unit,
            ThetaKind::Gaussian => ThetaMode::Gaussian,
        }
    }
}

/// Approximations a `cv` run can compute. `SubsampledCv` refits `k` random
/// folds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    NsFull,
    IjFull,
    NsRestricted,
    IjRestricted,
    IjLissa,
    SmoothedNs,
    SmoothedIj,
    SubsampledCv,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::NsFull => "ns_full",
            Method::IjFull => "ij_full",
            Method::NsRestricted => "ns_restricted",
            Method::IjRestricted => "ij_restricted",
            Method::IjLissa => "ij_lissa",
            Method::SmoothedNs => "smoothed_ns",
            Method::SmoothedIj => "smoothed_ij",
            Method::SubsampledCv => "subsampled_cv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DataSource {
    File { path: PathBuf, format: Format },
    /// `n`, `d` are used by `fit`, `cv`, `audit` and `lissa-frontier`; grid
    /// experiments take sizes from their grids.
    Synthetic { n: usize, d: usize },
}

/// `λ` itself, or `c·√(log D / N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum LambdaRule {
    Absolute(f64),
    Coef(f64),
}

impl LambdaRule {
    pub fn lambda(self, n: usize, d: usize) -> f64 {
        match self {
            LambdaRule::Absolute(l) => l,
            LambdaRule::Coef(c) => coef_lambda(c, n, d),
        }
    }
}

pub fn coef_lambda(c: f64, n: usize, d: usize) -> f64 {
    c * ((d as f64).ln() / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub data: DataSource,
    pub family: Family,
    pub reg: RegKind,
    /// Sharpness of the smoothed ℓ1 penalty.
    pub eta: f64,
    pub methods: Vec<Method>,
    pub lambda: LambdaRule,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Run exact LOOCV. Grid experiments that need it force it on.
    pub exact: bool,
    /// Worker threads; `None` uses every available core.
    pub threads: Option<usize>,
    /// Record wall times. Off makes reruns byte-identical.
    pub timings: bool,

    pub deff: usize,
    pub theta: ThetaKind,
    pub noise_sigma: f64,
    pub n_grid: Vec<usize>,
    /// Fixed dimension of the scaling experiment's first arm.
    pub d_fixed: usize,
    /// `N` values of the `D = N/10` arm.
    pub wide_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub lambda_coefs: Vec<f64>,
    pub lissa_k: Vec<usize>,
    pub lissa_m: Vec<usize>,
    /// Rows whose IJ solve is compared in the LiSSA frontier.
    pub lissa_rows: usize,
    /// Folds for subsampled CV; `None` matches 41 folds per 500 rows.
    pub subsample_k: Option<usize>,
    pub test_n: usize,
    pub alpha: f64,
    pub c_x: f64,
    pub c_eps: f64,
    pub big_c: f64,
    pub solver_tol: f64,
    pub kkt_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Cv,
            data: DataSource::Synthetic { n: 200, d: 20 },
            family: Family::Logistic,
            reg: RegKind::L1,
            eta: 100.0,
            methods: vec![Method::IjRestricted, Method::NsRestricted],
            lambda: LambdaRule::Coef(1.5),
            seeds: vec![0],
            out: None,
            exact: false,
            threads: None,
            timings: true,
            deff: 5,
            theta: ThetaKind::Unit,
            noise_sigma: aloo_core::synth::DEFAULT_NOISE_SIGMA,
            n_grid: Vec::new(),
            d_fixed: 5,
            wide_grid: Vec::new(),
            d_grid: Vec::new(),
            lambda_coefs: Vec::new(),
            lissa_k: Vec::new(),
            lissa_m: Vec::new(),
            lissa_rows: 20,
            subsample_k: None,
            test_n: 10_000,
            alpha: 0.5,
            c_x: 1.0,
            c_eps: 1.0,
            big_c: 1.0,
            solver_tol: 1e-10,
            kkt_tol: 1e-8,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for one experiment: the standard grids at desk scale.
    pub fn preset(experiment: Experiment) -> Self {
        let base = Self { experiment, ..Self::default() };
        match experiment {
            Experiment::Fit | Experiment::Cv => base,
            Experiment::Scaling => Self {
                family: Family::Logistic,
                reg: RegKind::L2,
                lambda: LambdaRule::Coef(0.1),
                methods: vec![Method::IjFull],
                exact: true,
                deff: 2,
                seeds: (0..5).collect(),
                n_grid: vec![500, 1000, 2000, 4000],
                d_fixed: 5,
                wide_grid: vec![500, 1000, 2000, 4000],
                solver_tol: 1e-12,
                kkt_tol: 1e-12,
                ..base
            },
            Experiment::SparseSim => Self {
                data: DataSource::Synthetic { n: 200, d: 4000 },
                family: Family::Logistic,
                reg: RegKind::L1,
                lambda: LambdaRule::Coef(0.75),
                methods: vec![Method::IjRestricted, Method::NsRestricted, Method::SmoothedIj, Method::SubsampledCv],
                exact: true,
                seeds: (0..10).collect(),
                ..base
            },
            Experiment::SupportSweep => Self {
                family: Family::Linear,
                reg: RegKind::L1,
                methods: Vec::new(),
                exact: true,
                seeds: (0..5).collect(),
                n_grid: vec![1000, 2000, 4000],
                lambda_coefs: vec![10.0, 1.0],
                ..base
            },
            Experiment::LambdaSweep => Self {
                data: DataSource::Synthetic { n: 300, d: 75 },
                family: Family::Logistic,
                reg: RegKind::L1,
                theta: ThetaKind::Gaussian,
                methods: vec![Method::IjRestricted, Method::NsRestricted],
                exact: true,
                d_grid: vec![75, 150],
                lambda_coefs: vec![0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0],
                ..base
            },
            Experiment::LissaFrontier => Self {
                data: DataSource::Synthetic { n: 500, d: 100 },
                family: Family::Logistic,
                reg: RegKind::L2,
                lambda: LambdaRule::Absolute(1.0),
                methods: vec![Method::IjLissa],
                lissa_k: vec![1, 20, 30, 50, 60, 80, 100, 120],
                lissa_m: vec![2, 25],
                ..base
            },
            Experiment::Audit => Self {
                data: DataSource::Synthetic { n: 1000, d: 100 },
                family: Family::Linear,
                reg: RegKind::L1,
                lambda: LambdaRule::Coef(10.0),
                methods: Vec::new(),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.seeds.is_empty() {
            return Err("seeds must be nonempty".into());
        }
        match self.lambda {
            LambdaRule::Coef(c) if !(c > 0.0 && c.is_finite()) => return Err("lambda coefficient must be positive".into()),
            LambdaRule::Absolute(l) if !(l >= 0.0 && l.is_finite()) => return Err("lambda must be nonnegative".into()),
            _ => {}
        }
        if self.lambda_coefs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err("lambda coefficients must be positive".into());
        }
        if !(self.eta > 0.0) {
            return Err("eta must be positive".into());
        }
        if self.threads == Some(0) {
            return Err("threads must be at least 1".into());
        }
        if let DataSource::Synthetic { n, d } = self.data {
            if n == 0 || d == 0 {
                return Err("synthetic n and d must be positive".into());
            }
        }
        if self.n_grid.iter().chain(&self.wide_grid).chain(&self.d_grid).any(|v| *v == 0) {
            return Err("grid sizes must be positive".into());
        }
        Ok(())
    }

    pub fn regularizer(&self, lambda: f64) -> Regularizer {
        match self.reg {
            RegKind::L1 => Regularizer::l1(lambda),
            RegKind::L2 => Regularizer::l2(lambda),
            RegKind::SmoothedL1 => Regularizer::smoothed_l1(lambda, self.eta),
        }
    }

    pub fn solver(&self) -> aloo_core::SolverConfig {
        aloo_core::SolverConfig { tol: self.solver_tol, kkt_tol: self.kkt_tol, ..Default::default() }
    }
}
