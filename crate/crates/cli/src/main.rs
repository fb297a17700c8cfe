use std::path::PathBuf;
use std::process::ExitCode;

use aloo_cli::config::{DataSource, Experiment, ExperimentConfig, Family, LambdaRule, Method, RegKind};
use aloo_cli::io::{preprocess_rcv1, Format};
use aloo_cli::{emit_report, run_experiment};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aloo", version, about = "Approximate leave-one-out CV experiments for sparse GLMs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit once and report the solution summary.
    Fit(Common),
    /// Exact and approximate LOO on one dataset per seed.
    Cv(Common),
    /// Percent error against N for fixed D and D = N/10.
    Scaling(Common),
    /// Restricted IJ/NS vs smoothing vs subsampled CV, with timings.
    SparseSim(Common),
    /// LOO support sizes across N for two lambda coefficients.
    SupportSweep(Common),
    /// Train, test, LOO and ALOO losses over a lambda grid.
    LambdaSweep(Common),
    /// LiSSA accuracy and time over a (K, M) grid.
    LissaFrontier(Common),
    /// Assumption diagnostics for an l1 fit.
    Audit(Common),
    /// Keep the most frequent features and a seeded sample of documents.
    PreprocessRcv1(Preprocess),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file; synthetic data is used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Libsvm)]
    format: Format,
    /// Synthetic rows.
    #[arg(long)]
    n: Option<usize>,
    /// Synthetic columns.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long, value_enum)]
    reg: Option<RegKind>,
    #[arg(long, conflicts_with = "lambda_coef", allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// c in λ = c·√(log D / N).
    #[arg(long, allow_negative_numbers = true)]
    lambda_coef: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Run exact LOOCV.
    #[arg(long)]
    exact: bool,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory for report.json, rows.csv and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    lambda_coefs: Option<Vec<f64>>,
    /// Leave wall times out so reruns are byte-identical.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct Preprocess {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    features: usize,
    #[arg(long, default_value_t = 5_000)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn build_config(experiment: Experiment, c: Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            cfg.experiment = experiment;
            cfg
        }
        None => ExperimentConfig::preset(experiment),
    };
    if let Some(path) = c.data {
        cfg.data = DataSource::File { path, format: c.format };
    } else if c.n.is_some() || c.d.is_some() {
        let (n0, d0) = match cfg.data {
            DataSource::Synthetic { n, d } => (n, d),
            DataSource::File { .. } => (200, 20),
        };
        cfg.data = DataSource::Synthetic { n: c.n.unwrap_or(n0), d: c.d.unwrap_or(d0) };
    }
    if let Some(f) = c.family {
        cfg.family = f;
    }
    if let Some(r) = c.reg {
        cfg.reg = r;
    }
    if let Some(l) = c.lambda {
        cfg.lambda = LambdaRule::Absolute(l);
    }
    if let Some(k) = c.lambda_coef {
        cfg.lambda = LambdaRule::Coef(k);
    }
    if let Some(e) = c.eta {
        cfg.eta = e;
    }
    if let Some(m) = c.methods {
        cfg.methods = m;
    }
    cfg.exact |= c.exact;
    if let Some(s) = c.seeds {
        cfg.seeds = s;
    }
    if c.out.is_some() {
        cfg.out = c.out;
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    if let Some(g) = c.n_grid {
        cfg.n_grid = g.clone();
        if experiment == Experiment::Scaling {
            cfg.wide_grid = g;
        }
    }
    if let Some(l) = c.lambda_coefs {
        cfg.lambda_coefs = l;
    }
    if c.no_timings {
        cfg.timings = false;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (experiment, common) = match cli.cmd {
        Cmd::PreprocessRcv1(p) => {
            let (docs, feats) = preprocess_rcv1(&p.data, &p.out, p.features, p.docs, p.seed)?;
            println!("{}", serde_json::json!({ "documents": docs, "features": feats, "out": p.out }));
            return Ok(());
        }
        Cmd::Fit(c) => (Experiment::Fit, c),
        Cmd::Cv(c) => (Experiment::Cv, c),
        Cmd::Scaling(c) => (Experiment::Scaling, c),
        Cmd::SparseSim(c) => (Experiment::SparseSim, c),
        Cmd::SupportSweep(c) => (Experiment::SupportSweep, c),
        Cmd::LambdaSweep(c) => (Experiment::LambdaSweep, c),
        Cmd::LissaFrontier(c) => (Experiment::LissaFrontier, c),
        Cmd::Audit(c) => (Experiment::Audit, c),
    };
    let cfg = build_config(experiment, common)?;
    let report = run_experiment(&cfg)?;
    match &cfg.out {
        Some(dir) => {
            emit_report(&report, dir)?;
            println!(
                "{}",
                serde_json::json!({ "out": dir, "results": report.results.len(), "errors": report.errors.len() })
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            println!("{}", serde_json::json!({ "error": { "message": format!("{e:#}"), "causes": chain } }));
            ExitCode::FAILURE
        }
    }
}
