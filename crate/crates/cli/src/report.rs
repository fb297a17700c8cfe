//! Run reports: one JSON document plus long-format CSV tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use aloo_core::audit::AuditReport;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const ARTIFACT_VERSION: &str = concat!("aloo-report/1 (aloo-cli ", env!("CARGO_PKG_VERSION"), ")");

pub const NOT_COMPUTED: &str = "not-computed";
pub const TIMING_DISABLED: &str = "timing-disabled";

/// A number that is either finite or absent with a reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Num {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Num {
    pub fn missing(reason: impl Into<String>) -> Self {
        Self { value: None, reason: Some(reason.into()) }
    }

    pub fn not_computed() -> Self {
        Self::missing(NOT_COMPUTED)
    }

    /// Non-finite values become null with reason `non-finite`.
    pub fn of(v: f64) -> Self {
        if v.is_finite() {
            Self { value: Some(v), reason: None }
        } else {
            Self::missing(format!("non-finite ({v})"))
        }
    }

    pub fn from_result<E: std::fmt::Display>(r: Result<f64, E>) -> Self {
        match r {
            Ok(v) => Self::of(v),
            Err(e) => Self::missing(e.to_string()),
        }
    }

    pub fn opt(v: Option<f64>, reason: &str) -> Self {
        v.map_or_else(|| Self::missing(reason), Self::of)
    }
}

/// One approximation (or exact CV) evaluated on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub cell: String,
    pub method: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub aloo: Num,
    pub loo: Num,
    pub percent_error: Num,
    pub wall_time_seconds: Num,
    /// `|supp θ^{\n}|` per left-out row, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_sizes: Option<Vec<usize>>,
}

/// One long-format table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub method: String,
    pub n: usize,
    pub d: usize,
    pub metric: String,
    pub value: Num,
    /// `None` for aggregates over seeds.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub cell: String,
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBlock {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub surrogate_truth: bool,
    pub condition1_holds: Option<bool>,
    pub incoherence_norm: Num,
    pub max_jnd_norm: Num,
    pub gamma: Num,
    pub min_eig_loo: Num,
    pub min_eig_lower_bound: Num,
    pub l_min_over_n: Num,
    pub max_grad_inf_loo: Num,
    pub bounded_gradient_ok: Option<bool>,
    pub beta_min_margin: Num,
    pub lssc_k: Num,
    pub lambda_small_ok: Option<bool>,
    pub lambda_threshold: Num,
    pub mj: Num,
    pub notes: Vec<String>,
}

impl AuditBlock {
    pub fn new(seed: u64, n: usize, d: usize, lambda: f64, r: &AuditReport) -> Self {
        let why = |what: &str| {
            r.notes.iter().find(|s| s.starts_with(what)).cloned().unwrap_or_else(|| NOT_COMPUTED.to_string())
        };
        Self {
            seed,
            n,
            d,
            lambda,
            surrogate_truth: r.surrogate_truth,
            condition1_holds: r.condition1_holds,
            incoherence_norm: Num::opt(r.incoherence_norm, &why("incoherence")),
            max_jnd_norm: Num::opt(r.max_jnd_norm, &why("max_jnd")),
            gamma: Num::opt(r.gamma, &why("max_jnd")),
            min_eig_loo: Num::opt(r.min_eig_loo, &why("min_eig")),
            min_eig_lower_bound: Num::opt(r.min_eig_lower_bound, &why("min_eig")),
            l_min_over_n: Num::opt(r.l_min_over_n, "linear family"),
            max_grad_inf_loo: Num::opt(r.max_grad_inf_loo, &why("bounded_gradient")),
            bounded_gradient_ok: r.bounded_gradient_ok,
            beta_min_margin: Num::opt(r.beta_min_margin, &why("beta_min")),
            lssc_k: Num::of(r.lssc_k),
            lambda_small_ok: r.lambda_small_ok,
            lambda_threshold: Num::opt(r.lambda_threshold, &why("lambda_threshold")),
            mj: Num::opt(r.mj, &why("lambda_threshold")),
            notes: r.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub artifact_version: String,
    /// RFC 3339; the only field allowed to differ between identical runs.
    pub generated_at: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub results: Vec<MethodResult>,
    /// Per-seed rows.
    pub rows: Vec<Row>,
    /// Medians over seeds, plus fitted slopes.
    pub summary: Vec<Row>,
    pub audit: Vec<AuditBlock>,
    pub errors: Vec<CellError>,
}

impl RunReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            artifact_version: ARTIFACT_VERSION.to_string(),
            generated_at: humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string(),
            seeds: config.seeds.clone(),
            config,
            results: Vec::new(),
            rows: Vec::new(),
            summary: Vec::new(),
            audit: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn row(&mut self, method: &str, n: usize, d: usize, metric: &str, value: Num, seed: u64) {
        self.rows.push(Row { method: method.into(), n, d, metric: metric.into(), value, seed: Some(seed) });
    }

    pub fn error(&mut self, cell: impl Into<String>, seed: Option<u64>, e: impl std::fmt::Display) {
        let cell = cell.into();
        log::warn!("{cell}: {e}");
        self.errors.push(CellError { cell, seed, message: e.to_string() });
    }

    /// Sorts everything by (key, seed, n) and adds per-group medians of the
    /// per-seed rows to `summary`.
    pub fn finalize(&mut self) {
        self.results.sort_by(|a, b| (&a.cell, &a.method, a.seed, a.n).cmp(&(&b.cell, &b.method, b.seed, b.n)));
        self.rows.sort_by(|a, b| row_key(a).partial_cmp(&row_key(b)).expect("keys are totally ordered"));
        self.errors.sort_by(|a, b| (&a.cell, a.seed).cmp(&(&b.cell, b.seed)));
        let mut groups: BTreeMap<(String, usize, usize, String), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.n, r.d, r.metric.clone());
            let g = groups.entry(key).or_default();
            if let Some(v) = r.value.value {
                g.push(v);
            }
        }
        let mut medians: Vec<Row> = groups
            .into_iter()
            .map(|((method, n, d, metric), vals)| Row {
                method,
                n,
                d,
                metric: format!("median_{metric}"),
                value: median(&vals).map_or_else(|| Num::missing("no finite per-seed values"), Num::of),
                seed: None,
            })
            .collect();
        medians.append(&mut self.summary);
        medians.sort_by(|a, b| row_key(a).partial_cmp(&row_key(b)).expect("keys are totally ordered"));
        self.summary = medians;
    }

    /// Summary value for `(method, n, metric)`.
    pub fn summary_value(&self, method: &str, n: usize, metric: &str) -> Option<f64> {
        self.summary.iter().find(|r| r.method == method && r.n == n && r.metric == metric).and_then(|r| r.value.value)
    }
}

fn row_key(r: &Row) -> (&str, &str, Option<u64>, usize, usize) {
    (&r.method, &r.metric, r.seed, r.n, r.d)
}

pub fn median(vals: &[f64]) -> Option<f64> {
    if vals.is_empty() {
        return None;
    }
    let mut v = vals.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Least-squares slope of `log y` on `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn rows_csv(rows: &[Row]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "N", "D", "metric", "value", "seed"])?;
    for r in rows {
        let value = r.value.value.map(|v| format!("{v:?}")).unwrap_or_default();
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([r.method.as_str(), &r.n.to_string(), &r.d.to_string(), r.metric.as_str(), &value, &seed])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes `report.json`, `rows.csv` and `summary.csv` into directory `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    fs::write(dir.join("rows.csv"), rows_csv(&report.rows)?)?;
    fs::write(dir.join("summary.csv"), rows_csv(&report.summary)?)?;
    Ok(())
}

pub fn read_report(dir: &Path) -> anyhow::Result<RunReport> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?)
}
