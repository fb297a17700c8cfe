use std::fs;
use std::process::Command;

use aloo_cli::config::{DataSource, Experiment, ExperimentConfig, LambdaRule, Method};
use aloo_cli::io::{load_dataset, write_dataset, Format, IoError};
use aloo_cli::report::NOT_COMPUTED;
use aloo_cli::{derive_seed, emit_report, read_report, run_experiment};
use aloo_core::{gen_design, gen_responses, gen_theta_star, Dataset, GlmFamily, ThetaMode};

fn small_cv() -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic { n: 50, d: 6 },
        methods: vec![Method::IjRestricted, Method::NsRestricted, Method::SubsampledCv],
        lambda: LambdaRule::Coef(0.5),
        exact: true,
        seeds: vec![3, 4],
        threads: Some(1),
        timings: false,
        ..ExperimentConfig::preset(Experiment::Cv)
    }
}

fn strip_timestamp(json: &str) -> String {
    json.lines().filter(|l| !l.trim_start().starts_with("\"generated_at\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn libsvm_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.svm");
    fs::write(&p, "+1 3:0.5\n\u{2212}1 1:2.0\n").unwrap();
    let ds = load_dataset(&p, Format::Libsvm, GlmFamily::Logistic).unwrap();
    assert_eq!(ds.n(), 2);
    assert!(ds.d() >= 3);
    assert_eq!(ds.x().get(0, 2), 0.5);
    assert_eq!(ds.y(), &[1.0, -1.0]);
}

#[test]
fn empty_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.svm");
    fs::write(&p, "").unwrap();
    assert!(matches!(load_dataset(&p, Format::Libsvm, GlmFamily::Linear), Err(IoError::Parse { .. })));
    assert!(matches!(load_dataset(&p, Format::Csv, GlmFamily::Linear), Err(IoError::Parse { .. })));
    assert!(matches!(load_dataset(&dir.path().join("missing"), Format::Csv, GlmFamily::Linear), Err(IoError::Io { .. })));
}

#[test]
fn write_then_load_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let x = gen_design(30, 7, 11);
    let t = gen_theta_star(7, 3, ThetaMode::Gaussian, 2);
    let y = gen_responses(&x, &t, GlmFamily::Logistic, 1.0, 5).unwrap();
    let ds = Dataset::new(x, y, GlmFamily::Logistic).unwrap();
    for (format, name) in [(Format::Libsvm, "d.svm"), (Format::Csv, "d.csv")] {
        let p = dir.path().join(name);
        write_dataset(&ds, &p, format).unwrap();
        let back = load_dataset(&p, format, GlmFamily::Logistic).unwrap();
        assert_eq!(back.y(), ds.y());
        for n in 0..30 {
            for j in 0..7 {
                assert_eq!(back.x().get(n, j).to_bits(), ds.x().get(n, j).to_bits());
            }
        }
    }
}

#[test]
fn derive_seed_contract() {
    assert_eq!(derive_seed(9, &[]), 9);
    let a = derive_seed(9, &["cell".into(), 1u64.into()]);
    assert_eq!(a, derive_seed(9, &["cell".into(), 1u64.into()]));
    assert_ne!(a, derive_seed(9, &["cell".into(), 2u64.into()]));
}

#[test]
fn report_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_cv()).unwrap();
    emit_report(&report, dir.path()).unwrap();
    let back = read_report(dir.path()).unwrap();
    assert_eq!(back, report);
    let rows = fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert!(rows.starts_with("method,N,D,metric,value,seed\n"));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("median_percent_error"));
}

#[test]
fn reruns_are_byte_identical_except_timestamp() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&run_experiment(&small_cv()).unwrap(), a.path()).unwrap();
    emit_report(&run_experiment(&small_cv()).unwrap(), b.path()).unwrap();
    for f in ["rows.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let ja = fs::read_to_string(a.path().join("report.json")).unwrap();
    let jb = fs::read_to_string(b.path().join("report.json")).unwrap();
    assert_eq!(strip_timestamp(&ja), strip_timestamp(&jb));
}

#[test]
fn skipped_exact_reports_not_computed() {
    let cfg = ExperimentConfig { exact: false, ..small_cv() };
    let report = run_experiment(&cfg).unwrap();
    let json = serde_json::to_value(&report).unwrap();
    let loo = &json["results"][0]["loo"];
    assert!(loo["value"].is_null());
    assert_eq!(loo["reason"], NOT_COMPUTED);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_aloo");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let ok = Command::new(bin)
        .args(["cv", "--n", "40", "--d", "5", "--exact", "--seeds", "1", "--threads", "1", "--no-timings", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(out.join("report.json").exists());

    let missing = Command::new(bin).args(["fit", "--data"]).arg(dir.path().join("nope.svm")).output().unwrap();
    assert!(!missing.status.success());
    let block: serde_json::Value = serde_json::from_slice(&missing.stdout).unwrap();
    assert!(block["error"]["message"].as_str().unwrap().contains("nope.svm"));

    let bad = Command::new(bin).args(["cv", "--lambda-coef", "-1"]).output().unwrap();
    assert!(!bad.status.success());
    let block: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert!(block["error"]["message"].as_str().unwrap().contains("positive"));
}

#[test]
fn preprocess_subcommand() {
    let bin = env!("CARGO_BIN_EXE_aloo");
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.svm");
    fs::write(&input, "1 1:1 2:1\n-1 2:1\n1 3:4\n").unwrap();
    let out = dir.path().join("o.svm");
    let st = Command::new(bin)
        .args(["preprocess-rcv1", "--features", "1", "--docs", "2", "--data"])
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(st.status.success());
    let ds = load_dataset(&out, Format::Libsvm, GlmFamily::Logistic).unwrap();
    assert_eq!(ds.n(), 2);
}
