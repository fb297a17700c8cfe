//! Dataset files: LIBSVM sparse text and headed CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use aloo_core::{CscMatrix, Dataset, Design, GlmFamily};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("label {value} at line {line} is not a binary class label")]
    Label { line: usize, value: f64 },
    #[error(transparent)]
    Data(#[from] aloo_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Libsvm,
    Csv,
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

fn parse_number(tok: &str, line: usize) -> Result<f64, IoError> {
    // accept the Unicode minus sign some exports use
    let t = tok.replace('\u{2212}', "-");
    t.parse::<f64>().map_err(|_| parse_err(line, format!("invalid number {tok:?}")))
}

/// Maps logistic labels onto ±1: `{0, 1}` and `{−1, +1}` are accepted.
fn normalize_labels(y: &mut [f64], lines: &[usize], family: GlmFamily) -> Result<(), IoError> {
    if family != GlmFamily::Logistic {
        return Ok(());
    }
    let zero_one = y.iter().all(|v| *v == 0.0 || *v == 1.0) && y.contains(&0.0);
    for (v, &line) in y.iter_mut().zip(lines) {
        *v = match *v {
            x if zero_one && x == 0.0 => -1.0,
            x if x == 1.0 || x == -1.0 => x,
            x => return Err(IoError::Label { line, value: x }),
        };
    }
    Ok(())
}

pub fn load_dataset(path: &Path, format: Format, family: GlmFamily) -> Result<Dataset, IoError> {
    let text = read(path)?;
    match format {
        Format::Libsvm => parse_libsvm(&text, family, None),
        Format::Csv => parse_csv(&text, family),
    }
}

/// `label idx:val ...` per line, 1-based indices. `n_features` widens the
/// design beyond the largest index seen.
pub fn parse_libsvm(text: &str, family: GlmFamily, n_features: Option<usize>) -> Result<Dataset, IoError> {
    let (triplets, mut y, lines, d) = parse_libsvm_raw(text)?;
    let d = d.max(n_features.unwrap_or(0));
    if y.is_empty() {
        return Err(parse_err(0, "no data rows"));
    }
    if d == 0 {
        return Err(parse_err(lines[0], "no features"));
    }
    normalize_labels(&mut y, &lines, family)?;
    let x = Design::from_sparse_auto(CscMatrix::from_triplets(y.len(), d, &triplets)?);
    Ok(Dataset::new(x, y, family)?)
}

type RawLibsvm = (Vec<(usize, usize, f64)>, Vec<f64>, Vec<usize>, usize);

fn parse_libsvm_raw(text: &str) -> Result<RawLibsvm, IoError> {
    let mut triplets = Vec::new();
    let mut y = Vec::new();
    let mut lines = Vec::new();
    let mut d = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let label = parse_number(toks.next().unwrap_or(""), line)?;
        let row = y.len();
        let mut last = 0;
        for tok in toks {
            let (idx, val) = tok.split_once(':').ok_or_else(|| parse_err(line, format!("expected idx:val, got {tok:?}")))?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx.parse().map_err(|_| parse_err(line, format!("invalid index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_err(line, "indices are 1-based"));
            }
            if idx <= last {
                return Err(parse_err(line, "indices must be strictly increasing"));
            }
            last = idx;
            let v = parse_number(val, line)?;
            d = d.max(idx);
            if v != 0.0 {
                triplets.push((row, idx - 1, v));
            }
        }
        y.push(label);
        lines.push(line);
    }
    Ok((triplets, y, lines, d))
}

/// Header row, then numeric rows whose last column is the response.
pub fn parse_csv(text: &str, family: GlmFamily) -> Result<Dataset, IoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let width = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.len();
    if width < 2 {
        return Err(parse_err(1, "need at least one feature column and a response column"));
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut lines = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, got {}", rec.len())));
        }
        let vals = rec.iter().map(|t| parse_number(t, line)).collect::<Result<Vec<_>, _>>()?;
        y.push(vals[width - 1]);
        rows.push(vals[..width - 1].to_vec());
        lines.push(line);
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no data rows"));
    }
    normalize_labels(&mut y, &lines, family)?;
    Ok(Dataset::new(aloo_core::DenseMatrix::from_rows(&rows), y, family)?)
}

fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    let io = |source| IoError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

/// Shortest round-tripping decimal form.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn to_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for n in 0..data.n() {
        out.push_str(&num(data.y()[n]));
        for j in 0..data.d() {
            let v = data.x().get(n, j);
            if v != 0.0 {
                let _ = write!(out, " {}:{}", j + 1, num(v));
            }
        }
        out.push('\n');
    }
    out
}

pub fn to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..data.d()).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for n in 0..data.n() {
        let row: Vec<String> = (0..data.d()).map(|j| num(data.x().get(n, j))).chain([num(data.y()[n])]).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_dataset(data: &Dataset, path: &Path, format: Format) -> Result<(), IoError> {
    let text = match format {
        Format::Libsvm => to_libsvm(data),
        Format::Csv => to_csv(data),
    };
    write_file(path, &text)
}

/// Keeps the `n_features` columns present in the most documents (ties by
/// lower index, original order preserved) and a seeded sample of `n_docs`
/// rows; writes LIBSVM.
pub fn preprocess_rcv1(input: &Path, output: &Path, n_features: usize, n_docs: usize, seed: u64) -> Result<(usize, usize), IoError> {
    let text = read(input)?;
    let (triplets, y, _, d) = parse_libsvm_raw(&text)?;
    if y.is_empty() {
        return Err(parse_err(0, "no data rows"));
    }
    let mut freq = vec![0usize; d];
    for &(_, c, _) in &triplets {
        freq[c] += 1;
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| freq[*b].cmp(&freq[*a]).then(a.cmp(b)));
    order.truncate(n_features.min(d));
    order.sort_unstable();
    let remap: BTreeMap<usize, usize> = order.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let docs = aloo_core::sample_folds(y.len(), n_docs.min(y.len()), seed)?;
    let mut rows: BTreeMap<usize, Vec<(usize, f64)>> = docs.iter().map(|&r| (r, Vec::new())).collect();
    for &(r, c, v) in &triplets {
        if let (Some(row), Some(&nc)) = (rows.get_mut(&r), remap.get(&c)) {
            row.push((nc, v));
        }
    }
    let mut out = String::new();
    for (r, feats) in &rows {
        out.push_str(&num(y[*r]));
        for (c, v) in feats {
            let _ = write!(out, " {}:{}", c + 1, num(*v));
        }
        out.push('\n');
    }
    write_file(output, &out)?;
    Ok((rows.len(), order.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn libsvm_example() {
        let ds = parse_libsvm("+1 3:0.5\n\u{2212}1 1:2.0\n", GlmFamily::Logistic, None).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 3));
        assert_eq!(ds.x().get(0, 2), 0.5);
        assert_eq!(ds.x().get(1, 0), 2.0);
        assert_eq!(ds.y(), &[1.0, -1.0]);
    }

    #[test]
    fn zero_one_labels_become_signed() {
        let ds = parse_libsvm("1 1:1\n0 2:1\n", GlmFamily::Logistic, Some(5)).unwrap();
        assert_eq!(ds.y(), &[1.0, -1.0]);
        assert_eq!(ds.d(), 5);
        let lin = parse_libsvm("0.5 1:1\n0 2:1\n", GlmFamily::Linear, None).unwrap();
        assert_eq!(lin.y(), &[0.5, 0.0]);
    }

    #[test]
    fn parse_errors_carry_lines() {
        assert!(matches!(parse_libsvm("", GlmFamily::Linear, None), Err(IoError::Parse { .. })));
        assert!(matches!(parse_libsvm("1 1:1\n1 0:2\n", GlmFamily::Linear, None), Err(IoError::Parse { line: 2, .. })));
        assert!(matches!(parse_libsvm("1 2:1 1:1\n", GlmFamily::Linear, None), Err(IoError::Parse { line: 1, .. })));
        assert!(matches!(parse_libsvm("1 1:x\n", GlmFamily::Linear, None), Err(IoError::Parse { line: 1, .. })));
        assert!(matches!(parse_libsvm("1 1:1\n2 1:1\n", GlmFamily::Logistic, None), Err(IoError::Label { line: 2, .. })));
        assert!(matches!(parse_csv("a,y\n1,2\n3\n", GlmFamily::Linear), Err(IoError::Parse { .. })));
        assert!(matches!(parse_csv("", GlmFamily::Linear), Err(IoError::Parse { .. })));
    }

    #[test]
    fn csv_last_column_is_response() {
        let ds = parse_csv("a,b,y\n1,2,3\n4,5,6\n", GlmFamily::Linear).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 2));
        assert_eq!(ds.x().get(1, 1), 5.0);
        assert_eq!(ds.y(), &[3.0, 6.0]);
    }

    #[test]
    fn round_trips_are_bit_identical() {
        let x = aloo_core::gen_design(15, 4, 3);
        let y = aloo_core::gen_responses(&x, &[1.0, 0.0, -0.5, 2.0], GlmFamily::Linear, 1.0, 4).unwrap();
        let ds = Dataset::new(x, y, GlmFamily::Linear).unwrap();
        let back = parse_csv(&to_csv(&ds), GlmFamily::Linear).unwrap();
        let sparse = parse_libsvm(&to_libsvm(&ds), GlmFamily::Linear, Some(4)).unwrap();
        for n in 0..15 {
            assert_eq!(back.y()[n].to_bits(), ds.y()[n].to_bits());
            assert_eq!(sparse.y()[n].to_bits(), ds.y()[n].to_bits());
            for j in 0..4 {
                assert_eq!(back.x().get(n, j).to_bits(), ds.x().get(n, j).to_bits());
                assert_eq!(sparse.x().get(n, j).to_bits(), ds.x().get(n, j).to_bits());
            }
        }
    }

    #[test]
    fn rcv1_subsetting() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.svm");
        let output = dir.path().join("out.svm");
        fs::write(&input, "1 1:1 3:1\n-1 3:2 4:1\n1 2:1 3:1 4:1\n-1 3:1\n").unwrap();
        let (docs, feats) = preprocess_rcv1(&input, &output, 2, 3, 7).unwrap();
        assert_eq!((docs, feats), (3, 2));
        let ds = load_dataset(&output, Format::Libsvm, GlmFamily::Logistic).unwrap();
        assert_eq!(ds.n(), 3);
        assert!(ds.d() <= 2);
        let again = dir.path().join("again.svm");
        preprocess_rcv1(&input, &again, 2, 3, 7).unwrap();
        assert_eq!(fs::read(&output).unwrap(), fs::read(&again).unwrap());
    }
}
