//! Dataset loading (libsvm, CSV), label mapping, normalization and train/test splits.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    /// Labels in {-1, +1}.
    pub y: DVector<f64>,
    pub feature_means: Option<DVector<f64>>,
    pub feature_stds: Option<DVector<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        check_dims("labels vs rows", y.len(), x.nrows())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("features contain NaN or infinite values".into()));
        }
        if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidLabel(v.to_string()));
        }
        Ok(Self { x, y, feature_means: None, feature_stds: None })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            feature_means: self.feature_means.clone(),
            feature_stds: self.feature_stds.clone(),
        }
    }

    /// Appends all-zero feature columns up to `d`. A sparse file whose largest
    /// feature index is below `d` describes exactly these rows.
    pub fn pad_features(&self, d: usize) -> Result<Self> {
        if d < self.d() {
            return Err(Error::DimensionMismatch { what: "feature count vs requested width", left: self.d(), right: d });
        }
        let mut out = self.clone();
        out.x = self.x.clone().resize_horizontally(d, 0.0);
        Ok(out)
    }

    fn has_both_classes(&self) -> bool {
        self.y.iter().any(|&v| v > 0.0) && self.y.iter().any(|&v| v < 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Libsvm,
    Csv,
}

impl DataFormat {
    /// `.csv` files are CSV, everything else is treated as libsvm.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Libsvm,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "libsvm" | "svmlight" => Ok(Self::Libsvm),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidArgument(format!("unknown data format '{other}'"))),
        }
    }
}

/// Explicit raw-label tokens for the two classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub positive: String,
    pub negative: String,
}

impl LabelMap {
    pub fn new(positive: impl Into<String>, negative: impl Into<String>) -> Self {
        Self { positive: positive.into(), negative: negative.into() }
    }
}

impl std::str::FromStr for LabelMap {
    type Err = Error;
    /// `"<positive>,<negative>"`, e.g. `"g,h"` or `"1,2"`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(',') {
            Some((p, n)) if !p.trim().is_empty() && !n.trim().is_empty() => Ok(Self::new(p.trim(), n.trim())),
            _ => Err(Error::InvalidArgument(format!("label map must look like 'pos,neg', got '{s}'"))),
        }
    }
}

fn same_label(token: &str, want: &str) -> bool {
    if token == want {
        return true;
    }
    matches!((token.parse::<f64>(), want.parse::<f64>()), (Ok(a), Ok(b)) if a == b)
}

fn map_label(token: &str, map: Option<&LabelMap>) -> Result<f64> {
    let token = token.trim();
    match map {
        Some(m) if same_label(token, &m.positive) => Ok(1.0),
        Some(m) if same_label(token, &m.negative) => Ok(-1.0),
        Some(_) => Err(Error::InvalidLabel(token.to_string())),
        None => match token.parse::<f64>() {
            Ok(v) if v == 1.0 => Ok(1.0),
            Ok(v) if v == 0.0 || v == -1.0 => Ok(-1.0),
            _ => Err(Error::InvalidLabel(token.to_string())),
        },
    }
}

fn parse_value(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("'{tok}' is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite value '{tok}'") });
    }
    Ok(v)
}

/// Parses "label idx:val ..." lines with 1-based indices; absent entries are zero.
pub fn parse_libsvm<R: Read>(reader: R, label_map: Option<&LabelMap>) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0;
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let label = toks.next().expect("non-empty line has a token");
        labels.push(map_label(label, label_map).map_err(|e| match e {
            Error::InvalidLabel(l) => Error::Parse { line: line_no, msg: format!("unsupported label '{l}'") },
            other => other,
        })?);
        let mut row = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("expected idx:value, got '{tok}'") })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad feature index '{idx}'") })?;
            if idx == 0 {
                return Err(Error::Parse { line: line_no, msg: "feature indices are 1-based".into() });
            }
            d = d.max(idx);
            row.push((idx - 1, parse_value(val, line_no)?));
        }
        rows.push(row);
    }
    let mut x = DMatrix::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            x[(i, j)] = v;
        }
    }
    Dataset::new(x, DVector::from_vec(labels))
}

/// Dense CSV with the label in the last column. A first row that does not parse as
/// numbers is treated as a header.
pub fn parse_csv<R: Read>(reader: R, delimiter: u8, label_map: Option<&LabelMap>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).delimiter(delimiter).trim(csv::Trim::All).from_reader(reader);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 1;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if rec.len() < 2 {
            return Err(Error::Parse { line, msg: "need at least one feature and a label".into() });
        }
        let d = rec.len() - 1;
        if k == 0 && rec.iter().take(d).any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(Error::Parse { line, msg: format!("expected {} columns, found {}", w + 1, d + 1) })
            }
            _ => {}
        }
        for f in rec.iter().take(d) {
            data.push(parse_value(f, line)?);
        }
        labels.push(map_label(&rec[d], label_map).map_err(|e| match e {
            Error::InvalidLabel(l) => Error::Parse { line, msg: format!("unsupported label '{l}'") },
            other => other,
        })?);
    }
    let d = width.unwrap_or(0);
    Dataset::new(DMatrix::from_row_slice(labels.len(), d, &data), DVector::from_vec(labels))
}

pub fn load_dataset(path: &Path, format: DataFormat, label_map: Option<&LabelMap>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    match format {
        DataFormat::Libsvm => parse_libsvm(file, label_map),
        DataFormat::Csv => parse_csv(file, b',', label_map),
    }
}

/// Writes libsvm lines, omitting zero entries; values use shortest round-trip formatting.
pub fn write_libsvm<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    for i in 0..data.n() {
        write!(w, "{}", if data.y[i] > 0.0 { "+1" } else { "-1" })?;
        for j in 0..data.d() {
            let v = data.x[(i, j)];
            if v != 0.0 {
                write!(w, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Per-feature mean and standard deviation (population form). Constant columns get std 1.
pub fn feature_stats(x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows().max(1) as f64;
    let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let stds = DVector::from_iterator(
        x.ncols(),
        x.column_iter().zip(means.iter()).map(|(c, &m)| {
            let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if s > 1e-12 * m.abs().max(1.0) {
                s
            } else {
                1.0
            }
        }),
    );
    (means, stds)
}

pub fn apply_normalization(data: &Dataset, means: &DVector<f64>, stds: &DVector<f64>) -> Result<Dataset> {
    check_dims("feature statistics vs columns", means.len(), data.d())?;
    check_dims("feature statistics vs columns", stds.len(), data.d())?;
    let mut x = data.x.clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.apply(|v| *v = (*v - means[j]) / stds[j]);
    }
    Ok(Dataset { x, y: data.y.clone(), feature_means: Some(means.clone()), feature_stds: Some(stds.clone()) })
}

/// Standardizes `train` with its own statistics and `others` with the same statistics.
pub fn normalize_features(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    if train.n() == 0 {
        return Err(Error::InvalidDataset("cannot normalize with an empty training set".into()));
    }
    let (means, stds) = feature_stats(&train.x);
    let t = apply_normalization(train, &means, &stds)?;
    let o = others.iter().map(|d| apply_normalization(d, &means, &stds)).collect::<Result<Vec<_>>>()?;
    Ok((t, o))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: 0.2, seed: 0 }
    }
}

/// Seeded shuffle, then floor(n·fraction) test rows (at least one, at most n − 1).
pub fn train_test_split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidDataset(format!("need at least 2 rows to split, got {n}")));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("test fraction must lie in (0, 1), got {}", spec.test_fraction)));
    }
    if !data.has_both_classes() {
        return Err(Error::InvalidDataset("data contains a single class".into()));
    }
    let n_test = ((n as f64 * spec.test_fraction).floor() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..10 {
        idx.shuffle(&mut rng);
        let train = data.subset(&idx[n_test..]);
        if train.has_both_classes() {
            return Ok((train, data.subset(&idx[..n_test])));
        }
    }
    Err(Error::InvalidDataset("training part lacks a class after 10 reshuffles".into()))
}
