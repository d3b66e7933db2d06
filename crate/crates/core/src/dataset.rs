//! Labeled binary datasets: loading, standardization and repeated random splits.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retries per repeat before [`make_splits`] gives up on finding a training
/// set that contains both classes.
pub const MAX_SPLIT_ATTEMPTS: usize = 1000;

/// Feature matrix (row-major) with ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    n: usize,
    p: usize,
    labels: Vec<i8>,
    feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    /// Builds a dataset from rows. Requires at least one row, at least one
    /// feature, equal row lengths, finite values and labels in {-1, +1}.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<i8>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no rows".into()));
        }
        let p = rows[0].len();
        let mut features = Vec::with_capacity(n * p);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: p,
                    found: row.len(),
                });
            }
            features.extend(row);
        }
        Self::from_flat(features, n, p, labels)
    }

    pub fn from_flat(features: Vec<f64>, n: usize, p: usize, labels: Vec<i8>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidDataset(format!("need n >= 1 and p >= 1, got n={n}, p={p}")));
        }
        if features.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                found: features.len(),
            });
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&t| t != 1 && t != -1) {
            return Err(Error::InvalidDataset(format!("label {bad} is not -1 or +1")));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value at row {}, column {}",
                pos / p + 1,
                pos % p
            )));
        }
        Ok(Self {
            features,
            n,
            p,
            labels,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                found: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.p)
    }

    pub fn label(&self, i: usize) -> i8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// `(count of +1, count of -1)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&t| t == 1).count();
        (pos, self.n - pos)
    }

    /// Fails with `SingleClass` unless both labels occur.
    pub fn require_both_classes(&self) -> Result<()> {
        match self.class_counts() {
            (0, _) => Err(Error::SingleClass(-1)),
            (_, 0) => Err(Error::SingleClass(1)),
            _ => Ok(()),
        }
    }

    /// Rows selected by `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidParameter(format!("row index {i} out of range (n = {})", self.n)));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        let mut out = Self::from_flat(features, indices.len(), self.p, labels)?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Writes the dataset as CSV with a header; the label is the last column.
    /// Floats use Rust's shortest round-trip representation.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
        let mut header: Vec<String> = match &self.feature_names {
            Some(names) => names.clone(),
            None => (0..self.p).map(|j| format!("x{j}")).collect(),
        };
        header.push("label".into());
        w.write_record(&header).map_err(|e| io_err(e.into()))?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(|e| io_err(e.into()))?;
        }
        w.flush().map_err(io_err)
    }
}

/// Which column of a CSV file holds the label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Libsvm,
}

/// How raw labels were mapped onto {-1, +1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub raw: String,
    pub mapped: i8,
}

/// Provenance of a loaded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub format: DataFormat,
    pub n: usize,
    pub p: usize,
    pub positives: usize,
    pub negatives: usize,
    pub label_mapping: Vec<LabelMapping>,
}

/// Raw label values accepted by the loaders: {-1,+1} as is, then {0,1} and
/// {1,2} with the smaller raw value mapped to +1.
fn map_labels(raw: &[f64], raw_text: &[String]) -> Result<(Vec<i8>, Vec<LabelMapping>)> {
    let distinct: BTreeSet<i64> = raw
        .iter()
        .map(|&v| if v.fract() == 0.0 { v as i64 } else { i64::MIN })
        .collect();
    let not_binary = || {
        let mut seen: Vec<String> = raw_text.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        seen.truncate(16);
        Error::LabelNotBinary(seen)
    };
    let within = |allowed: &[i64]| distinct.iter().all(|v| allowed.contains(v));
    let table: Vec<(i64, i8)> = if within(&[-1, 1]) {
        vec![(1, 1), (-1, -1)]
    } else if within(&[0, 1]) {
        vec![(0, 1), (1, -1)]
    } else if within(&[1, 2]) {
        vec![(1, 1), (2, -1)]
    } else {
        return Err(not_binary());
    };
    let labels = raw
        .iter()
        .map(|&v| {
            table
                .iter()
                .find(|(r, _)| *r as f64 == v)
                .map(|&(_, t)| t)
                .ok_or_else(not_binary)
        })
        .collect::<Result<Vec<_>>>()?;
    let mapping = table
        .iter()
        .filter(|(r, _)| distinct.contains(r))
        .map(|&(r, t)| LabelMapping {
            raw: r.to_string(),
            mapped: t,
        })
        .collect();
    Ok((labels, mapping))
}

fn parse_label(text: &str, row: usize, col: usize) -> Result<f64> {
    text.trim_start_matches('+')
        .parse::<f64>()
        .map_err(|_| Error::UnparsableValue {
            row,
            col,
            value: text.to_string(),
        })
}

fn report_for(data: &LabeledDataset, format: DataFormat, label_mapping: Vec<LabelMapping>) -> LoadReport {
    let (positives, negatives) = data.class_counts();
    LoadReport {
        format,
        n: data.n(),
        p: data.p(),
        positives,
        negatives,
        label_mapping,
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

/// Loads a comma-separated file. Row numbers in errors count data rows from
/// 1 (the header, if any, is not counted); column numbers are 0-based.
pub fn load_csv(path: &Path, label_column: &LabelColumn, has_header: bool) -> Result<(LabeledDataset, LoadReport)> {
    require_file(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;

    let header: Option<Vec<String>> = if has_header {
        let h = reader.headers().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut arity: Option<usize> = header.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = None;
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    let mut raw_text = Vec::new();

    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let expected = *arity.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                row,
                expected,
                found: record.len(),
            });
        }
        let li = match label_idx {
            Some(li) => li,
            None => {
                let li = resolve_label_column(label_column, header.as_deref(), expected)?;
                label_idx = Some(li);
                li
            }
        };
        let mut features = Vec::with_capacity(expected - 1);
        for (col, field) in record.iter().enumerate() {
            if col == li {
                raw_labels.push(parse_label(field, row, col)?);
                raw_text.push(field.to_string());
            } else {
                let v = field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::UnparsableValue {
                    row,
                    col,
                    value: field.to_string(),
                })?;
                features.push(v);
            }
        }
        rows.push(features);
    }

    if rows.len() < 2 {
        return Err(Error::InvalidDataset(format!("need at least 2 rows, found {}", rows.len())));
    }
    if rows[0].is_empty() {
        return Err(Error::InvalidDataset("no feature columns besides the label".into()));
    }
    let (labels, mapping) = map_labels(&raw_labels, &raw_text)?;
    let mut data = LabeledDataset::from_rows(rows, labels)?;
    if let (Some(h), Some(li)) = (header, label_idx) {
        let names = h.into_iter().enumerate().filter(|&(j, _)| j != li).map(|(_, s)| s).collect();
        data = data.with_feature_names(names)?;
    }
    let report = report_for(&data, DataFormat::Csv, mapping);
    Ok((data, report))
}

fn resolve_label_column(label_column: &LabelColumn, header: Option<&[String]>, arity: usize) -> Result<usize> {
    match label_column {
        LabelColumn::Last => Ok(arity - 1),
        LabelColumn::Index(i) if *i < arity => Ok(*i),
        LabelColumn::Index(i) => Err(Error::UnknownLabelColumn(i.to_string())),
        LabelColumn::Name(name) => header
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::UnknownLabelColumn(name.clone())),
    }
}

/// Loads the sparse `label index:value ...` format (1-based indices) into a
/// dense matrix whose width is the largest index seen. Text after `#` is ignored.
pub fn load_libsvm(path: &Path) -> Result<(LabeledDataset, LoadReport)> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut raw_text = Vec::new();
    let mut width = 0usize;

    for line in text.lines() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let row = sparse.len() + 1;
        let mut tokens = content.split_whitespace();
        let label = tokens.next().expect("non-empty line has a token");
        raw_labels.push(parse_label(label, row, 0)?);
        raw_text.push(label.to_string());
        let mut entries = Vec::new();
        for (k, tok) in tokens.enumerate() {
            let bad = || Error::UnparsableValue {
                row,
                col: k + 1,
                value: tok.to_string(),
            };
            let (idx, val) = tok.split_once(':').ok_or_else(bad)?;
            let idx: usize = idx.parse().map_err(|_| bad())?;
            let val: f64 = val.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(bad)?;
            if idx == 0 {
                return Err(bad());
            }
            width = width.max(idx);
            entries.push((idx - 1, val));
        }
        sparse.push(entries);
    }

    if sparse.len() < 2 {
        return Err(Error::InvalidDataset(format!("need at least 2 rows, found {}", sparse.len())));
    }
    if width == 0 {
        return Err(Error::InvalidDataset("no features present".into()));
    }
    let n = sparse.len();
    let mut features = vec![0.0; n * width];
    for (i, entries) in sparse.iter().enumerate() {
        for &(j, v) in entries {
            features[i * width + j] = v;
        }
    }
    let (labels, mapping) = map_labels(&raw_labels, &raw_text)?;
    let data = LabeledDataset::from_flat(features, n, width, labels)?;
    let report = report_for(&data, DataFormat::Libsvm, mapping);
    Ok((data, report))
}

/// Picks the LibSVM reader when the first data line carries `index:value` tokens.
pub fn detect_format(path: &Path) -> Result<DataFormat> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    Ok(match first {
        Some(line) if !line.contains(',') && line.split_whitespace().skip(1).any(|t| t.contains(':')) => DataFormat::Libsvm,
        _ => DataFormat::Csv,
    })
}

/// Loads `path` with the reader chosen by [`detect_format`]. `label_column`
/// and `has_header` apply to CSV input only.
pub fn load_dataset(path: &Path, label_column: &LabelColumn, has_header: bool) -> Result<(LabeledDataset, LoadReport)> {
    match detect_format(path)? {
        DataFormat::Libsvm => load_libsvm(path),
        DataFormat::Csv => load_csv(path, label_column, has_header),
    }
}

/// Per-feature affine map `x -> (x - mean) / sd`; features with zero spread
/// map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Fits means and sample standard deviations (divisor N-1).
    pub fn fit(data: &LabeledDataset) -> Self {
        let (n, p) = (data.n(), data.p());
        let mut mean = vec![0.0; p];
        for row in data.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for row in data.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var
            .into_iter()
            .map(|s| if n > 1 { (s / (n - 1) as f64).sqrt() } else { 0.0 })
            .collect();
        Self { mean, sd }
    }

    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            sd: vec![1.0; p],
        }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn apply(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        if data.p() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: data.p(),
            });
        }
        let features = data.rows().flat_map(|r| self.transform_row(r)).collect();
        let mut out = LabeledDataset::from_flat(features, data.n(), data.p(), data.labels().to_vec())?;
        out.feature_names = data.feature_names.clone();
        Ok(out)
    }
}

/// Fits a [`Standardizer`] on `data` and applies it.
pub fn standardize(data: &LabeledDataset) -> Result<(LabeledDataset, Standardizer)> {
    let s = Standardizer::fit(data);
    Ok((s.apply(data)?, s))
}

/// Repeated random train/test splitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            train_fraction: 0.6,
            repeats: 10,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.train.len(), self.test.len())
    }
}

/// Draws `plan.repeats` uniform (unstratified) splits. Repeat `r` uses an RNG
/// seeded with `seed ^ r`, and redraws until its training part holds both
/// classes. Index lists are returned sorted.
pub fn make_splits(data: &LabeledDataset, plan: &SplitPlan) -> Result<Vec<Split>> {
    let n = data.n();
    if !(plan.train_fraction > 0.0 && plan.train_fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!(
            "train_fraction must lie in (0, 1), got {}",
            plan.train_fraction
        )));
    }
    if plan.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be positive".into()));
    }
    let n_train = (plan.train_fraction * n as f64).round() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::DegenerateSplit(format!(
            "round({} * {n}) = {n_train} leaves no room for a training pair and a test point",
            plan.train_fraction
        )));
    }
    data.require_both_classes()?;

    (0..plan.repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ r as u64);
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..MAX_SPLIT_ATTEMPTS {
                order.shuffle(&mut rng);
                let (train, test) = order.split_at(n_train);
                let has_pos = train.iter().any(|&i| data.label(i) == 1);
                let has_neg = train.iter().any(|&i| data.label(i) == -1);
                if has_pos && has_neg {
                    let mut train = train.to_vec();
                    let mut test = test.to_vec();
                    train.sort_unstable();
                    test.sort_unstable();
                    return Ok(Split { train, test });
                }
            }
            Err(Error::DegenerateSplit(format!(
                "repeat {r}: no training draw of size {n_train} contained both classes after {MAX_SPLIT_ATTEMPTS} attempts"
            )))
        })
        .collect()
}
