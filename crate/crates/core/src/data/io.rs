use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{group_codes, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    /// Two-valued labels, remapped to -1/+1 (smaller value becomes -1).
    Classification,
    Regression,
}

/// Column roles for a CSV table. Every column that is neither the label, a
/// group key nor ignored is a numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_kind")]
    pub kind: LabelKind,
    #[serde(default)]
    pub group_columns: Vec<String>,
    #[serde(default)]
    pub ignore: Vec<String>,
}

fn default_kind() -> LabelKind {
    LabelKind::Classification
}

impl TableSchema {
    pub fn unsupervised() -> Self {
        Self { label: None, kind: LabelKind::Regression, group_columns: vec![], ignore: vec![] }
    }

    pub fn labeled(label: &str, kind: LabelKind) -> Self {
        Self { label: Some(label.to_string()), kind, group_columns: vec![], ignore: vec![] }
    }
}

/// Loads a headed, comma-separated table.
pub fn load_table(path: impl AsRef<Path>, schema: &TableSchema) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_table(&text, schema)
}

pub fn parse_table(text: &str, schema: &TableSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column {name:?} not in header")))
    };
    let label_col = schema.label.as_deref().map(find).transpose()?;
    let group_cols = schema.group_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let ignored = schema.ignore.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|c| Some(*c) != label_col && !group_cols.contains(c) && !ignored.contains(c))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Config("schema leaves no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut keys: Vec<Vec<String>> = Vec::new();
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for &c in &feature_cols {
            features.push(parse_number(&record[c], row, &headers[c])?);
        }
        if let Some(c) = label_col {
            raw_labels.push(parse_number(&record[c], row, &headers[c])?);
        }
        if !group_cols.is_empty() {
            keys.push(group_cols.iter().map(|&c| record[c].trim().to_string()).collect());
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty);
    }

    let mut ds = Dataset::new(n, feature_cols.len(), features)?;
    if label_col.is_some() {
        ds = match schema.kind {
            LabelKind::Regression => ds.with_labels(raw_labels)?,
            LabelKind::Classification => ds.with_class_labels(to_signed_labels(&raw_labels)?)?,
        };
    }
    if !keys.is_empty() {
        ds = ds.with_groups(group_codes(&keys))?;
    }
    Ok(ds)
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse { row, msg: format!("non-numeric value {field:?} in {column}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, msg: format!("non-finite value in {column}") });
    }
    Ok(v)
}

/// Maps a two-valued label column onto -1/+1, smaller value to -1.
/// Columns that already hold only -1/+1 come back unchanged.
fn to_signed_labels(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().all(|&v| v == 1.0 || v == -1.0) {
        return Ok(raw.to_vec());
    }
    let mut values = raw.to_vec();
    values.sort_by(|a, b| a.total_cmp(b));
    values.dedup();
    if values.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "classification label column has {} distinct values",
            values.len()
        )));
    }
    let high = values[1];
    Ok(raw.iter().map(|&v| if v == high { 1.0 } else { -1.0 }).collect())
}

/// Loads sparse `label idx:val idx:val ...` records with 1-based indices.
pub fn load_sparse(path: impl AsRef<Path>, d: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_sparse(&text, d)
}

pub fn parse_sparse(text: &str, d: usize) -> Result<Dataset> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut row = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = lineno + 1;
        let line = line.replace('\u{2212}', "-");
        let mut tokens = line.split_whitespace();
        let label: f64 = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse { row: lineno, msg: "missing or non-numeric label".into() })?;
        labels.push(if label > 0.0 { 1.0 } else { -1.0 });
        let start = features.len();
        features.resize(start + d, 0.0);
        let mut seen = vec![false; d];
        for token in tokens {
            let (idx, val) = token.split_once(':').ok_or_else(|| Error::Parse {
                row: lineno,
                msg: format!("malformed entry {token:?}"),
            })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse { row: lineno, msg: format!("bad index {idx:?}") })?;
            if idx == 0 || idx > d {
                return Err(Error::Parse {
                    row: lineno,
                    msg: format!("index {idx} outside 1..={d}"),
                });
            }
            if std::mem::replace(&mut seen[idx - 1], true) {
                return Err(Error::Parse { row: lineno, msg: format!("duplicate index {idx}") });
            }
            let val: f64 = val
                .parse()
                .map_err(|_| Error::Parse { row: lineno, msg: format!("bad value {val:?}") })?;
            features[start + idx - 1] = val;
        }
        row += 1;
    }
    if row == 0 {
        return Err(Error::Empty);
    }
    Dataset::new(row, d, features)?.with_class_labels(labels)
}
