//! Dataset types and the CSV readers/writers used by the CLI.
//!
//! Feature files are headerless CSV, one sample per row. Label files hold one
//! integer per line. Classes are numbered `1..=C` with no gaps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// An `n x d` matrix of finite feature values, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "feature matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature entry ({}, {}) is not finite",
                i + 1,
                j + 1
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("rows have unequal length".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(values)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_array(self) -> Array2<f64> {
        self.values
    }

    /// Copies the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(0), indices),
        }
    }
}

/// Features plus a class label in `1..=num_classes` for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: FeatureMatrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Every class in `1..=C` must be present, where `C` is the largest label.
    pub fn new(features: FeatureMatrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(Error::Labels(format!(
                "count mismatch: {} labels for {} rows",
                labels.len(),
                features.nrows()
            )));
        }
        let num_classes = validate_labels(&labels)?;
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    /// Like [`LabeledDataset::new`] but with a fixed class count, so that
    /// subsets may leave some classes empty.
    pub fn with_num_classes(
        features: FeatureMatrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(Error::Labels(format!(
                "count mismatch: {} labels for {} rows",
                labels.len(),
                features.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > num_classes) {
            return Err(Error::Labels(format!(
                "label {bad} outside 1..={num_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select_rows(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Same labels, new features. Row counts must agree.
    pub fn with_features(&self, features: FeatureMatrix) -> Result<LabeledDataset> {
        if features.nrows() != self.labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} labels",
                features.nrows(),
                self.labels.len()
            )));
        }
        Ok(LabeledDataset {
            features,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }
}

/// Row indices (0-based) grouped by class. Entry `c - 1` holds the rows of class `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndexSets {
    groups: Vec<Vec<usize>>,
}

impl ClassIndexSets {
    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    /// Rows with label `class` (1-based class id).
    pub fn rows(&self, class: usize) -> &[usize] {
        &self.groups[class - 1]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Group index (0-based) of every row.
    pub fn membership(&self) -> Vec<usize> {
        let n: usize = self.groups.iter().map(Vec::len).sum();
        let mut out = vec![0; n];
        for (g, rows) in self.groups.iter().enumerate() {
            for &r in rows {
                out[r] = g;
            }
        }
        out
    }
}

/// Partitions row indices by label. Classes absent from `labels` get an empty list.
pub fn class_index_sets(labels: &[usize], num_classes: usize) -> Result<ClassIndexSets> {
    let mut groups = vec![Vec::new(); num_classes];
    for (row, &label) in labels.iter().enumerate() {
        if label == 0 || label > num_classes {
            return Err(Error::Labels(format!(
                "label {label} outside 1..={num_classes}"
            )));
        }
        groups[label - 1].push(row);
    }
    Ok(ClassIndexSets { groups })
}

fn validate_labels(labels: &[usize]) -> Result<usize> {
    let max = labels.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::Labels("no positive labels".into()));
    }
    let mut seen = vec![false; max];
    for &l in labels {
        if l == 0 {
            return Err(Error::Labels("label must be positive".into()));
        }
        seen[l - 1] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Labels(format!("class {} absent", missing + 1)));
    }
    Ok(max)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses headerless CSV text. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_features(text: &str, path: &Path) -> Result<FeatureMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let row = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .map_err(|_| parse_err(format!("non-numeric token {tok:?}")))
                    .and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(parse_err(format!("non-finite value {tok:?}")))
                        }
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err(parse_err("ragged row".into())),
            Some(_) => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty file".into(),
        });
    }
    FeatureMatrix::from_rows(&rows)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    parse_features(&read_to_string(path)?, path)
}

/// Parses one integer label per line and checks the count against `num_rows`.
/// Returns the labels and the inferred class count.
pub fn parse_labels(text: &str, num_rows: usize, path: &Path) -> Result<(Vec<usize>, usize)> {
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let value: i64 = tok.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: format!("non-integer label {tok:?}"),
        })?;
        if value <= 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("label {value} must be positive"),
            });
        }
        labels.push(value as usize);
    }
    if labels.len() != num_rows {
        return Err(Error::Labels(format!(
            "count mismatch: {} labels, expected {num_rows}",
            labels.len()
        )));
    }
    let num_classes = validate_labels(&labels)?;
    Ok((labels, num_classes))
}

pub fn load_labels(path: impl AsRef<Path>, num_rows: usize) -> Result<(Vec<usize>, usize)> {
    let path = path.as_ref();
    parse_labels(&read_to_string(path)?, num_rows, path)
}

pub fn load_labeled(features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let x = load_features(features)?;
    let (y, _) = load_labels(labels, x.nrows())?;
    LabeledDataset::new(x, y)
}

/// CSV text with 17 significant digits per value, so reading it back is exact.
pub fn format_matrix(values: ArrayView2<'_, f64>) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for row in values.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, values: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix(values)).map_err(|e| Error::io(path, e))
}

pub fn write_features(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    write_matrix(path, features.view())
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
