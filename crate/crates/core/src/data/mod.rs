//! Datasets: loading, preprocessing, splitting, grouping and deliberate
//! contamination.

mod contaminate;
mod io;
mod preprocess;
pub mod synthetic;

pub use contaminate::{
    contaminate_gaussian_shift, contaminate_groups, contaminate_minibatches,
    contaminate_supervised,
};
pub use io::{load_sparse, load_table, parse_sparse, parse_table, LabelKind, TableSchema};
pub use preprocess::{
    assign_groups, fit_pca, group_codes, pca_project, split_train_test, standardize,
    standardize_labels, Pca, Standardization,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An `N x d` feature matrix with optional labels, group ids and a
/// ground-truth outlier mask.
///
/// Features are stored row-major. A dataset is never mutated in place: every
/// transformation returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f64>,
    labels: Option<Vec<f64>>,
    group_ids: Option<Vec<usize>>,
    outlier_mask: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, features: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty);
        }
        if d == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one feature".into()));
        }
        if features.len() != n * d {
            return Err(Error::Dimension(format!(
                "expected {} feature values for {n}x{d}, got {}",
                n * d,
                features.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: pos / d + 1,
                msg: "non-finite feature".into(),
            });
        }
        Ok(Self { n, d, features, labels: None, group_ids: None, outlier_mask: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).ok_or(Error::Empty)?;
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Parse { row: bad + 1, msg: format!("expected {d} columns") });
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = m.shape();
        let mut features = Vec::with_capacity(n * d);
        for i in 0..n {
            features.extend(m.row(i).iter());
        }
        Self::new(n, d, features)
    }

    /// Attaches real-valued labels (regression or classification).
    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n
            )));
        }
        if let Some(row) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse { row: row + 1, msg: "non-finite label".into() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attaches classification labels; every label must be -1 or +1.
    pub fn with_class_labels(self, labels: Vec<f64>) -> Result<Self> {
        if let Some(row) = labels.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Parse { row: row + 1, msg: "class label must be -1 or +1".into() });
        }
        self.with_labels(labels)
    }

    pub fn with_groups(mut self, group_ids: Vec<usize>) -> Result<Self> {
        if group_ids.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} group ids for {} rows",
                group_ids.len(),
                self.n
            )));
        }
        self.group_ids = Some(group_ids);
        Ok(self)
    }

    pub fn with_outlier_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n {
            return Err(Error::Dimension(format!("{} mask entries for {} rows", mask.len(), self.n)));
        }
        self.outlier_mask = Some(mask);
        Ok(self)
    }

    pub fn without_outlier_mask(mut self) -> Self {
        self.outlier_mask = None;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<f64> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn require_labels(&self) -> Result<&[f64]> {
        self.labels().ok_or(Error::Missing("labels"))
    }

    pub fn group_ids(&self) -> Option<&[usize]> {
        self.group_ids.as_deref()
    }

    pub fn outlier_mask(&self) -> Option<&[bool]> {
        self.outlier_mask.as_deref()
    }

    pub fn require_mask(&self) -> Result<&[bool]> {
        self.outlier_mask().ok_or(Error::Missing("outlier mask"))
    }

    pub fn has_binary_labels(&self) -> bool {
        self.labels
            .as_ref()
            .is_some_and(|l| l.iter().all(|&v| v == 1.0 || v == -1.0))
    }

    /// Number of distinct group ids, assuming dense codes `0..G`.
    pub fn n_groups(&self) -> Option<usize> {
        self.group_ids.as_ref().map(|g| g.iter().max().map_or(0, |m| m + 1))
    }

    /// Member row indices of each group, indexed by group id.
    pub fn group_members(&self) -> Result<Vec<Vec<usize>>> {
        let ids = self.group_ids().ok_or(Error::Missing("group ids"))?;
        let mut members = vec![Vec::new(); self.n_groups().unwrap_or(0)];
        for (i, &g) in ids.iter().enumerate() {
            members[g].push(i);
        }
        Ok(members)
    }

    /// Rows at `indices`, in that order, with every per-row field carried along.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty);
        }
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidArgument(format!("row {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
        }
        Ok(Self {
            n: indices.len(),
            d: self.d,
            features,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            group_ids: self.group_ids.as_ref().map(|g| indices.iter().map(|&i| g[i]).collect()),
            outlier_mask: self
                .outlier_mask
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i]).collect()),
        })
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.features)
    }

    pub(crate) fn replace_features(mut self, d: usize, features: Vec<f64>) -> Result<Self> {
        let fresh = Self::new(self.n, d, features)?;
        self.d = fresh.d;
        self.features = fresh.features;
        Ok(self)
    }

    pub(crate) fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub(crate) fn labels_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.labels.as_mut()
    }

    /// Number of rows flagged as outliers, 0 when there is no mask.
    pub fn outlier_count(&self) -> usize {
        self.outlier_mask.as_ref().map_or(0, |m| m.iter().filter(|&&b| b).count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(Dataset::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(matches!(Dataset::new(0, 2, vec![]), Err(Error::Empty)));
    }

    #[test]
    fn class_labels_validated() {
        let ds = Dataset::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(ds.clone().with_class_labels(vec![1.0, 0.0]).is_err());
        assert!(ds.with_class_labels(vec![1.0, -1.0]).unwrap().has_binary_labels());
    }

    #[test]
    fn subset_carries_fields() {
        let ds = Dataset::new(3, 1, vec![1.0, 2.0, 3.0])
            .unwrap()
            .with_labels(vec![10.0, 20.0, 30.0])
            .unwrap()
            .with_outlier_mask(vec![false, true, false])
            .unwrap();
        let s = ds.subset(&[2, 1]).unwrap();
        assert_eq!(s.features(), &[3.0, 2.0]);
        assert_eq!(s.labels().unwrap(), &[30.0, 20.0]);
        assert_eq!(s.outlier_mask().unwrap(), &[false, true]);
    }

    #[test]
    fn group_members_by_id() {
        let ds = Dataset::new(4, 1, vec![0.0; 4]).unwrap().with_groups(vec![1, 0, 1, 2]).unwrap();
        assert_eq!(ds.group_members().unwrap(), vec![vec![1], vec![0, 2], vec![3]]);
    }
}
