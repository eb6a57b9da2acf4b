use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Column means and scales produced by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Applies stored statistics, e.g. train statistics to a test set.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.d() != self.means.len() {
            return Err(Error::Dimension(format!(
                "standardization fitted on {} columns, dataset has {}",
                self.means.len(),
                ds.d()
            )));
        }
        let d = ds.d();
        let mut out = ds.clone();
        for (i, v) in out.features_mut().iter_mut().enumerate() {
            let c = i % d;
            *v = (*v - self.means[c]) / self.scales[c];
        }
        Ok(out)
    }
}

/// Population standard deviation below which a column counts as constant.
const CONSTANT_COLUMN_SD: f64 = 1e-12;

/// Centers each column and divides by its population standard deviation.
/// Constant columns become all zeros with a recorded scale of 1.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardization)> {
    let (n, d) = (ds.n(), ds.d());
    if n < 2 {
        return Err(Error::InvalidArgument("standardize needs at least two rows".into()));
    }
    let mut means = vec![0.0; d];
    for row in ds.rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut vars = vec![0.0; d];
    for row in ds.rows() {
        for c in 0..d {
            vars[c] += (row[c] - means[c]).powi(2);
        }
    }
    let sds: Vec<f64> = vars.iter().map(|v| (v / n as f64).sqrt()).collect();
    let constant: Vec<bool> = sds
        .iter()
        .zip(&means)
        .map(|(&sd, m)| sd <= CONSTANT_COLUMN_SD * m.abs().max(1.0))
        .collect();
    let scales: Vec<f64> = sds.iter().zip(&constant).map(|(&sd, &c)| if c { 1.0 } else { sd }).collect();

    let mut out = ds.clone();
    for (i, v) in out.features_mut().iter_mut().enumerate() {
        let c = i % d;
        *v = if constant[c] { 0.0 } else { (*v - means[c]) / scales[c] };
    }
    Ok((out, Standardization { means, scales }))
}

/// Standardizes regression labels; returns `(mean, scale)`.
pub fn standardize_labels(ds: &Dataset) -> Result<(Dataset, f64, f64)> {
    let labels = ds.require_labels()?;
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let sd = (labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > CONSTANT_COLUMN_SD { sd } else { 1.0 };
    let scaled = labels.iter().map(|y| (y - mean) / scale).collect();
    Ok((ds.clone().with_labels(scaled)?, mean, scale))
}

/// Principal directions of a centered feature matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    pub means: Vec<f64>,
    /// `d x k`, columns in descending eigenvalue order.
    pub components: DMatrix<f64>,
    /// All `d` eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn retained_variance(&self) -> f64 {
        self.eigenvalues[..self.k()].iter().sum()
    }

    pub fn retained_fraction(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            1.0
        } else {
            self.retained_variance() / total
        }
    }

    pub fn project(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.d() != self.means.len() {
            return Err(Error::Dimension("PCA fitted on a different dimension".into()));
        }
        let mut x = ds.to_matrix();
        for mut row in x.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.means) {
                *v -= m;
            }
        }
        let projected = x * &self.components;
        let mut features = Vec::with_capacity(ds.n() * self.k());
        for row in projected.row_iter() {
            features.extend(row.iter());
        }
        ds.clone().replace_features(self.k(), features)
    }
}

pub fn fit_pca(ds: &Dataset, k: usize) -> Result<Pca> {
    let (n, d) = (ds.n(), ds.d());
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("k={k} must lie in 1..={d}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    let mut x = ds.to_matrix();
    let means: Vec<f64> = (0..d).map(|c| x.column(c).mean()).collect();
    for mut row in x.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut components = DMatrix::zeros(d, k);
    for (j, &i) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // Fix the sign so the largest-magnitude loading is positive.
        let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (r, x)| {
            if x.abs() > acc.1 { (r, x.abs()) } else { acc }
        });
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        components.set_column(j, &v);
    }
    Ok(Pca { means, components, eigenvalues })
}

/// Projects onto the top-`k` principal directions.
pub fn pca_project(ds: &Dataset, k: usize) -> Result<(Dataset, Pca)> {
    let pca = fit_pca(ds, k)?;
    Ok((pca.project(ds)?, pca))
}

/// Seeded train/test partition.
///
/// The test set takes `round(test_fraction * N)` rows of a seeded shuffle.
/// With `balanced`, binary labels are required and the test set instead takes
/// `min(target / 2, smallest class size)` rows of each class; every other row
/// goes to the training set.
pub fn split_train_test(
    ds: &Dataset,
    test_fraction: f64,
    balanced: bool,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = ds.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::STREAM_SPLIT));
    let target = (test_fraction * n as f64).round() as usize;

    let mut is_test = vec![false; n];
    if balanced {
        if !ds.has_binary_labels() {
            return Err(Error::InvalidArgument("balanced split needs -1/+1 labels".into()));
        }
        let labels = ds.labels().unwrap();
        let pos = labels.iter().filter(|&&y| y > 0.0).count();
        let neg = n - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::InvalidArgument("balanced split: a class has no members".into()));
        }
        let per_class = (target / 2).min(pos).min(neg);
        let (mut taken_pos, mut taken_neg) = (0, 0);
        for &i in &order {
            let slot = if labels[i] > 0.0 { &mut taken_pos } else { &mut taken_neg };
            if *slot < per_class {
                *slot += 1;
                is_test[i] = true;
            }
        }
    } else {
        for &i in order.iter().take(target) {
            is_test[i] = true;
        }
    }
    let test: Vec<usize> = order.iter().copied().filter(|&i| is_test[i]).collect();
    let train: Vec<usize> = order.iter().copied().filter(|&i| !is_test[i]).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("split leaves an empty side".into()));
    }
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

/// Dense codes `0..G` for key tuples, in order of first appearance.
pub fn group_codes<K: Hash + Eq + Clone>(keys: &[K]) -> Vec<usize> {
    let mut codes = HashMap::new();
    keys.iter()
        .map(|k| {
            let next = codes.len();
            *codes.entry(k.clone()).or_insert(next)
        })
        .collect()
}

/// Groups rows by the exact values of the given feature columns.
pub fn assign_groups(ds: &Dataset, key_columns: &[usize]) -> Result<Dataset> {
    if key_columns.is_empty() {
        return Err(Error::InvalidArgument("no key columns".into()));
    }
    if let Some(&c) = key_columns.iter().find(|&&c| c >= ds.d()) {
        return Err(Error::InvalidArgument(format!("key column {c} out of range")));
    }
    let keys: Vec<Vec<u64>> = ds
        .rows()
        .map(|row| key_columns.iter().map(|&c| canonical_bits(row[c])).collect())
        .collect();
    ds.clone().with_groups(group_codes(&keys))
}

fn canonical_bits(v: f64) -> u64 {
    if v == 0.0 { 0.0f64.to_bits() } else { v.to_bits() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Dataset {
        Dataset::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn two_point_column() {
        let (s, st) = standardize(&column(&[1.0, 3.0])).unwrap();
        assert_eq!(s.features(), &[-1.0, 1.0]);
        assert_eq!(st.means, vec![2.0]);
        assert_eq!(st.scales, vec![1.0]);
    }

    #[test]
    fn constant_column() {
        let (s, st) = standardize(&column(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(s.features(), &[0.0, 0.0, 0.0]);
        assert_eq!(st.scales, vec![1.0]);
    }

    #[test]
    fn standardize_needs_two_rows() {
        assert!(standardize(&column(&[1.0])).is_err());
    }

    #[test]
    fn pca_rank_one() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let (s, _) = standardize(&Dataset::from_rows(&rows).unwrap()).unwrap();
        let (p, pca) = pca_project(&s, 1).unwrap();
        assert_eq!(p.d(), 1);
        assert!((pca.retained_fraction() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_k_bounds() {
        let ds = Dataset::new(3, 2, vec![1.0, 2.0, 3.0, 1.0, 0.0, 5.0]).unwrap();
        assert!(fit_pca(&ds, 3).is_err());
        assert!(fit_pca(&ds, 0).is_err());
        assert!((fit_pca(&ds, 2).unwrap().retained_fraction() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_split_counts() {
        let labels = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
        let ds = Dataset::new(10, 1, (0..10).map(f64::from).collect())
            .unwrap()
            .with_class_labels(labels)
            .unwrap();
        let (train, test) = split_train_test(&ds, 0.4, true, 11).unwrap();
        let pos = test.labels().unwrap().iter().filter(|&&y| y > 0.0).count();
        assert_eq!((pos, test.n() - pos), (2, 2));
        assert_eq!(train.n(), 6);
        let (_, again) = split_train_test(&ds, 0.4, true, 11).unwrap();
        assert_eq!(test, again);
    }

    #[test]
    fn unbalanced_split_size() {
        let ds = column(&(0..10).map(f64::from).collect::<Vec<_>>());
        let (train, test) = split_train_test(&ds, 0.35, false, 1).unwrap();
        assert_eq!(test.n(), 4);
        assert_eq!(train.n(), 6);
        let mut all: Vec<f64> = train.features().iter().chain(test.features()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn balanced_split_needs_both_classes() {
        let ds = column(&[1.0, 2.0, 3.0]).with_class_labels(vec![1.0; 3]).unwrap();
        assert!(split_train_test(&ds, 0.5, true, 0).is_err());
        assert!(split_train_test(&ds, 1.0, false, 0).is_err());
    }

    #[test]
    fn group_codes_first_seen() {
        assert_eq!(group_codes(&["a", "a", "b"]), vec![0, 0, 1]);
        let keys: Vec<(u8, u8)> = (0..2).flat_map(|a| (0..3).map(move |b| (a, b))).collect();
        let codes = group_codes(&keys);
        assert_eq!(codes.iter().max(), Some(&5));
    }

    #[test]
    fn assign_groups_two_keys() {
        let rows: Vec<Vec<f64>> =
            (0..12).map(|i| vec![(i % 2) as f64, (i % 3) as f64, i as f64]).collect();
        let ds = assign_groups(&Dataset::from_rows(&rows).unwrap(), &[0, 1]).unwrap();
        assert_eq!(ds.n_groups(), Some(6));
    }
}
