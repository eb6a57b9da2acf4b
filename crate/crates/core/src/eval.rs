//! Metrics: Gaussian KL divergences, predictive accuracy, RMSE and the
//! weight mass a summary places on known outliers.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::builder::CoresetState;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Gaussian};
use crate::models::{GaussianModel, LogisticModel, NeuralLinearModel, ParamSamples};

/// `KL(p || q)` between two multivariate normals.
pub fn gaussian_kl(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(Error::Dimension(format!("KL between dimensions {d} and {}", q.dim())));
    }
    let q_chol = linalg::cholesky(&q.cov, "second covariance")?;
    let log_det_p = linalg::log_det_spd(&p.cov, "first covariance")?;
    let log_det_q: f64 = 2.0 * q_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = q_chol.solve(&p.cov).trace();
    let diff = &q.mean - &p.mean;
    let maha = diff.dot(&q_chol.solve(&diff));
    Ok(0.5 * (trace + maha - d as f64 + log_det_q - log_det_p))
}

/// Weights of one on every unmasked row.
pub fn clean_weights(ds: &Dataset) -> Result<Vec<(usize, f64)>> {
    let mask = ds.require_mask()?;
    Ok((0..ds.n()).filter(|&i| !mask[i]).map(|i| (i, 1.0)).collect())
}

/// `KL(coreset posterior || posterior on the unmasked rows)`, both conjugate.
pub fn reverse_kl_vs_clean(w: &[(usize, f64)], model: &GaussianModel, ds: &Dataset) -> Result<f64> {
    let clean = model.weighted_posterior(ds, &clean_weights(ds)?)?;
    let coreset = model.weighted_posterior(ds, w)?;
    gaussian_kl(&coreset, &clean)
}

/// Fraction of test rows whose label maximizes the sample-averaged
/// log-likelihood; equal averages predict `+1`.
pub fn predictive_accuracy(samples: &ParamSamples, test: &Dataset) -> Result<f64> {
    predictive_accuracy_with(samples, test, LogisticModel::log_likelihood)
}

/// [`predictive_accuracy`] under an arbitrary `log_lik(x, y, theta)`.
pub fn predictive_accuracy_with(
    samples: &ParamSamples,
    test: &Dataset,
    log_lik: impl Fn(&[f64], f64, &[f64]) -> f64,
) -> Result<f64> {
    let labels = test.require_labels()?;
    if !test.has_binary_labels() {
        return Err(Error::InvalidArgument("accuracy needs labels in {-1, +1}".into()));
    }
    if samples.dim() != test.d() + 1 {
        return Err(Error::Dimension(format!("samples of dim {} for d={}", samples.dim(), test.d())));
    }
    let s = samples.count() as f64;
    let correct = (0..test.n())
        .filter(|&i| {
            let x = test.row(i);
            let (pos, neg) = samples
                .iter()
                .fold((0.0, 0.0), |(p, n), theta| (p + log_lik(x, 1.0, theta), n + log_lik(x, -1.0, theta)));
            let predicted = if pos / s >= neg / s { 1.0 } else { -1.0 };
            predicted == labels[i]
        })
        .count();
    Ok(correct as f64 / test.n() as f64)
}

pub fn rmse_of(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(Error::Dimension(format!("{} predictions for {} targets", predictions.len(), targets.len())));
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / targets.len() as f64).sqrt())
}

/// Test RMSE of the predictive means.
pub fn rmse(model: &NeuralLinearModel, posterior: &Gaussian, test: &Dataset) -> Result<f64> {
    let targets = test.require_labels()?;
    let predictions: Vec<f64> = test.rows().map(|x| model.blr_predictive(posterior, x).0).collect();
    rmse_of(&predictions, targets)
}

/// Weight mass on masked rows over total weight mass (0 for zero mass).
pub fn outlier_fraction(w: &[(usize, f64)], ds: &Dataset) -> Result<f64> {
    let mask = ds.require_mask()?;
    let total: f64 = w.iter().map(|&(_, v)| v).sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let masked = w.iter().filter(|&&(i, _)| mask[i]).fold(0.0, |acc, &(_, v)| acc + v);
    Ok(masked / total)
}

/// Share of a group summary's weight placed on groups flagged clean.
pub fn clean_group_mass(state: &CoresetState, clean: &[bool]) -> Result<f64> {
    let total = state.total_weight();
    if state.support.iter().any(|&g| g >= clean.len()) {
        return Err(Error::InvalidArgument("group id out of range".into()));
    }
    if total <= 0.0 {
        return Ok(0.0);
    }
    let on_clean = state.pairs().iter().filter(|(g, _)| clean[*g]).fold(0.0, |acc, (_, w)| acc + w);
    Ok(on_clean / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ReverseKl,
    Accuracy,
    /// Accuracy on a clean held-out split used to choose beta.
    ValidationAccuracy,
    Rmse,
    OutlierFraction,
    /// Number of strictly positive weights.
    SupportSize,
    CleanGroupMass,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::ReverseKl => "reverse_kl",
            MetricKind::Accuracy => "accuracy",
            MetricKind::ValidationAccuracy => "validation_accuracy",
            MetricKind::Rmse => "rmse",
            MetricKind::OutlierFraction => "outlier_fraction",
            MetricKind::SupportSize => "support_size",
            MetricKind::CleanGroupMass => "clean_group_mass",
        }
    }
}

/// One row of the metrics CSV. `size` is the iteration count (or subset size
/// for the uniform baseline) at the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub trial: usize,
    pub method: String,
    pub beta: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub size: usize,
    pub metric: MetricKind,
    pub value: f64,
}

pub fn write_metrics<W: Write>(out: W, points: &[MetricPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let rows: std::result::Result<Vec<MetricPoint>, _> = r.deserialize().collect();
    Ok(rows?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn normal(mean: f64, var: f64) -> Gaussian {
        Gaussian { mean: DVector::from_element(1, mean), cov: DMatrix::from_element(1, 1, var) }
    }

    #[test]
    fn kl_of_identical_is_zero() {
        assert!(gaussian_kl(&normal(0.3, 2.0), &normal(0.3, 2.0)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_equal_variance() {
        assert!((gaussian_kl(&normal(0.0, 1.0), &normal(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_non_spd() {
        assert!(gaussian_kl(&normal(0.0, 1.0), &normal(0.0, -1.0)).is_err());
    }

    #[test]
    fn rmse_of_constant_predictor() {
        assert_eq!(rmse_of(&[0.0, 0.0], &[-1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rmse_of(&[0.5, 2.0], &[0.5, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn outlier_mass() {
        let ds = Dataset::new(3, 1, vec![0.0; 3]).unwrap().with_outlier_mask(vec![false, true, true]).unwrap();
        assert_eq!(outlier_fraction(&[(0, 1.0), (1, 3.0)], &ds).unwrap(), 0.75);
        assert_eq!(outlier_fraction(&[(0, 2.0)], &ds).unwrap(), 0.0);
        assert_eq!(outlier_fraction(&[(1, 2.0), (2, 1.0)], &ds).unwrap(), 1.0);
        assert_eq!(outlier_fraction(&[], &ds).unwrap(), 0.0);
        assert!(outlier_fraction(&[], &ds.without_outlier_mask()).is_err());
    }

    #[test]
    fn zero_samples_tie_to_positive() {
        let ds = Dataset::new(4, 1, vec![1.0, -2.0, 0.5, 3.0])
            .unwrap()
            .with_class_labels(vec![1.0, -1.0, 1.0, 1.0])
            .unwrap();
        let samples = ParamSamples::new(2, vec![0.0; 6]).unwrap();
        assert_eq!(predictive_accuracy(&samples, &ds).unwrap(), 0.75);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let points = vec![MetricPoint {
            trial: 2,
            method: "beta-cores".into(),
            beta: 0.1,
            f: 0.3,
            size: 10,
            metric: MetricKind::ReverseKl,
            value: 1.5,
        }];
        let mut buf = Vec::new();
        write_metrics(&mut buf, &points).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("trial,method,beta,F,size,metric,value\n"));
        assert!(text.contains("reverse_kl"));
        assert_eq!(read_metrics(buf.as_slice()).unwrap(), points);
    }
}
