//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A multivariate normal given by mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws `count` samples as rows of a row-major buffer.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let chol = cholesky(&self.cov, "posterior covariance")?;
        Ok(sample_with_factor(&self.mean, &chol.l(), count, rng))
    }
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("{what} is not square")));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m, what)?.inverse();
    Ok(symmetrize(inv))
}

pub fn log_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = cholesky(m, what)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Rows `mean + L z`, `z ~ N(0, I)`.
pub fn sample_with_factor(
    mean: &DVector<f64>,
    lower: &DMatrix<f64>,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let p = mean.len();
    let mut out = Vec::with_capacity(count * p);
    let mut z = DVector::<f64>::zeros(p);
    for _ in 0..count {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let draw = mean + lower * &z;
        out.extend(draw.iter());
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for x in [-30.0, -2.0, 0.0, 1.5, 20.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert_eq!(softplus(1e3), 1e3);
        assert!(softplus(-1e3) >= 0.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        for x in [-800.0, -3.0, 0.0, 0.7, 900.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_spd_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky(&m, "m"), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn gaussian_sampling_moments() {
        let g = Gaussian::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let mut r = rng::stream(3, 0);
        let n = 40_000;
        let xs = g.sample(n, &mut r).unwrap();
        let m0 = xs.chunks(2).map(|c| c[0]).sum::<f64>() / n as f64;
        let m1 = xs.chunks(2).map(|c| c[1]).sum::<f64>() / n as f64;
        let c01 = xs.chunks(2).map(|c| (c[0] - m0) * (c[1] - m1)).sum::<f64>() / n as f64;
        assert!((m0 - 1.0).abs() < 0.04);
        assert!((m1 + 2.0).abs() < 0.03);
        assert!((c01 - 0.5).abs() < 0.05);
    }
}
