use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{check_weights, BetaConfig, BetaModel, ParamSamples};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Gaussian};
use crate::rng::ChaCha8Rng;

/// Gaussian mean inference with known covariance:
/// `theta ~ N(mu0, Sigma0)`, `x_n ~ N(theta, Sigma)`.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mu0: DVector<f64>,
    sigma0: DMatrix<f64>,
    sigma0_inv: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    /// `Some` when `Sigma` is diagonal; the Mahalanobis distance is then O(d).
    sigma_inv_diag: Option<Vec<f64>>,
    /// `log((2 pi)^(-d/2) |Sigma|^(-1/2))`, the log of the density's peak.
    log_peak: f64,
}

impl GaussianModel {
    pub fn new(mu0: DVector<f64>, sigma0: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu0.len();
        if d == 0 || sigma0.shape() != (d, d) || sigma.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "prior mean of length {d} with covariances {:?} and {:?}",
                sigma0.shape(),
                sigma.shape()
            )));
        }
        let sigma0_inv = linalg::spd_inverse(&sigma0, "prior covariance")?;
        let sigma_inv = linalg::spd_inverse(&sigma, "likelihood covariance")?;
        let log_det = linalg::log_det_spd(&sigma, "likelihood covariance")?;
        let is_diag = (0..d).all(|i| (0..d).all(|j| i == j || sigma[(i, j)] == 0.0));
        let sigma_inv_diag = is_diag.then(|| (0..d).map(|i| 1.0 / sigma[(i, i)]).collect());
        Ok(Self {
            mu0,
            sigma0,
            sigma0_inv,
            sigma_inv,
            sigma_inv_diag,
            log_peak: -0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * log_det,
        })
    }

    /// `N(0, I)` prior and identity likelihood covariance in `d` dimensions.
    pub fn isotropic(d: usize) -> Result<Self> {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d), DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn prior(&self) -> Gaussian {
        Gaussian { mean: self.mu0.clone(), cov: self.sigma0.clone() }
    }

    fn mahalanobis(&self, x: &[f64], theta: &[f64]) -> f64 {
        match &self.sigma_inv_diag {
            Some(diag) => x
                .iter()
                .zip(theta)
                .zip(diag)
                .map(|((a, b), p)| (a - b) * (a - b) * p)
                .sum(),
            None => {
                let r = DVector::from_iterator(x.len(), x.iter().zip(theta).map(|(a, b)| a - b));
                r.dot(&(&self.sigma_inv * &r))
            }
        }
    }

    pub fn log_density(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.log_peak - 0.5 * self.mahalanobis(x, theta)
    }

    /// The beta-likelihood term (or log-density in classical mode).
    pub fn beta_term(&self, x: &[f64], theta: &[f64], cfg: &BetaConfig) -> f64 {
        let log_p = self.log_density(x, theta);
        if cfg.classical {
            return log_p;
        }
        let b = cfg.beta;
        let d = self.dim() as f64;
        let integral = (b * self.log_peak).exp() * (1.0 + b).powf(-0.5 * d);
        (b * log_p).exp() / b - integral / (1.0 + b)
    }

    /// Conjugate posterior of the weighted dataset:
    /// `cov = (Sigma0^-1 + (sum w) Sigma^-1)^-1`,
    /// `mean = cov (Sigma0^-1 mu0 + Sigma^-1 sum w_n x_n)`.
    pub fn weighted_posterior(&self, ds: &Dataset, w: &[(usize, f64)]) -> Result<Gaussian> {
        if ds.d() != self.dim() {
            return Err(Error::Dimension(format!("data d={} vs model d={}", ds.d(), self.dim())));
        }
        check_weights(w, ds.n())?;
        let d = self.dim();
        let total: f64 = w.iter().map(|&(_, v)| v).sum();
        let mut weighted_sum = DVector::zeros(d);
        for &(i, v) in w {
            if v > 0.0 {
                weighted_sum.axpy(v, &DVector::from_column_slice(ds.row(i)), 1.0);
            }
        }
        let precision = &self.sigma0_inv + &self.sigma_inv * total;
        let cov = linalg::spd_inverse(&precision, "posterior precision")?;
        let mean = &cov * (&self.sigma0_inv * &self.mu0 + &self.sigma_inv * weighted_sum);
        Gaussian::new(mean, cov)
    }
}

impl BetaModel for GaussianModel {
    fn param_dim(&self) -> usize {
        self.dim()
    }

    fn term(&self, ds: &Dataset, n: usize, theta: &[f64], cfg: &BetaConfig) -> f64 {
        self.beta_term(ds.row(n), theta, cfg)
    }

    /// Samples the classical weighted conjugate posterior in both modes.
    fn sample_posterior(
        &self,
        ds: &Dataset,
        w: &[(usize, f64)],
        _cfg: &BetaConfig,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamSamples> {
        let post = self.weighted_posterior(ds, w)?;
        ParamSamples::new(self.dim(), post.sample(count, rng)?)
    }
}
