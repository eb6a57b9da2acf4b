use nalgebra::{DMatrix, DVector};

use super::laplace::{self, LaplaceFit, LaplaceOptions, LogDensity};
use super::{check_weights, BetaConfig, BetaModel, ParamSamples};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, sigmoid, softplus};
use crate::rng::{self, ChaCha8Rng};

/// Bayesian logistic regression on `z = [x; 1]` with a Gaussian prior over
/// `theta = [weights; bias]`.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    mu0: DVector<f64>,
    sigma0_inv: DMatrix<f64>,
    pub laplace: LaplaceOptions,
}

impl LogisticModel {
    pub fn new(mu0: DVector<f64>, sigma0: DMatrix<f64>) -> Result<Self> {
        let p = mu0.len();
        if p < 2 || sigma0.shape() != (p, p) {
            return Err(Error::Dimension(format!(
                "prior mean of length {p} with covariance {:?}",
                sigma0.shape()
            )));
        }
        let sigma0_inv = linalg::spd_inverse(&sigma0, "prior covariance")?;
        Ok(Self { mu0, sigma0_inv, laplace: LaplaceOptions::default() })
    }

    /// Zero-mean prior with covariance `prior_var * I` for `d` features.
    pub fn isotropic(d: usize, prior_var: f64) -> Result<Self> {
        Self::new(DVector::zeros(d + 1), DMatrix::identity(d + 1, d + 1) * prior_var)
    }

    /// Number of features (the parameter has one more entry, the bias).
    pub fn d(&self) -> usize {
        self.mu0.len() - 1
    }

    /// `z^T theta` with `z = [x; 1]`.
    pub fn score(x: &[f64], theta: &[f64]) -> f64 {
        let d = x.len();
        linalg::dot(x, &theta[..d]) + theta[d]
    }

    /// Term as a function of the score `a = z^T theta`.
    pub fn link_value(a: f64, y: f64, cfg: &BetaConfig) -> f64 {
        if cfg.classical {
            return -softplus(-y * a);
        }
        let b = cfg.beta;
        // -log sigma(a) and -log sigma(-a) from a single softplus.
        let nl_pos = softplus(-a);
        let nl_neg = nl_pos + a;
        let nl_y = if y > 0.0 { nl_pos } else { nl_neg };
        let integral = (-(1.0 + b) * nl_pos).exp() + (-(1.0 + b) * nl_neg).exp();
        (-b * nl_y).exp() / b - integral / (1.0 + b)
    }

    /// Derivative of [`Self::link_value`] with respect to the score.
    pub fn link_derivative(a: f64, y: f64, cfg: &BetaConfig) -> f64 {
        if cfg.classical {
            return y * sigmoid(-y * a);
        }
        let b = cfg.beta;
        let p_beta = (-b * softplus(-y * a)).exp();
        let pos = (-(1.0 + b) * softplus(-a)).exp();
        let neg = (-(1.0 + b) * softplus(a)).exp();
        y * p_beta * sigmoid(-y * a) - pos * sigmoid(-a) + neg * sigmoid(a)
    }

    fn link_second(a: f64, y: f64, cfg: &BetaConfig) -> f64 {
        let h = 1e-5 * (1.0 + a.abs());
        (Self::link_derivative(a + h, y, cfg) - Self::link_derivative(a - h, y, cfg)) / (2.0 * h)
    }

    pub fn beta_term(&self, x: &[f64], y: f64, theta: &[f64], cfg: &BetaConfig) -> f64 {
        Self::link_value(Self::score(x, theta), y, cfg)
    }

    /// Gradient of the term with respect to `theta`.
    pub fn beta_term_grad(&self, x: &[f64], y: f64, theta: &[f64], cfg: &BetaConfig) -> Vec<f64> {
        let g = Self::link_derivative(Self::score(x, theta), y, cfg);
        x.iter().map(|v| g * v).chain(std::iter::once(g)).collect()
    }

    /// `log pi(y | x, theta) = -log(1 + exp(-y z^T theta))`.
    pub fn log_likelihood(x: &[f64], y: f64, theta: &[f64]) -> f64 {
        -softplus(-y * Self::score(x, theta))
    }

    /// Laplace approximation of `log pi0(theta) + sum_n w_n f_n(theta)`.
    pub fn laplace_fit(&self, ds: &Dataset, w: &[(usize, f64)], cfg: &BetaConfig) -> Result<LaplaceFit> {
        if ds.d() != self.d() {
            return Err(Error::Dimension(format!("data d={} vs model d={}", ds.d(), self.d())));
        }
        check_weights(w, ds.n())?;
        let labels = ds.require_labels()?;
        let active: Vec<(usize, f64)> = w.iter().copied().filter(|&(_, v)| v > 0.0).collect();
        let target = Objective { model: self, ds, labels, w: &active, cfg };
        laplace::fit(&target, self.mu0.as_slice(), &self.laplace)
    }

    pub fn laplace_sample(
        &self,
        ds: &Dataset,
        w: &[(usize, f64)],
        cfg: &BetaConfig,
        count: usize,
        seed: u64,
    ) -> Result<ParamSamples> {
        self.sample_posterior(ds, w, cfg, count, &mut rng::stream(seed, rng::STREAM_SAMPLER))
    }
}

struct Objective<'a> {
    model: &'a LogisticModel,
    ds: &'a Dataset,
    labels: &'a [f64],
    w: &'a [(usize, f64)],
    cfg: &'a BetaConfig,
}

impl LogDensity for Objective<'_> {
    fn dim(&self) -> usize {
        self.model.mu0.len()
    }

    fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let t = DVector::from_column_slice(theta);
        let r = &t - &self.model.mu0;
        let prior_grad = -(&self.model.sigma0_inv * &r);
        let mut value = 0.5 * r.dot(&prior_grad);
        let mut grad: Vec<f64> = prior_grad.iter().copied().collect();
        let d = self.model.d();
        for &(i, wi) in self.w {
            let x = self.ds.row(i);
            let a = LogisticModel::score(x, theta);
            let y = self.labels[i];
            value += wi * LogisticModel::link_value(a, y, self.cfg);
            let g = wi * LogisticModel::link_derivative(a, y, self.cfg);
            for (acc, v) in grad[..d].iter_mut().zip(x) {
                *acc += g * v;
            }
            grad[d] += g;
        }
        (value, grad)
    }

    fn direction_hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let d = p - 1;
        let mut h = -self.model.sigma0_inv.clone();
        let mut z = vec![1.0; p];
        for &(i, wi) in self.w {
            let x = self.ds.row(i);
            z[..d].copy_from_slice(x);
            let c = wi * LogisticModel::link_second(LogisticModel::score(x, theta), self.labels[i], self.cfg);
            for r in 0..p {
                for s in 0..p {
                    h[(r, s)] += c * z[r] * z[s];
                }
            }
        }
        h
    }
}

impl BetaModel for LogisticModel {
    fn param_dim(&self) -> usize {
        self.mu0.len()
    }

    fn term(&self, ds: &Dataset, n: usize, theta: &[f64], cfg: &BetaConfig) -> f64 {
        let y = ds.label(n).expect("logistic model needs labels");
        self.beta_term(ds.row(n), y, theta, cfg)
    }

    fn sample_posterior(
        &self,
        ds: &Dataset,
        w: &[(usize, f64)],
        cfg: &BetaConfig,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamSamples> {
        let fit = self.laplace_fit(ds, w, cfg)?;
        ParamSamples::new(self.param_dim(), fit.sample(count, rng))
    }
}
