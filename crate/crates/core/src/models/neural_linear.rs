use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_weights, BetaConfig, BetaModel, Mlp, MlpConfig, ParamSamples};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Gaussian};
use crate::rng::{self, ChaCha8Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralLinearConfig {
    pub mlp: MlpConfig,
    /// Observation noise standard deviation.
    pub sigma: f64,
    /// Prior standard deviation of the last-layer weights.
    pub sigma0: f64,
    pub seed: u64,
}

impl Default for NeuralLinearConfig {
    fn default() -> Self {
        Self { mlp: MlpConfig::default(), sigma: 1.0, sigma0: 1.0, seed: 0 }
    }
}

/// Embeddings of one dataset, identified by the address of its feature buffer.
#[derive(Debug, Clone)]
struct EmbeddingCache {
    key: (usize, usize),
    z: Vec<f64>,
}

/// Bayesian linear regression on the last hidden layer of an [`Mlp`].
#[derive(Debug, Clone)]
pub struct NeuralLinearModel {
    mlp: Mlp,
    mu0: Vec<f64>,
    cfg: NeuralLinearConfig,
    train_rng: ChaCha8Rng,
    cache: Option<EmbeddingCache>,
}

fn cache_key(ds: &Dataset) -> (usize, usize) {
    (ds.features().as_ptr() as usize, ds.n())
}

impl NeuralLinearModel {
    pub fn new(d: usize, cfg: NeuralLinearConfig) -> Result<Self> {
        if !(cfg.sigma > 0.0 && cfg.sigma0 > 0.0) {
            return Err(Error::InvalidArgument("sigma and sigma0 must be positive".into()));
        }
        let mut init = rng::stream(cfg.seed, rng::STREAM_INIT);
        let mlp = Mlp::new(d, cfg.mlp.hidden, cfg.mlp.batch_norm, &mut init)?;
        Ok(Self {
            mu0: vec![0.0; cfg.mlp.hidden],
            train_rng: rng::stream(cfg.seed, rng::STREAM_TRAINING),
            mlp,
            cfg,
            cache: None,
        })
    }

    pub fn config(&self) -> &NeuralLinearConfig {
        &self.cfg
    }

    pub fn hidden(&self) -> usize {
        self.mlp.hidden()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.mlp.embed(x)
    }

    /// Precomputes the embedding of every row of `ds`; term evaluations on
    /// this dataset then skip the network.
    pub fn attach(&mut self, ds: &Dataset) {
        let z = ds.rows().flat_map(|x| self.mlp.embed(x)).collect();
        self.cache = Some(EmbeddingCache { key: cache_key(ds), z });
    }

    fn row_features<'a>(&'a self, ds: &Dataset, n: usize) -> std::borrow::Cow<'a, [f64]> {
        let h = self.hidden();
        match &self.cache {
            Some(c) if c.key == cache_key(ds) => std::borrow::Cow::Borrowed(&c.z[n * h..(n + 1) * h]),
            _ => std::borrow::Cow::Owned(self.mlp.embed(ds.row(n))),
        }
    }

    /// Beta-likelihood term for the residual `r = y - theta^T z`.
    pub fn residual_term(&self, r: f64, cfg: &BetaConfig) -> f64 {
        let s2 = self.cfg.sigma * self.cfg.sigma;
        if cfg.classical {
            return -r * r / (2.0 * s2);
        }
        let b = cfg.beta;
        let scale = (2.0 * PI).powf(-b / 2.0) * self.cfg.sigma.powf(-b);
        scale * ((-b * r * r / (2.0 * s2)).exp() / b - (1.0 + b).powf(-1.5))
    }

    /// Log-density of `y` under `N(theta^T z, sigma^2)`.
    pub fn log_likelihood(&self, r: f64) -> f64 {
        let s = self.cfg.sigma;
        -0.5 * (2.0 * PI).ln() - s.ln() - r * r / (2.0 * s * s)
    }

    pub fn beta_term(&self, x: &[f64], y: f64, theta: &[f64], cfg: &BetaConfig) -> f64 {
        self.residual_term(y - linalg::dot(theta, &self.mlp.embed(x)), cfg)
    }

    /// Conjugate last-layer posterior at weights `w`.
    pub fn blr_posterior(&self, ds: &Dataset, w: &[(usize, f64)]) -> Result<Gaussian> {
        check_weights(w, ds.n())?;
        let labels = ds.require_labels()?;
        let rows: Vec<_> = w.iter().map(|&(i, wi)| (self.row_features(ds, i).into_owned(), labels[i], wi)).collect();
        blr_update(&self.mu0, self.cfg.sigma0, self.cfg.sigma, rows.iter().map(|(z, y, w)| (z.as_slice(), *y, *w)))
    }

    /// Predictive mean and variance at `x`.
    pub fn blr_predictive(&self, posterior: &Gaussian, x: &[f64]) -> (f64, f64) {
        blr_predictive_features(posterior, &self.mlp.embed(x), self.cfg.sigma)
    }

    /// One training round of the feature map on the weighted rows.
    pub fn mlp_train(&mut self, ds: &Dataset, w: &[(usize, f64)], steps: usize) -> Result<()> {
        check_weights(w, ds.n())?;
        let cfg = MlpConfig { steps, ..self.cfg.mlp.clone() };
        self.mlp.train(ds, w, &cfg, &mut self.train_rng)?;
        if let Some(c) = &self.cache {
            if c.key == cache_key(ds) {
                self.attach(ds);
            } else {
                self.cache = None;
            }
        }
        Ok(())
    }

    pub fn weighted_loss(&self, ds: &Dataset, w: &[(usize, f64)]) -> Result<f64> {
        self.mlp.weighted_loss(ds, w)
    }
}

/// `Sigma_w = (sigma0^-2 I + sigma^-2 sum w z z^T)^-1`,
/// `mu_w = Sigma_w (sigma0^-2 mu0 + sigma^-2 sum w y z)`.
pub fn blr_update<'a>(
    mu0: &[f64],
    sigma0: f64,
    sigma: f64,
    rows: impl Iterator<Item = (&'a [f64], f64, f64)>,
) -> Result<Gaussian> {
    let h = mu0.len();
    let (p0, p) = (sigma0.powi(-2), sigma.powi(-2));
    let mut precision = DMatrix::identity(h, h) * p0;
    let mut rhs = DVector::from_column_slice(mu0) * p0;
    for (z, y, w) in rows {
        if z.len() != h {
            return Err(Error::Dimension(format!("feature length {} vs {h}", z.len())));
        }
        for a in 0..h {
            rhs[a] += p * w * y * z[a];
            for b in 0..h {
                precision[(a, b)] += p * w * z[a] * z[b];
            }
        }
    }
    let cov = linalg::symmetrize(linalg::spd_inverse(&precision, "last-layer posterior precision")?);
    let mean = &cov * rhs;
    Ok(Gaussian { mean, cov })
}

pub fn blr_predictive_features(posterior: &Gaussian, z: &[f64], sigma: f64) -> (f64, f64) {
    let z = DVector::from_column_slice(z);
    (posterior.mean.dot(&z), sigma * sigma + z.dot(&(&posterior.cov * &z)))
}

impl BetaModel for NeuralLinearModel {
    fn param_dim(&self) -> usize {
        self.hidden()
    }

    fn term(&self, ds: &Dataset, n: usize, theta: &[f64], cfg: &BetaConfig) -> f64 {
        let y = ds.label(n).expect("neural-linear terms need labels");
        self.residual_term(y - linalg::dot(theta, &self.row_features(ds, n)), cfg)
    }

    fn sample_posterior(
        &self,
        ds: &Dataset,
        w: &[(usize, f64)],
        _cfg: &BetaConfig,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamSamples> {
        let post = self.blr_posterior(ds, w)?;
        ParamSamples::new(self.hidden(), post.sample(count, rng)?)
    }

    fn after_iteration(&mut self, ds: &Dataset, w: &[(usize, f64)], _iteration: usize) -> Result<()> {
        let steps = self.cfg.mlp.steps;
        self.mlp_train(ds, w, steps)?;
        if self.cache.is_none() {
            self.attach(ds);
        }
        Ok(())
    }
}
