//! Statistical models exposing beta-likelihood terms and coreset posterior
//! samplers.
//!
//! Every model uses the same term convention
//!
//! ```text
//! f_n(theta) = (1/beta) p(x_n | theta)^beta - 1/(1+beta) ∫ p(u | theta)^(1+beta) du
//! ```
//!
//! (the integral runs over the response space for supervised models), so that
//! `exp(sum_n w_n f_n)` upweights points the model explains well and the
//! differences `f_n - f_m` tend to log-likelihood differences as `beta -> 0`.
//! In classical mode each term is the ordinary log-likelihood instead.

mod gaussian;
mod laplace;
mod logistic;
mod mlp;
mod neural_linear;
mod toy;

pub use gaussian::GaussianModel;
pub use laplace::{LaplaceFit, LaplaceOptions};
pub use logistic::LogisticModel;
pub use mlp::{Mlp, MlpConfig};
pub use neural_linear::{blr_predictive_features, blr_update, NeuralLinearConfig, NeuralLinearModel};
pub use toy::{toy_exact, DiscreteToyModel, ToyExact};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;

/// Robustness setting: a positive `beta`, or the classical log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaConfig {
    pub beta: f64,
    #[serde(default)]
    pub classical: bool,
}

impl BetaConfig {
    pub fn robust(beta: f64) -> Result<Self> {
        let cfg = Self { beta, classical: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn classical() -> Self {
        Self { beta: 0.0, classical: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.classical && !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Posterior draws, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSamples {
    dim: usize,
    values: Vec<f64>,
}

impl ParamSamples {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} values cannot form samples of dimension {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("ragged sample rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, s: usize) -> &[f64] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.iter() {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        let s = self.count() as f64;
        m.iter_mut().for_each(|v| *v /= s);
        m
    }
}

/// A model usable by the coreset builder.
///
/// Weights are passed per datapoint as `(row index, weight)` pairs; rows not
/// listed have weight zero.
pub trait BetaModel {
    /// Dimension of the parameter vector.
    fn param_dim(&self) -> usize;

    /// `f_n(theta)` for row `n` of `ds`.
    fn term(&self, ds: &Dataset, n: usize, theta: &[f64], cfg: &BetaConfig) -> f64;

    /// Draws from the coreset posterior at weights `w`.
    fn sample_posterior(
        &self,
        ds: &Dataset,
        w: &[(usize, f64)],
        cfg: &BetaConfig,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamSamples>;

    /// Hook run once per outer builder iteration after reweighting. Models
    /// with a learned feature map retrain it here.
    fn after_iteration(&mut self, _ds: &Dataset, _w: &[(usize, f64)], _iteration: usize) -> Result<()> {
        Ok(())
    }
}

/// `f` scaled by a positive constant; the scale-invariance checks use it.
#[derive(Debug, Clone)]
pub struct Scaled<M> {
    pub inner: M,
    pub scale: f64,
}

impl<M: BetaModel> BetaModel for Scaled<M> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn term(&self, ds: &Dataset, n: usize, theta: &[f64], cfg: &BetaConfig) -> f64 {
        self.scale * self.inner.term(ds, n, theta, cfg)
    }

    fn sample_posterior(
        &self,
        ds: &Dataset,
        w: &[(usize, f64)],
        cfg: &BetaConfig,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamSamples> {
        self.inner.sample_posterior(ds, w, cfg, count, rng)
    }
}

pub(crate) fn check_weights(w: &[(usize, f64)], n: usize) -> Result<()> {
    for &(i, v) in w {
        if i >= n {
            return Err(Error::InvalidArgument(format!("weight index {i} out of range")));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight {v} at {i} is not a finite nonnegative number")));
        }
    }
    Ok(())
}
