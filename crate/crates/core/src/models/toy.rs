use rand::distr::{weighted::WeightedIndex, Distribution};

use super::{BetaConfig, BetaModel, ParamSamples};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::rng::ChaCha8Rng;

/// A finite parameter grid with an arbitrary table of term values, small
/// enough that the coreset posterior can be enumerated exactly.
///
/// The parameter "vector" is the single grid index `[j as f64]`. Rows of the
/// dataset passed alongside only fix `N`; their contents are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteToyModel {
    log_prior: Vec<f64>,
    /// `table[j * n + i] = f_i(theta_j)`.
    table: Vec<f64>,
    n: usize,
}

/// Enumerated quantities at one weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExact {
    pub masses: Vec<f64>,
    pub log_z: f64,
    /// `KL(pi_w || pi_1)`.
    pub kl: f64,
    /// Gradient of `kl` with respect to every weight.
    pub gradient: Vec<f64>,
}

impl DiscreteToyModel {
    pub fn new(prior: Vec<f64>, table: Vec<f64>, n: usize) -> Result<Self> {
        let j = prior.len();
        if j == 0 || n == 0 || table.len() != j * n {
            return Err(Error::Dimension(format!("{} table entries for {j} atoms and {n} points", table.len())));
        }
        if prior.iter().any(|p| !(*p > 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("prior masses must be positive and sum to 1".into()));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("table entries must be finite".into()));
        }
        Ok(Self { log_prior: prior.iter().map(|p| p.ln()).collect(), table, n })
    }

    pub fn atoms(&self) -> usize {
        self.log_prior.len()
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.table[j * self.n + i]
    }

    /// A placeholder dataset with one row per point.
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.n, 1, vec![0.0; self.n]).expect("n > 0")
    }

    fn log_weights(&self, w: &[f64]) -> Vec<f64> {
        (0..self.atoms())
            .map(|j| self.log_prior[j] + (0..self.n).map(|i| w[i] * self.value(j, i)).sum::<f64>())
            .collect()
    }

    pub fn masses(&self, w: &[f64]) -> Vec<f64> {
        let lw = self.log_weights(w);
        let lz = log_sum_exp(&lw);
        lw.iter().map(|v| (v - lz).exp()).collect()
    }

    pub fn kl(&self, w: &[f64]) -> f64 {
        self.exact(w).kl
    }

    pub fn exact(&self, w: &[f64]) -> ToyExact {
        assert_eq!(w.len(), self.n, "weight vector length");
        let lw = self.log_weights(w);
        let log_z = log_sum_exp(&lw);
        let log_z1 = log_sum_exp(&self.log_weights(&vec![1.0; self.n]));
        let masses: Vec<f64> = lw.iter().map(|v| (v - log_z).exp()).collect();
        // residual_j = (1 - w)^T f(theta_j)
        let residual: Vec<f64> =
            (0..self.atoms()).map(|j| (0..self.n).map(|i| (1.0 - w[i]) * self.value(j, i)).sum()).collect();
        let mean_res: f64 = masses.iter().zip(&residual).map(|(p, r)| p * r).sum();
        let kl = log_z1 - log_z - mean_res;
        let gradient = (0..self.n)
            .map(|i| {
                let mean_f: f64 = (0..self.atoms()).map(|j| masses[j] * self.value(j, i)).sum();
                -(0..self.atoms()).map(|j| masses[j] * (self.value(j, i) - mean_f) * (residual[j] - mean_res)).sum::<f64>()
            })
            .collect();
        ToyExact { masses, log_z, kl, gradient }
    }

    fn dense_weights(&self, w: &[(usize, f64)]) -> Result<Vec<f64>> {
        super::check_weights(w, self.n)?;
        let mut dense = vec![0.0; self.n];
        for &(i, v) in w {
            dense[i] += v;
        }
        Ok(dense)
    }
}

/// Free-function form of [`DiscreteToyModel::exact`].
pub fn toy_exact(model: &DiscreteToyModel, w: &[f64]) -> ToyExact {
    model.exact(w)
}

impl BetaModel for DiscreteToyModel {
    fn param_dim(&self) -> usize {
        1
    }

    fn term(&self, _ds: &Dataset, n: usize, theta: &[f64], _cfg: &BetaConfig) -> f64 {
        self.value(theta[0] as usize, n)
    }

    fn sample_posterior(
        &self,
        _ds: &Dataset,
        w: &[(usize, f64)],
        _cfg: &BetaConfig,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamSamples> {
        let masses = self.masses(&self.dense_weights(w)?);
        let dist = WeightedIndex::new(&masses).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        ParamSamples::new(1, (0..count).map(|_| dist.sample(rng) as f64).collect())
    }
}
