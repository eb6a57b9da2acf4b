//! Synthetic datasets for the bundled experiments.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, ChaCha8Rng};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `n` iid draws from `N(mean * 1, I_d)`.
pub fn gaussian(n: usize, d: usize, mean: f64, seed: u64) -> Result<Dataset> {
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let features = (0..n * d).map(|_| mean + normal(&mut rng)).collect();
    Dataset::new(n, d, features)
}

/// Balanced two-class data with `x | y ~ N(y * mu, I)` and `|2 mu| =
/// separation`, so the logistic model with weights `2 mu` and zero bias is
/// exactly right.
pub fn logistic(n: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let direction = unit_vector(d, &mut rng)?;
    let mu: Vec<f64> = direction.iter().map(|v| 0.5 * separation * v).collect();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        features.extend(mu.iter().map(|m| y * m + normal(&mut rng)));
        labels.push(y);
    }
    Dataset::new(n, d, features)?.with_class_labels(labels)
}

/// Nonlinear regression target `y = sum_j sin(a_j . x) + noise`.
pub fn regression(n: usize, d: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let dirs: Vec<Vec<f64>> = (0..3).map(|_| unit_vector(d, &mut rng)).collect::<Result<_>>()?;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let y = dirs.iter().map(|a| crate::linalg::dot(a, &x).sin()).sum::<f64>()
            + noise_sd * normal(&mut rng);
        features.extend(x);
        labels.push(y);
    }
    Dataset::new(n, d, features)?.with_labels(labels)
}

/// `groups` equally sized groups of balanced logistic data sharing one
/// decision rule. Group `g` holds rows `g * size .. (g + 1) * size`.
pub fn grouped_logistic(groups: usize, size: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    let ds = logistic(groups * size, d, separation, seed)?;
    let ids = (0..groups * size).map(|i| i / size).collect();
    ds.with_groups(ids)
}

fn unit_vector(d: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return Ok(v.into_iter().map(|x| x / norm).collect());
        }
    }
}
