//! Laplace approximation: a Gaussian at the mode of a log-density with
//! covariance equal to the inverse negative Hessian there.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Gaussian};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the gradient.
    pub grad_tol: f64,
    /// Diagonal jitter added once when the curvature is not positive definite.
    pub jitter: f64,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self { max_iterations: 200, grad_tol: 1e-7, jitter: 1e-6 }
    }
}

/// A twice-differentiable log-density with an analytic gradient.
pub(crate) trait LogDensity {
    fn dim(&self) -> usize;

    fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>);

    /// Hessian used to choose ascent directions; it may be approximate.
    fn direction_hessian(&self, theta: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceFit {
    pub mode: DVector<f64>,
    /// Negative Hessian at the mode (posterior precision).
    pub precision: DMatrix<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    lower: DMatrix<f64>,
}

impl LaplaceFit {
    pub fn posterior(&self) -> Result<Gaussian> {
        Gaussian::new(self.mode.clone(), linalg::spd_inverse(&self.precision, "Laplace precision")?)
    }

    /// Rows `mode + L^-T z` with `precision = L L^T`.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Vec<f64> {
        let p = self.mode.len();
        let upper = self.lower.transpose();
        let mut out = Vec::with_capacity(count * p);
        for _ in 0..count {
            let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = upper.solve_upper_triangular(&z).expect("Cholesky factor has a positive diagonal");
            out.extend((&self.mode + x).iter());
        }
        out
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton ascent with backtracking, then finite-difference curvature
/// of the analytic gradient at the mode.
pub(crate) fn fit(target: &impl LogDensity, start: &[f64], opts: &LaplaceOptions) -> Result<LaplaceFit> {
    let p = target.dim();
    let mut theta = start.to_vec();
    let (mut value, mut grad) = target.value_grad(&theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NoConvergence { iterations, grad_norm: f64::NAN });
        }
        if max_abs(&grad) <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = ascent_direction(target, &theta, &grad);
        let slope: f64 = linalg::dot(&step, &grad);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let (v, g) = target.value_grad(&trial);
            if v.is_finite() && v >= value + 1e-4 * t * slope {
                accepted = Some((trial, v, g));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, v, g)) => {
                let moved = trial.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                theta = trial;
                value = v;
                grad = g;
                let scale = 1.0 + max_abs(&theta);
                if moved <= 1e-13 * scale && slope <= 1e-14 * (1.0 + value.abs()) {
                    converged = true;
                    break;
                }
            }
            None => {
                // No representable ascent left; accept if the gradient is at
                // the rounding level of the objective.
                converged = slope <= 1e-12 * (1.0 + value.abs());
                break;
            }
        }
    }
    let grad_norm = max_abs(&grad);
    if !converged && grad_norm > opts.grad_tol {
        return Err(Error::NoConvergence { iterations, grad_norm });
    }

    let precision = finite_difference_precision(target, &theta);
    let lower = match linalg::cholesky(&precision, "Laplace precision") {
        Ok(c) => c.l(),
        Err(_) => {
            let jittered = &precision + DMatrix::identity(p, p) * opts.jitter;
            linalg::cholesky(&jittered, "Laplace precision").map_err(|_| {
                Error::NotPositiveDefinite(format!(
                    "negative Hessian at the mode is not positive definite even with jitter {:e}; \
                     increase the jitter or strengthen the prior",
                    opts.jitter
                ))
            })?
            .l()
        }
    };
    Ok(LaplaceFit { mode: DVector::from_vec(theta), precision, iterations, grad_norm, lower })
}

/// Newton direction on `-H + lambda I`, raising `lambda` until it factors.
fn ascent_direction(target: &impl LogDensity, theta: &[f64], grad: &[f64]) -> Vec<f64> {
    let p = theta.len();
    let neg_h = -target.direction_hessian(theta);
    let g = DVector::from_column_slice(grad);
    let scale = neg_h.diagonal().iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    let mut lambda = 0.0;
    for _ in 0..60 {
        let a = &neg_h + DMatrix::identity(p, p) * lambda;
        if let Some(chol) = a.cholesky() {
            return chol.solve(&g).iter().copied().collect();
        }
        lambda = if lambda == 0.0 { 1e-8 * scale } else { lambda * 10.0 };
    }
    grad.iter().map(|v| v / scale).collect()
}

/// Central differences of the analytic gradient with step
/// `1e-5 * (1 + |theta_i|)` per coordinate, negated and symmetrized.
fn finite_difference_precision(target: &impl LogDensity, theta: &[f64]) -> DMatrix<f64> {
    let p = theta.len();
    let mut hessian = DMatrix::zeros(p, p);
    let mut probe = theta.to_vec();
    for i in 0..p {
        let h = 1e-5 * (1.0 + theta[i].abs());
        probe[i] = theta[i] + h;
        let (_, up) = target.value_grad(&probe);
        probe[i] = theta[i] - h;
        let (_, down) = target.value_grad(&probe);
        probe[i] = theta[i];
        for j in 0..p {
            hessian[(j, i)] = (up[j] - down[j]) / (2.0 * h);
        }
    }
    linalg::symmetrize(-hessian)
}
