//! Fast oracle and property checks, runnable from the command line.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::builder;
use crate::data::Dataset;
use crate::eval;
use crate::linalg::Gaussian;
use crate::models::{self, BetaConfig, DiscreteToyModel, GaussianModel, LogisticModel};
use crate::rng;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, error: f64, tolerance: f64) -> Check {
    Check { name, passed: error.is_finite() && error <= tolerance, detail: format!("error {error:.3e} (tolerance {tolerance:.0e})") }
}

/// Trapezoid rule on `[lo, hi]`.
fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
    let h = (hi - lo) / steps as f64;
    let inner: f64 = (1..steps).map(|k| f(lo + k as f64 * h)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}

fn gaussian_integral() -> Check {
    let m = GaussianModel::isotropic(1).expect("1-d model");
    let cfg = BetaConfig::robust(1.0).expect("beta");
    let density = |x: f64| m.log_density(&[x], &[0.0]).exp();
    let integral = integrate(|x| density(x).powi(2), -12.0, 12.0, 20_000);
    let closed = m.beta_term(&[0.0], &[0.0], &cfg);
    check("gaussian term vs quadrature", (closed - (density(0.0) - integral / 2.0)).abs(), 1e-9)
}

fn logistic_two_term() -> Check {
    let cfg = BetaConfig::robust(0.7).expect("beta");
    let mut worst: f64 = 0.0;
    for a in [-30.0, -2.5, 0.0, 0.3, 4.0, 700.0] {
        let p = |y: f64| 1.0 / (1.0 + f64::exp(-y * a));
        let direct = p(1.0).powf(0.7) / 0.7 - (p(1.0).powf(1.7) + p(-1.0).powf(1.7)) / 1.7;
        worst = worst.max((LogisticModel::link_value(a, 1.0, &cfg) - direct).abs());
    }
    check("logistic term vs two-term sum", worst, 1e-12)
}

fn beta_limit() -> Check {
    let m = GaussianModel::isotropic(1).expect("1-d model");
    let cfg = BetaConfig::robust(1e-4).expect("beta");
    let mut r = rng::stream(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        // Densities in [0.1, 0.39] for the unit normal.
        let (a, b) = (r.random_range(0.0..1.6), r.random_range(0.0..1.6));
        let lhs = m.beta_term(&[a], &[0.0], &cfg) - m.beta_term(&[b], &[0.0], &cfg);
        let rhs = m.log_density(&[a], &[0.0]) - m.log_density(&[b], &[0.0]);
        worst = worst.max((lhs - rhs).abs());
    }
    check("small-beta limit (gaussian)", worst, 1e-3)
}

fn toy_gradient() -> Check {
    let mut r = rng::stream(12, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (j, n) = (r.random_range(2..20), r.random_range(1..8));
        let raw: Vec<f64> = (0..j).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let table = (0..j * n).map(|_| r.random_range(-2.0..2.0)).collect();
        let m = DiscreteToyModel::new(raw.iter().map(|p| p / total).collect(), table, n).expect("toy model");
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.0..2.0)).collect();
        let exact = m.exact(&w);
        for i in 0..n {
            let h = 1e-5;
            let (mut up, mut down) = (w.clone(), w.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (m.kl(&up) - m.kl(&down)) / (2.0 * h);
            worst = worst.max((fd - exact.gradient[i]).abs() / (1e-3 + fd.abs()));
        }
    }
    check("toy KL gradient vs finite differences", worst, 1e-5)
}

fn blr_rank_one() -> Check {
    let z = [1.0, 0.0];
    let post = models::blr_update(&[0.0, 0.0], 1.0, 1.0, std::iter::once((&z[..], 1.0, 1.0))).expect("posterior");
    let err = (post.cov[(0, 0)] - 0.5).abs() + (post.cov[(1, 1)] - 1.0).abs() + (post.mean[0] - 0.5).abs();
    check("last-layer rank-one update", err, 1e-12)
}

fn kl_equal_variance() -> Check {
    let p = Gaussian { mean: DVector::from_element(1, 0.0), cov: DMatrix::identity(1, 1) };
    let q = Gaussian { mean: DVector::from_element(1, 1.0), cov: DMatrix::identity(1, 1) };
    let kl = eval::gaussian_kl(&p, &q).unwrap_or(f64::NAN);
    check("gaussian KL, unit shift", (kl - 0.5).abs(), 1e-12)
}

fn conjugate_update() -> Check {
    let m = GaussianModel::isotropic(1).expect("1-d model");
    let ds = Dataset::new(1, 1, vec![0.0]).expect("dataset");
    match m.weighted_posterior(&ds, &[(0, 1.0)]) {
        Ok(post) => check("conjugate update, one point", post.mean[0].abs() + (post.cov[(0, 0)] - 0.5).abs(), 1e-12),
        Err(e) => Check { name: "conjugate update, one point", passed: false, detail: e.to_string() },
    }
}

fn centering_and_fixed_point() -> Check {
    let mut r = rng::stream(13, 0);
    let g = builder::center_columns(DMatrix::from_fn(50, 10, |_, _| r.random_range(-5.0..5.0)));
    let worst_mean = g.column_iter().map(|c| (c.sum() / 50.0).abs()).fold(0.0, f64::max);
    // Full support, unit weights, full batch: zero residual, zero gradient.
    let grad = builder::mc_gradient(&g, &g, &[1.0; 10], 10);
    let worst_grad = grad.iter().map(|v| v.abs()).fold(0.0, f64::max);
    check("centering identity and w=1 fixed point", worst_mean.max(worst_grad), 1e-12)
}

pub fn run() -> Vec<Check> {
    vec![
        gaussian_integral(),
        logistic_two_term(),
        beta_limit(),
        toy_gradient(),
        blr_rank_one(),
        kl_equal_variance(),
        conjugate_update(),
        centering_and_fixed_point(),
    ]
}
