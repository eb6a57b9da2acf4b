use std::f64::consts::PI;

use betacores::models::{
    blr_predictive_features, blr_update, DiscreteToyModel, GaussianModel, LogisticModel, Mlp, MlpConfig,
    NeuralLinearConfig, NeuralLinearModel,
};
use betacores::{data::synthetic, BetaConfig, Dataset};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(d, d) * (0.5 * d as f64)
}

/// Composite Simpson rule on `[lo, hi]`.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..panels {
        acc += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn npdf(x: f64, mean: f64, sd: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * PI).sqrt())
}

#[test]
fn gaussian_term_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let sd: f64 = rng.random_range(0.5..2.0);
        let beta: f64 = rng.random_range(0.05..1.5);
        let (x, theta) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let model = GaussianModel::new(
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, sd * sd),
        )
        .unwrap();
        let integral = simpson(|u| npdf(u, theta, sd).powf(1.0 + beta), theta - 40.0, theta + 40.0, 20_000);
        let oracle = npdf(x, theta, sd).powf(beta) / beta - integral / (1.0 + beta);
        let got = model.beta_term(&[x], &[theta], &BetaConfig::robust(beta).unwrap());
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn gaussian_term_two_dimensional_quadrature() {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let model = GaussianModel::new(DVector::zeros(2), DMatrix::identity(2, 2), sigma.clone()).unwrap();
    let inv = sigma.clone().try_inverse().unwrap();
    let det = sigma.determinant();
    let density = |u: f64, v: f64| {
        let r = DVector::from_vec(vec![u, v]);
        (-0.5 * r.dot(&(&inv * &r))).exp() / (2.0 * PI * det.sqrt())
    };
    let beta = 0.4;
    let integral = simpson(|u| simpson(|v| density(u, v).powf(1.0 + beta), -12.0, 12.0, 600), -12.0, 12.0, 600);
    let x = [0.4, -0.7];
    let oracle = density(x[0], x[1]).powf(beta) / beta - integral / (1.0 + beta);
    let got = model.beta_term(&x, &[0.0, 0.0], &BetaConfig::robust(beta).unwrap());
    assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
}

#[test]
fn logistic_term_matches_two_term_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let beta: f64 = rng.random_range(0.01..2.0);
        let x: Vec<f64> = (0..3).map(|_| normal(&mut rng)).collect();
        let theta: Vec<f64> = (0..4).map(|_| normal(&mut rng)).collect();
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let a = x.iter().zip(&theta).map(|(u, v)| u * v).sum::<f64>() + theta[3];
        let p = |label: f64| 1.0 / (1.0 + (-label * a).exp());
        let oracle = p(y).powf(beta) / beta - (p(1.0).powf(1.0 + beta) + p(-1.0).powf(1.0 + beta)) / (1.0 + beta);
        let model = LogisticModel::isotropic(3, 1.0).unwrap();
        let got = model.beta_term(&x, y, &theta, &BetaConfig::robust(beta).unwrap());
        assert!((got - oracle).abs() < 1e-12 * (1.0 + oracle.abs()), "{got} vs {oracle}");
    }
}

#[test]
fn residual_term_matches_quadrature() {
    let nl = NeuralLinearModel::new(2, NeuralLinearConfig { sigma: 0.7, ..Default::default() }).unwrap();
    for (r, beta) in [(0.0, 1.0), (0.5, 0.3), (-1.2, 2.0), (3.0, 4.0)] {
        let integral = simpson(|u| npdf(u, 0.0, 0.7).powf(1.0 + beta), -30.0, 30.0, 20_000);
        let oracle = npdf(r, 0.0, 0.7).powf(beta) / beta - integral / (1.0 + beta);
        let got = nl.residual_term(r, &BetaConfig::robust(beta).unwrap());
        assert!((got - oracle).abs() < 1e-10, "r={r} beta={beta}: {got} vs {oracle}");
    }
}

#[test]
fn unit_weights_match_sequential_conjugate_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 3;
    let (sigma0, sigma) = (random_spd(d, &mut rng), random_spd(d, &mut rng));
    let mu0 = DVector::from_fn(d, |_, _| normal(&mut rng));
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..d).map(|_| 1.0 + normal(&mut rng)).collect()).collect();
    let ds = Dataset::from_rows(&rows).unwrap();
    let model = GaussianModel::new(mu0.clone(), sigma0.clone(), sigma.clone()).unwrap();
    let w: Vec<(usize, f64)> = (0..40).map(|i| (i, 1.0)).collect();
    let post = model.weighted_posterior(&ds, &w).unwrap();

    // Kalman filter: one observation x ~ N(theta, sigma) at a time.
    let (mut mean, mut cov) = (mu0, sigma0);
    for row in &rows {
        let x = DVector::from_column_slice(row);
        let gain = &cov * (&cov + &sigma).try_inverse().unwrap();
        mean = &mean + &gain * (x - &mean);
        cov = (DMatrix::identity(d, d) - &gain) * &cov;
        cov = (&cov + cov.transpose()) * 0.5;
    }
    assert!((post.mean - mean).amax() < 1e-10);
    assert!((post.cov - cov).amax() < 1e-10);
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = LogisticModel::isotropic(4, 1.0).unwrap();
    for cfg in [BetaConfig::robust(0.5).unwrap(), BetaConfig::robust(0.05).unwrap(), BetaConfig::classical()] {
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| normal(&mut rng)).collect();
            let theta: Vec<f64> = (0..5).map(|_| normal(&mut rng)).collect();
            let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let grad = model.beta_term_grad(&x, y, &theta, &cfg);
            for k in 0..5 {
                let h = 1e-5;
                let mut up = theta.clone();
                up[k] += h;
                let mut down = theta.clone();
                down[k] -= h;
                let fd = (model.beta_term(&x, y, &up, &cfg) - model.beta_term(&x, y, &down, &cfg)) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / grad[k].abs().max(1e-3);
                assert!(rel < 1e-5, "coordinate {k}: {} vs {fd}", grad[k]);
            }
        }
    }
}

/// Plain Newton on the penalized classical log-likelihood with an exact
/// Hessian.
fn newton_mode(ds: &Dataset, prior_var: f64) -> Vec<f64> {
    let d = ds.d();
    let p = d + 1;
    let labels = ds.labels().unwrap();
    let mut theta = DVector::zeros(p);
    for _ in 0..100 {
        let mut grad = -&theta / prior_var;
        let mut hess = DMatrix::identity(p, p) / prior_var;
        for (i, row) in ds.rows().enumerate() {
            let mut z = DVector::from_column_slice(row).push(1.0);
            let a = z.dot(&theta);
            let y = labels[i];
            let s = 1.0 / (1.0 + (y * a).exp());
            grad += &z * (y * s);
            let curv = 1.0 / (1.0 + (-a).exp()) * (1.0 / (1.0 + a.exp()));
            z *= curv.sqrt();
            hess += &z * z.transpose();
        }
        let step = hess.lu().solve(&grad).unwrap();
        theta += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    theta.iter().copied().collect()
}

#[test]
fn laplace_mode_matches_newton_oracle() {
    let ds = synthetic::logistic(2000, 4, 6.0, 5).unwrap();
    let model = LogisticModel::isotropic(4, 0.1).unwrap();
    let w: Vec<(usize, f64)> = (0..ds.n()).map(|i| (i, 1.0)).collect();
    let fit = model.laplace_fit(&ds, &w, &BetaConfig::classical()).unwrap();
    let oracle = newton_mode(&ds, 0.1);
    for (a, b) in fit.mode.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn blr_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 5;
    let (sigma0, sigma) = (1.3, 0.6);
    let mu0: Vec<f64> = (0..h).map(|_| normal(&mut rng)).collect();
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..20)
        .map(|_| ((0..h).map(|_| normal(&mut rng)).collect(), normal(&mut rng), rng.random_range(0.0..3.0)))
        .collect();
    let post = blr_update(&mu0, sigma0, sigma, rows.iter().map(|(z, y, w)| (z.as_slice(), *y, *w))).unwrap();

    let z = DMatrix::from_fn(20, h, |i, j| rows[i].0[j]);
    let wdiag = DMatrix::from_diagonal(&DVector::from_iterator(20, rows.iter().map(|r| r.2)));
    let y = DVector::from_iterator(20, rows.iter().map(|r| r.1));
    let precision = DMatrix::identity(h, h) / (sigma0 * sigma0) + z.transpose() * &wdiag * &z / (sigma * sigma);
    let rhs = DVector::from_column_slice(&mu0) / (sigma0 * sigma0) + z.transpose() * &wdiag * y / (sigma * sigma);
    let lu = precision.clone().lu();
    let mean = lu.solve(&rhs).unwrap();
    let cov = lu.solve(&DMatrix::identity(h, h)).unwrap();
    assert!((post.mean - mean).amax() < 1e-9);
    assert!((post.cov - cov).amax() < 1e-9);
}

#[test]
fn blr_predictive_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 3;
    let rows: Vec<(Vec<f64>, f64)> =
        (0..8).map(|_| ((0..h).map(|_| normal(&mut rng)).collect(), normal(&mut rng))).collect();
    let sigma = 0.8;
    let post = blr_update(&[0.0; 3], 1.0, sigma, rows.iter().map(|(z, y)| (z.as_slice(), *y, 1.0))).unwrap();
    let z = [0.3, -1.1, 0.6];
    let (mean, var) = blr_predictive_features(&post, &z, sigma);

    let draws = 100_000;
    let thetas = post.sample(draws, &mut rng).unwrap();
    let ys: Vec<f64> = thetas
        .chunks_exact(h)
        .map(|t| t.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + sigma * normal(&mut rng))
        .collect();
    let n = draws as f64;
    let mc_mean = ys.iter().sum::<f64>() / n;
    let mc_var = ys.iter().map(|y| (y - mc_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_se = (mc_var / n).sqrt();
    // Var of the sample variance of a normal is 2 sigma^4 / (n - 1).
    let var_se = mc_var * (2.0 / (n - 1.0)).sqrt();
    assert!((mc_mean - mean).abs() < 3.0 * mean_se, "mean {mc_mean} vs {mean} (se {mean_se})");
    assert!((mc_var - var).abs() < 3.0 * var_se, "var {mc_var} vs {var} (se {var_se})");
}

#[test]
fn toy_gradient_on_small_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (j, n) = (5, 8);
    let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let prior = raw.iter().map(|p| p / total).collect();
    let table = (0..j * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let toy = DiscreteToyModel::new(prior, table, n).unwrap();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let exact = toy.exact(&w);
    assert!((exact.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for i in 0..n {
        let h = 1e-5;
        let mut up = w.clone();
        up[i] += h;
        let mut down = w.clone();
        down[i] -= h;
        let fd = (toy.kl(&up) - toy.kl(&down)) / (2.0 * h);
        assert!((fd - exact.gradient[i]).abs() < 1e-6, "point {i}: {fd} vs {}", exact.gradient[i]);
    }
    assert!(toy.kl(&vec![1.0; n]).abs() < 1e-12);
}

#[test]
fn mlp_training_reduces_constant_target_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..64).map(|_| (0..3).map(|_| normal(&mut rng)).collect()).collect();
    let ds = Dataset::from_rows(&rows).unwrap().with_labels(vec![2.5; 64]).unwrap();
    let w: Vec<(usize, f64)> = (0..64).map(|i| (i, 1.0)).collect();
    let mut mlp = Mlp::new(3, 16, false, &mut rng).unwrap();
    let before = mlp.weighted_loss(&ds, &w).unwrap();
    mlp.train(&ds, &w, &MlpConfig { steps: 300, ..Default::default() }, &mut rng).unwrap();
    let after = mlp.weighted_loss(&ds, &w).unwrap();
    assert!(after < 0.05 * before, "{before} -> {after}");

    let doubled: Vec<(usize, f64)> = w.iter().map(|&(i, v)| (i, 2.0 * v)).collect();
    assert!((mlp.weighted_loss(&ds, &doubled).unwrap() - 2.0 * after).abs() < 1e-12 * (1.0 + after));
}

#[test]
fn neural_linear_posterior_is_deterministic_in_eval_mode() {
    let ds = synthetic::regression(60, 4, 0.1, 3).unwrap();
    let cfg = NeuralLinearConfig { seed: 5, ..Default::default() };
    let model = NeuralLinearModel::new(4, cfg).unwrap();
    let w: Vec<(usize, f64)> = (0..60).map(|i| (i, 1.0)).collect();
    let a = model.blr_posterior(&ds, &w).unwrap();
    let b = model.blr_posterior(&ds, &w).unwrap();
    assert_eq!(a, b);
    assert_eq!(model.features(ds.row(0)), model.features(ds.row(0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn logistic_term_difference_tends_to_log_likelihood(
        x in prop::collection::vec(-2.0f64..2.0, 3),
        theta in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let model = LogisticModel::isotropic(3, 1.0).unwrap();
        let cfg = BetaConfig::robust(1e-4).unwrap();
        let diff = model.beta_term(&x, 1.0, &theta, &cfg) - model.beta_term(&x, -1.0, &theta, &cfg);
        let ll = LogisticModel::log_likelihood(&x, 1.0, &theta) - LogisticModel::log_likelihood(&x, -1.0, &theta);
        prop_assert!((diff - ll).abs() < 1e-3);
    }

    #[test]
    fn gaussian_terms_are_finite(x in -50.0f64..50.0, theta in -50.0f64..50.0, beta in 1e-4f64..5.0) {
        let model = GaussianModel::isotropic(1).unwrap();
        let v = model.beta_term(&[x], &[theta], &BetaConfig::robust(beta).unwrap());
        prop_assert!(v.is_finite());
        // Bounded below by the integral term alone.
        let floor = -(2.0 * PI).powf(-beta / 2.0) * (1.0 + beta).powf(-1.5);
        prop_assert!(v >= floor - 1e-12);
    }
}
