//! A discrete toy posterior where the KL objective and its gradient are
//! available in closed form, compared with the builder's Monte Carlo
//! estimate and a finite difference.
//!
//! `cargo run --release --example toy_gradient`

use betacores::builder::{self, Units};
use betacores::models::{BetaConfig, DiscreteToyModel, ParamSamples};
use betacores::rng;
use rand::Rng;

fn main() -> betacores::Result<()> {
    let (atoms, n) = (6, 4);
    let mut r = rng::stream(7, 0);
    let table: Vec<f64> = (0..atoms * n).map(|_| r.random_range(-1.0..1.0)).collect();
    let toy = DiscreteToyModel::new(vec![1.0 / atoms as f64; atoms], table, n)?;
    let w = vec![0.5, 1.5, 0.0, 2.0];

    let exact = toy.exact(&w);
    println!("KL at w: {:.6}", exact.kl);
    let h = 1e-6;
    for i in 0..n {
        let (mut up, mut down) = (w.clone(), w.clone());
        up[i] += h;
        down[i] -= h;
        let fd = (toy.kl(&up) - toy.kl(&down)) / (2.0 * h);
        println!("d/dw{i}: exact {:+.6}  finite difference {fd:+.6}", exact.gradient[i]);
    }

    // Monte Carlo gradient from exact posterior draws over the full data.
    let ds = toy.dataset();
    let cfg = BetaConfig::classical();
    let draws: Vec<Vec<f64>> = (0..20000)
        .map(|_| {
            let u: f64 = r.random();
            let mut acc = 0.0;
            let j = exact.masses.iter().position(|p| {
                acc += p;
                u < acc
            });
            vec![j.unwrap_or(atoms - 1) as f64]
        })
        .collect();
    let samples = ParamSamples::from_rows(&draws)?;
    let all: Vec<usize> = (0..n).collect();
    let g = builder::center_f(&samples, &all, Units::Points(n), &toy, &ds, &cfg);
    let grad = builder::mc_gradient(&g, &g, &w, n);
    println!("Monte Carlo gradient: {:+.4?}", grad);
    Ok(())
}
