//! Contaminated Gaussian mean estimation: a β-Cores summary against the
//! classical (log-likelihood) construction and a uniform subsample.
//!
//! `cargo run --release --example gaussian_robustness`

use betacores::builder::{self, BuildConfig};
use betacores::data::{self, synthetic};
use betacores::eval;
use betacores::models::{BetaConfig, GaussianModel};

fn main() -> betacores::Result<()> {
    let (n, d, m) = (2000, 5, 40);
    let clean = synthetic::gaussian(n, d, 1.0, 1)?;
    let ds = data::contaminate_gaussian_shift(&clean, 0.3, &vec![10.0; d], 1)?;
    let mut model = GaussianModel::isotropic(d)?;

    let base = BuildConfig { iterations: m, batch_size: 100, samples: 50, steps: 50, seed: 3, ..Default::default() };
    let robust = BuildConfig { beta: BetaConfig::robust(0.1)?, c0: 10.0, ..base.clone() };
    let classical = BuildConfig { beta: BetaConfig::classical(), c0: 1e-3, ..base };

    println!("{:<10} {:>14} {:>9} {:>8}", "method", "reverse KL", "outliers", "size");
    for (name, cfg) in [("beta-cores", &robust), ("classical", &classical)] {
        let (state, _) = builder::build(&ds, &mut model, cfg)?;
        report(name, &state.pairs(), &model, &ds)?;
    }
    let uniform = builder::uniform_baseline(n, m, 3)?;
    report("uniform", &uniform.pairs(), &model, &ds)
}

fn report(name: &str, w: &[(usize, f64)], model: &GaussianModel, ds: &data::Dataset) -> betacores::Result<()> {
    let kl = eval::reverse_kl_vs_clean(w, model, ds)?;
    let out = eval::outlier_fraction(w, ds)?;
    let size = w.iter().filter(|p| p.1 > 0.0).count();
    println!("{name:<10} {kl:>14.3} {out:>9.3} {size:>8}");
    Ok(())
}
