//! Robust logistic regression with label flips and feature noise: test
//! accuracy of posteriors fitted on the β-Cores summary and on a uniform
//! subsample of the same size.
//!
//! `cargo run --release --example logistic_classification`

use betacores::builder::{self, BuildConfig};
use betacores::data::{self, synthetic};
use betacores::eval;
use betacores::models::{BetaConfig, LogisticModel};

fn main() -> betacores::Result<()> {
    let full = synthetic::logistic(3000, 5, 4.0, 2)?;
    let (train, test) = data::split_train_test(&full, 0.2, true, 2)?;
    let train = data::contaminate_supervised(&train, 0.2, 5f64.sqrt(), 2)?;
    let mut model = LogisticModel::isotropic(train.d(), 1.0)?;

    let cfg = BuildConfig {
        iterations: 30,
        batch_size: 100,
        samples: 50,
        steps: 30,
        beta: BetaConfig::robust(0.5)?,
        seed: 5,
        ..Default::default()
    };
    let (state, traces) = builder::build(&train, &mut model, &cfg)?;
    let last = traces.last().expect("one trace per iteration");
    println!("built {} points in {:.0} ms, total weight {:.1}", last.support_size, last.wallclock_ms, last.total_weight);

    let uniform = builder::uniform_baseline(train.n(), cfg.iterations, 5)?;
    for (name, w) in [("beta-cores", state.pairs()), ("uniform", uniform.pairs())] {
        let samples = model.laplace_sample(&train, &w, &BetaConfig::classical(), 200, 9)?;
        let acc = eval::predictive_accuracy(&samples, &test)?;
        let out = eval::outlier_fraction(&w, &train)?;
        println!("{name:<10} accuracy {acc:.3}  outlier fraction {out:.3}");
    }
    Ok(())
}
