//! Neural-linear regression on the bundled housing table with poisoned
//! minibatches. Minibatches are the selection units; the network is
//! retrained on the weighted summary after every iteration.
//!
//! `cargo run --release --example neural_linear_housing`

use betacores::builder::{self, BuildConfig};
use betacores::eval;
use betacores::experiment::{self, ExperimentConfig};
use betacores::models::{BetaConfig, NeuralLinearModel};

fn main() -> betacores::Result<()> {
    let cfg = ExperimentConfig::from_json(r#"{"experiment":"neural-linear","data":{"source":"housing"}}"#)?;
    let setup = experiment::neural_linear_setup(&cfg, 0.3, 11)?;
    let train = &setup.train;
    let members = train.group_members()?;

    let mut model = NeuralLinearModel::new(train.d(), cfg.neural_linear.model.clone())?;
    let init: Vec<(usize, f64)> = members[setup.init_group].iter().map(|&i| (i, 1.0)).collect();
    model.mlp_train(train, &init, 500)?;
    model.attach(train);

    let build_cfg = BuildConfig {
        iterations: 10,
        batch_size: 10,
        samples: 50,
        steps: 50,
        c0: 10.0,
        beta: BetaConfig::robust(4.0)?,
        group_mode: true,
        init_indices: vec![setup.init_group],
        seed: 11,
        ..Default::default()
    };
    builder::build_with(train, &mut model, &build_cfg, |it, state, m| {
        let w = state.pointwise(Some(&members));
        let post = m.blr_posterior(train, &w)?;
        let rmse = setup.label_scale * eval::rmse(m, &post, &setup.test)?;
        let out = eval::outlier_fraction(&w, train)?;
        println!("iteration {it:>2}: {} batches, rmse {rmse:.3}, outlier fraction {out:.3}", state.len());
        Ok(())
    })?;
    Ok(())
}
