//! Loading, standardizing, projecting and contaminating data.
//!
//! `cargo run --example data_pipeline`

use betacores::data::{self, synthetic};
use betacores::experiment;

fn main() -> betacores::Result<()> {
    let housing = experiment::housing()?;
    println!("housing: {} rows, {} features", housing.n(), housing.d());
    let (std, _) = data::standardize(&housing)?;
    let pca = data::fit_pca(&std, 5)?;
    println!("top 5 components keep {:.1}% of the variance", 100.0 * pca.retained_fraction());

    let (train, test) = data::split_train_test(&std, 0.1, false, 1)?;
    let poisoned = data::contaminate_minibatches(&train, 10, 0.3, 0.7, 5f64.sqrt(), 1)?;
    println!(
        "train {} / test {}; {} poisoned rows in {} minibatches",
        train.n(),
        test.n(),
        poisoned.outlier_count(),
        poisoned.n_groups().unwrap_or(0)
    );

    let labeled = synthetic::logistic(1000, 4, 4.0, 2)?;
    let flipped = data::contaminate_supervised(&labeled, 0.1, 1.0, 2)?;
    println!("logistic data: {} of {} rows corrupted", flipped.outlier_count(), flipped.n());

    let text = "+1 1:0.5 3:2\n-1 2:1.5\n";
    let sparse = data::parse_sparse(text, 3)?;
    println!("sparse rows: {:?} {:?}, labels {:?}", sparse.row(0), sparse.row(1), sparse.labels());
    Ok(())
}
