//! Huber-style contamination: a chosen fraction of rows is replaced by draws
//! from an outlier distribution, and the ground-truth mask records which.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, ChaCha8Rng};

/// `floor(rate * n)`, robust to `0.3 * 5000 = 1499.999...` style rounding.
pub(crate) fn corrupted_count(rate: f64, n: usize) -> usize {
    (rate * n as f64 + 1e-9).floor() as usize
}

fn check_rate(rate: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("{what} {rate} outside [0, 1]")));
    }
    Ok(())
}

fn merged_mask(ds: &Dataset) -> Vec<bool> {
    ds.outlier_mask().map_or_else(|| vec![false; ds.n()], <[bool]>::to_vec)
}

/// One seeded half of the coordinates (`floor(d / 2)` of them), shared by all
/// feature-noise rows of a contamination call.
fn noisy_coordinates(d: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut coords = index::sample(rng, d, d / 2).into_vec();
    coords.sort_unstable();
    coords
}

fn add_feature_noise(
    features: &mut [f64],
    d: usize,
    row: usize,
    coords: &[usize],
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) {
    for &c in coords {
        let z: f64 = rng.sample(StandardNormal);
        features[row * d + c] = noise_sd * z;
    }
}

/// Replaces a uniformly random `floor(rate * N)` subset of rows with draws
/// from `N(shift_mean, I)`.
pub fn contaminate_gaussian_shift(
    ds: &Dataset,
    rate: f64,
    shift_mean: &[f64],
    seed: u64,
) -> Result<Dataset> {
    check_rate(rate, "contamination rate")?;
    if shift_mean.len() != ds.d() {
        return Err(Error::Dimension(format!(
            "shift mean has length {}, data has d={}",
            shift_mean.len(),
            ds.d()
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_CONTAMINATION);
    let (n, d) = (ds.n(), ds.d());
    let rows = index::sample(&mut rng, n, corrupted_count(rate, n)).into_vec();
    let mut mask = merged_mask(ds);
    let mut out = ds.clone();
    let features = out.features_mut();
    for &i in &rows {
        for c in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            features[i * d + c] = shift_mean[c] + z;
        }
        mask[i] = true;
    }
    out.with_outlier_mask(mask)
}

/// Feature noise plus label flips on two disjoint random subsets, each of
/// size `floor(rate * N)`.
///
/// Rows in the first subset get a fixed random half of their coordinates
/// replaced by `N(0, noise_sd^2)` draws; rows in the second subset have their
/// label negated.
pub fn contaminate_supervised(ds: &Dataset, rate: f64, noise_sd: f64, seed: u64) -> Result<Dataset> {
    check_rate(rate, "contamination rate")?;
    ds.require_labels()?;
    let (n, d) = (ds.n(), ds.d());
    let k = corrupted_count(rate, n);
    if 2 * k > n {
        return Err(Error::InvalidArgument(format!(
            "two disjoint subsets of {k} rows do not fit in {n} rows"
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_CONTAMINATION);
    let coords = noisy_coordinates(d, &mut rng);
    let chosen = index::sample(&mut rng, n, 2 * k).into_vec();
    let (noisy, flipped) = chosen.split_at(k);

    let mut mask = merged_mask(ds);
    let mut out = ds.clone();
    for &i in noisy {
        add_feature_noise(out.features_mut(), d, i, &coords, noise_sd, &mut rng);
        mask[i] = true;
    }
    let labels = out.labels_mut().expect("labels checked above");
    for &i in flipped {
        labels[i] = -labels[i];
        mask[i] = true;
    }
    out.with_outlier_mask(mask)
}

/// Poisons whole minibatches of a regression dataset.
///
/// Rows are shuffled with the seed and cut into contiguous batches of
/// `batch_size` (a trailing partial batch is kept but never poisoned).
/// `floor(rate * full_batches)` batches are chosen; in each, `floor(within *
/// batch_size)` rows are corrupted: the first half by feature noise on a fixed
/// random half of the coordinates, the rest by replacing the response with a
/// `N(0, noise_sd^2)` draw. The returned dataset's group ids are the batch ids.
pub fn contaminate_minibatches(
    ds: &Dataset,
    batch_size: usize,
    rate: f64,
    within_fraction: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    check_rate(rate, "contamination rate")?;
    check_rate(within_fraction, "per-batch corrupted fraction")?;
    ds.require_labels()?;
    let (n, d) = (ds.n(), ds.d());
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidArgument(format!("batch size {batch_size} for {n} rows")));
    }
    let mut rng = rng::stream(seed, rng::STREAM_CONTAMINATION);
    let coords = noisy_coordinates(d, &mut rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut batch_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        batch_of[i] = pos / batch_size;
    }
    let full_batches = n / batch_size;
    let poisoned = index::sample(&mut rng, full_batches, corrupted_count(rate, full_batches));
    let per_batch = corrupted_count(within_fraction, batch_size);

    let mut mask = merged_mask(ds);
    let mut out = ds.clone();
    for b in poisoned.iter() {
        let members = &order[b * batch_size..(b + 1) * batch_size];
        let picks = index::sample(&mut rng, batch_size, per_batch).into_vec();
        let (noisy, responses) = picks.split_at(per_batch / 2);
        for &p in noisy {
            add_feature_noise(out.features_mut(), d, members[p], &coords, noise_sd, &mut rng);
            mask[members[p]] = true;
        }
        for &p in responses {
            let z: f64 = rng.sample(StandardNormal);
            out.labels_mut().expect("labels checked above")[members[p]] = noise_sd * z;
            mask[members[p]] = true;
        }
    }
    out.with_outlier_mask(mask)?.with_groups(batch_of)
}

/// Per-group contamination of a classification dataset: in group `g`,
/// `floor(rates[g] * |g|)` rows become outliers, half through feature noise
/// and the rest through label flips.
pub fn contaminate_groups(ds: &Dataset, rates: &[f64], noise_sd: f64, seed: u64) -> Result<Dataset> {
    ds.require_labels()?;
    let members = ds.group_members()?;
    if rates.len() != members.len() {
        return Err(Error::Dimension(format!(
            "{} rates for {} groups",
            rates.len(),
            members.len()
        )));
    }
    for &r in rates {
        check_rate(r, "group contamination rate")?;
    }
    let d = ds.d();
    let mut rng = rng::stream(seed, rng::STREAM_CONTAMINATION);
    let coords = noisy_coordinates(d, &mut rng);
    let mut mask = merged_mask(ds);
    let mut out = ds.clone();
    for (rows, &rate) in members.iter().zip(rates) {
        let k = corrupted_count(rate, rows.len());
        let picks = index::sample(&mut rng, rows.len(), k).into_vec();
        let (noisy, flipped) = picks.split_at(k / 2);
        for &p in noisy {
            add_feature_noise(out.features_mut(), d, rows[p], &coords, noise_sd, &mut rng);
            mask[rows[p]] = true;
        }
        let labels = out.labels_mut().expect("labels checked above");
        for &p in flipped {
            labels[rows[p]] = -labels[rows[p]];
            mask[rows[p]] = true;
        }
    }
    out.with_outlier_mask(mask)
}
