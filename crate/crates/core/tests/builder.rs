use betacores::builder::{
    self, center_columns, center_f, estimate_correlations, mc_gradient, projected_step, residuals, select_next,
    Correlations, Units,
};
use betacores::models::{DiscreteToyModel, GaussianModel, LogisticModel};
use betacores::{data::synthetic, BetaConfig, BetaModel, BuildConfig, CoresetState, Dataset, Error, ParamSamples};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(seed: u64, j: usize, n: usize) -> DiscreteToyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let table = (0..j * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    DiscreteToyModel::new(raw.iter().map(|p| p / total).collect(), table, n).unwrap()
}

fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..=n - (k - cur.len()) {
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

#[test]
fn minibatch_sum_is_unbiased_over_all_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, b) = (30, 5);
    let g: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let full: f64 = g.iter().sum();
    let (mut total, mut count) = (0.0, 0u64);
    for_each_subset(n, b, &mut |batch| {
        let gb = DMatrix::from_row_slice(1, b, &batch.iter().map(|&i| g[i]).collect::<Vec<_>>());
        let empty = DMatrix::zeros(1, 0);
        total += residuals(&empty, &gb, &[], n)[0];
        count += 1;
    });
    assert_eq!(count, 142_506);
    assert!((total / count as f64 - full).abs() < 1e-9 * (1.0 + full.abs()));
}

#[test]
fn hand_correlation_case() {
    let g = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]);
    // With w = 0 the residual is the scaled minibatch sum; B = N = 1 here.
    let gb = DMatrix::from_column_slice(3, 1, &[-2.0, 0.0, 2.0]);
    let corr = estimate_correlations(&g, &gb, &[0.0], 1);
    assert!((corr.coreset[0] - (4.0 / 3.0) / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn aligned_column_has_residual_sd() {
    let r = [1.0, -2.0, 0.5, 0.5];
    let g = DMatrix::from_column_slice(4, 1, &r);
    let corr = estimate_correlations(&DMatrix::zeros(4, 0), &g, &[], 1);
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((corr.batch[0] - norm / 2.0).abs() < 1e-12);
}

#[test]
fn full_support_unit_weights_is_stationary() {
    let toy = toy(2, 6, 8);
    let ds = toy.dataset();
    let pairs: Vec<(usize, f64)> = (0..8).map(|i| (i, 1.0)).collect();
    let cfg = BetaConfig::classical();
    let samples = toy.sample_posterior(&ds, &pairs, &cfg, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let all: Vec<usize> = (0..8).collect();
    let g = center_f(&samples, &all, Units::Points(8), &toy, &ds, &cfg);
    let grad = mc_gradient(&g, &g, &[1.0; 8], 8);
    assert!(grad.iter().all(|&v| v == 0.0));
    assert!(toy.exact(&[1.0; 8]).gradient.iter().all(|v| v.abs() < 1e-12));
}

/// Centering with the sample mean shrinks the expected gradient by
/// `(S - 1) / S`; at small `S` the shrinkage is clearly visible.
#[test]
fn expected_mc_gradient_has_sample_mean_factor() {
    let (n, s, seeds) = (4, 5, 20_000);
    let toy = toy(5, 6, n);
    let ds = toy.dataset();
    let w = [0.3, 1.2, 0.0, 0.7];
    let pairs: Vec<(usize, f64)> = w.iter().copied().enumerate().collect();
    let all: Vec<usize> = (0..n).collect();
    let exact = toy.exact(&w).gradient;
    let cfg = BetaConfig::classical();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut sum, mut sum_sq) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..seeds {
        let samples = toy.sample_posterior(&ds, &pairs, &cfg, s, &mut rng).unwrap();
        let g = center_f(&samples, &all, Units::Points(n), &toy, &ds, &cfg);
        for (k, v) in mc_gradient(&g, &g, &w, n).into_iter().enumerate() {
            sum[k] += v;
            sum_sq[k] += v * v;
        }
    }
    let m = seeds as f64;
    let shrink = (s as f64 - 1.0) / s as f64;
    for k in 0..n {
        let mean = sum[k] / m;
        let se = ((sum_sq[k] / m - mean * mean) / (m - 1.0)).sqrt();
        assert!((mean - shrink * exact[k]).abs() < 3.0 * se, "point {k}: {mean} vs {}", shrink * exact[k]);
    }
}

#[test]
fn toy_kl_non_increasing_under_exact_gradient_steps() {
    for seed in 0..10 {
        let toy = toy(seed, 12, 7);
        let mut state = CoresetState::new();
        for u in [0, 3, 5] {
            let k = state.insert(u);
            state.weights[k] = 0.2;
        }
        let dense = |state: &CoresetState| {
            let mut w = vec![0.0; 7];
            for (u, v) in state.pairs() {
                w[u] = v;
            }
            w
        };
        let mut last = toy.kl(&dense(&state));
        for t in 1..=50 {
            let full = toy.exact(&dense(&state)).gradient;
            let grad: Vec<f64> = state.support.iter().map(|&u| full[u]).collect();
            projected_step(&mut state.weights, &grad, 1e-2 / t as f64);
            let kl = toy.kl(&dense(&state));
            assert!(kl <= last + 1e-12, "seed {seed} step {t}: {last} -> {kl}");
            last = kl;
        }
    }
}

#[test]
fn zero_steps_leave_state_unchanged() {
    let ds = synthetic::gaussian(50, 2, 1.0, 1).unwrap();
    let model = GaussianModel::isotropic(2).unwrap();
    let mut state = CoresetState::new();
    let k = state.insert(7);
    state.weights[k] = 0.4;
    let before = state.clone();
    builder::reweight(&mut state, &model, &ds, &BuildConfig { steps: 0, ..Default::default() }).unwrap();
    assert_eq!(state, before);
    let mut empty = CoresetState::new();
    assert!(builder::reweight(&mut empty, &model, &ds, &BuildConfig::default()).is_err());
}

#[test]
fn single_point_single_iteration() {
    let ds = Dataset::new(1, 2, vec![0.5, 1.5]).unwrap();
    let mut model = GaussianModel::isotropic(2).unwrap();
    let cfg = BuildConfig { iterations: 1, steps: 10, ..Default::default() };
    let (state, traces) = builder::build(&ds, &mut model, &cfg).unwrap();
    assert_eq!(state.support, vec![0]);
    assert!(state.weights[0] >= 0.0);
    assert_eq!(traces.len(), 1);
}

#[test]
fn singleton_groups_reduce_to_points() {
    let ds = synthetic::logistic(60, 3, 3.0, 4).unwrap();
    let grouped = ds.clone().with_groups((0..60).collect()).unwrap();
    let cfg = BuildConfig {
        iterations: 5,
        steps: 10,
        batch_size: 10,
        samples: 10,
        beta: BetaConfig::robust(0.5).unwrap(),
        seed: 8,
        ..Default::default()
    };
    let (points, pt) = builder::build(&ds, &mut LogisticModel::isotropic(3, 1.0).unwrap(), &cfg).unwrap();
    let (groups, gt) = builder::build_groups(&grouped, &mut LogisticModel::isotropic(3, 1.0).unwrap(), &cfg).unwrap();
    assert_eq!(points, groups);
    let sel = |t: &[betacores::TraceRecord]| t.iter().map(|r| (r.selected_index, r.weight_digest)).collect::<Vec<_>>();
    assert_eq!(sel(&pt), sel(&gt));
}

#[test]
fn duplicate_groups_sum_and_tie_break() {
    let row = [0.3, -0.4];
    let ds = Dataset::from_rows(&[row.to_vec(), row.to_vec(), row.to_vec(), row.to_vec(), vec![2.0, 1.0]])
        .unwrap()
        .with_groups(vec![1, 1, 0, 0, 2])
        .unwrap();
    let members = ds.group_members().unwrap();
    let model = GaussianModel::isotropic(2).unwrap();
    let cfg = BetaConfig::robust(0.5).unwrap();
    let samples = model.sample_posterior(&ds, &[], &cfg, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let g = center_f(&samples, &[0, 1], Units::Groups(&members), &model, &ds, &cfg);
    let single = center_f(&samples, &[0], Units::Points(5), &model, &ds, &cfg);
    for s in 0..20 {
        assert_eq!(g[(s, 0)], g[(s, 1)]);
        assert!((g[(s, 0)] - 2.0 * single[(s, 0)]).abs() < 1e-12);
    }
    let corr = estimate_correlations(&DMatrix::zeros(20, 0), &g, &[], 3);
    assert_eq!(corr.batch[0], corr.batch[1]);
    assert_eq!(select_next(&corr, &[], &[1, 0]).unwrap(), 0);
}

#[test]
fn group_mode_needs_group_ids() {
    let ds = synthetic::logistic(20, 2, 3.0, 1).unwrap();
    let err = builder::build_groups(&ds, &mut LogisticModel::isotropic(2, 1.0).unwrap(), &BuildConfig::default());
    assert!(matches!(err, Err(Error::Missing(_))));
}

#[test]
fn group_run_selects_at_most_iteration_count() {
    let ds = synthetic::grouped_logistic(15, 8, 3, 3.0, 2).unwrap();
    let cfg = BuildConfig { iterations: 6, steps: 20, batch_size: 5, samples: 20, c0: 0.05, seed: 1, ..Default::default() };
    let (state, traces) = builder::build_groups(&ds, &mut LogisticModel::isotropic(3, 1.0).unwrap(), &cfg).unwrap();
    assert!(state.len() <= 6);
    assert!(state.support.iter().all(|&g| g < 15));
    assert_eq!(state.pointwise(Some(&ds.group_members().unwrap())).len(), 8 * state.len());
    assert_eq!(traces.last().unwrap().support_size, state.len());
}

#[test]
fn uniform_baseline_edges() {
    let all = builder::uniform_baseline(7, 7, 3).unwrap();
    let mut support = all.support.clone();
    support.sort();
    assert_eq!(support, (0..7).collect::<Vec<_>>());
    assert!(all.weights.iter().all(|&w| w == 1.0));
    let one = builder::uniform_baseline(7, 1, 3).unwrap();
    assert_eq!(one.weights, vec![7.0]);
    assert_eq!(builder::uniform_baseline(7, 4, 3).unwrap(), builder::uniform_baseline(7, 4, 3).unwrap());
    assert!(builder::uniform_baseline(7, 8, 3).is_err());
}

#[test]
fn trace_csv_columns() {
    let ds = synthetic::gaussian(30, 2, 1.0, 1).unwrap();
    let cfg = BuildConfig { iterations: 3, steps: 5, batch_size: 10, samples: 10, ..Default::default() };
    let (_, traces) = builder::build(&ds, &mut GaussianModel::isotropic(2).unwrap(), &cfg).unwrap();
    let mut buf = Vec::new();
    builder::write_traces(&mut buf, &traces).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,selected_index,support_size,total_weight,wallclock_ms"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn initial_support_gets_initial_weight() {
    let ds = synthetic::gaussian(40, 2, 1.0, 1).unwrap();
    let cfg = BuildConfig {
        iterations: 1,
        steps: 0,
        batch_size: 10,
        samples: 10,
        init_indices: vec![3, 9],
        init_weight: 2.5,
        ..Default::default()
    };
    let (state, _) = builder::build(&ds, &mut GaussianModel::isotropic(2).unwrap(), &cfg).unwrap();
    assert_eq!(state.weight(3), 2.5);
    assert_eq!(state.weight(9), 2.5);
    assert!(state.len() <= 3);
    let bad = BuildConfig { init_indices: vec![40], ..cfg };
    assert!(builder::build(&ds, &mut GaussianModel::isotropic(2).unwrap(), &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_never_negative(
        w in prop::collection::vec(0.0f64..1e3, 1..20),
        seed in any::<u64>(),
        gamma in 0.0f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grad: Vec<f64> = w.iter().map(|_| rng.random_range(-1e4..1e4)).collect();
        let mut out = w.clone();
        projected_step(&mut out, &grad, gamma);
        prop_assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn centering_zeroes_column_means(s in 2usize..60, cols in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(s, cols, |_, _| rng.random_range(-100.0..100.0));
        let c = center_columns(m);
        for col in c.column_iter() {
            prop_assert!((col.sum() / s as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_columns_center_to_zero(s in 2usize..60, value in -1e3f64..1e3) {
        let c = center_columns(DMatrix::from_element(s, 2, value));
        prop_assert!(c.iter().all(|v| v.abs() <= 1e-12 * (1.0 + value.abs())));
    }

    #[test]
    fn selection_returns_a_candidate(
        support_len in 0usize..6,
        batch_len in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support: Vec<usize> = index::sample(&mut rng, 20, support_len).into_vec();
        let batch: Vec<usize> = index::sample(&mut rng, 20, batch_len).into_vec();
        let corr = Correlations {
            coreset: (0..support_len).map(|_| rng.random_range(-3.0..3.0)).collect(),
            batch: (0..batch_len).map(|_| rng.random_range(-3.0..3.0)).collect(),
            coreset_degenerate: (0..support_len).map(|_| rng.random_bool(0.2)).collect(),
            batch_degenerate: (0..batch_len).map(|_| rng.random_bool(0.2)).collect(),
        };
        let pick = select_next(&corr, &support, &batch).unwrap();
        prop_assert!(support.contains(&pick) || batch.contains(&pick));
    }

    #[test]
    fn build_is_deterministic_and_sparse(seed in 0u64..1000, init in 0usize..3) {
        let ds = synthetic::gaussian(40, 2, 1.0, seed).unwrap();
        let cfg = BuildConfig {
            iterations: 4,
            steps: 5,
            batch_size: 8,
            samples: 6,
            seed,
            init_indices: (0..init).collect(),
            init_weight: 1.0,
            ..Default::default()
        };
        let model = GaussianModel::isotropic(2).unwrap();
        let mut seen = Vec::new();
        let (a, ta) = builder::build_with(&ds, &mut model.clone(), &cfg, |it, state, _| {
            seen.push((it, state.nonzero(), state.weights.iter().all(|&w| w >= 0.0)));
            Ok(())
        }).unwrap();
        let (b, tb) = builder::build(&ds, &mut model.clone(), &cfg).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(ta.iter().zip(&tb).all(|(x, y)| x.selected_index == y.selected_index && x.weight_digest == y.weight_digest));
        for (it, nz, nonneg) in seen {
            prop_assert!(nonneg);
            prop_assert!(nz <= it + init);
        }
    }
}

#[test]
fn samples_need_two_draws_for_centering() {
    let samples = ParamSamples::new(1, vec![0.5]).unwrap();
    let ds = Dataset::new(1, 1, vec![0.0]).unwrap();
    let g = center_f(&samples, &[0], Units::Points(1), &GaussianModel::isotropic(1).unwrap(), &ds, &BetaConfig::classical());
    assert_eq!(g[(0, 0)], 0.0);
    assert!(BuildConfig { samples: 1, ..Default::default() }.validate().is_err());
}
