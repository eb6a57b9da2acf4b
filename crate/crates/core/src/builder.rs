//! Incremental construction of sparse beta-posteriors.
//!
//! Each outer iteration draws posterior samples at the current weights, picks
//! the candidate whose centered term vector best correlates with the residual
//! `(N/B) 1^T g'_s - w^T g_s`, and then runs `T` steps of projected stochastic
//! gradient descent on the weights of the current support.
//!
//! In group mode the unit of selection is a group: its column is the sum of
//! the centered terms of its members and a single weight applies to all of
//! them.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{BetaConfig, BetaModel, ParamSamples};
use crate::rng::{self, ChaCha8Rng};

/// Columns whose sample standard deviation is below this carry no signal.
pub const DEGENERATE_SD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    /// Outer iterations `M`.
    pub iterations: usize,
    /// Minibatch size `B`.
    pub batch_size: usize,
    /// Posterior samples per estimate `S`.
    pub samples: usize,
    /// Projected SGD steps per outer iteration `T`.
    pub steps: usize,
    /// Step size scale: `gamma_t = c0 / t`.
    pub c0: f64,
    pub beta: BetaConfig,
    pub seed: u64,
    pub group_mode: bool,
    /// Units placed in the support before the first iteration.
    pub init_indices: Vec<usize>,
    pub init_weight: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            batch_size: 100,
            samples: 100,
            steps: 500,
            c0: 1.0,
            beta: BetaConfig { beta: 0.1, classical: false },
            seed: 0,
            group_mode: false,
            init_indices: Vec::new(),
            init_weight: 1.0,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if self.samples < 2 {
            return bad("samples must be at least 2");
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return bad("c0 must be positive");
        }
        if !(self.init_weight >= 0.0 && self.init_weight.is_finite()) {
            return bad("init_weight must be nonnegative");
        }
        self.beta.validate()
    }
}

/// Support and weights. Entry `k` of `weights` belongs to unit `support[k]`;
/// units not in the support have weight zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoresetState {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
}

impl CoresetState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn position(&self, unit: usize) -> Option<usize> {
        self.support.iter().position(|&u| u == unit)
    }

    pub fn weight(&self, unit: usize) -> f64 {
        self.position(unit).map_or(0.0, |k| self.weights[k])
    }

    /// Adds `unit` with weight zero unless present; returns its position.
    pub fn insert(&mut self, unit: usize) -> usize {
        match self.position(unit) {
            Some(k) => k,
            None => {
                self.support.push(unit);
                self.weights.push(0.0);
                self.support.len() - 1
            }
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Number of strictly positive weights.
    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn pairs(&self) -> Vec<(usize, f64)> {
        self.support.iter().copied().zip(self.weights.iter().copied()).collect()
    }

    /// Per-datapoint weights: each group weight spread over its members.
    pub fn pointwise(&self, groups: Option<&[Vec<usize>]>) -> Vec<(usize, f64)> {
        match groups {
            None => self.pairs(),
            Some(groups) => self
                .pairs()
                .into_iter()
                .flat_map(|(g, w)| groups[g].iter().map(move |&i| (i, w)))
                .collect(),
        }
    }

    /// Order-sensitive FNV-1a hash of the support and weight bits.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (u, w) in self.support.iter().zip(&self.weights) {
            for b in (*u as u64).to_le_bytes().into_iter().chain(w.to_bits().to_le_bytes()) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub selected_index: usize,
    /// `|I|`, including units whose weight was projected to zero.
    pub support_size: usize,
    pub total_weight: f64,
    pub wallclock_ms: f64,
    #[serde(skip)]
    pub weight_digest: u64,
}

/// Writes `iter,selected_index,support_size,total_weight,wallclock_ms` rows.
pub fn write_traces<W: Write>(out: W, traces: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in traces {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

/// Subtracts each column's mean over the rows (samples).
pub fn center_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let s = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / s;
        col.add_scalar_mut(-mean);
    }
    m
}

/// How units map to datapoints.
#[derive(Debug, Clone, Copy)]
pub enum Units<'a> {
    Points(usize),
    Groups(&'a [Vec<usize>]),
}

impl Units<'_> {
    pub fn count(&self) -> usize {
        match self {
            Units::Points(n) => *n,
            Units::Groups(g) => g.len(),
        }
    }

    fn groups(&self) -> Option<&[Vec<usize>]> {
        match self {
            Units::Points(_) => None,
            Units::Groups(g) => Some(g),
        }
    }
}

/// `S x |units|` matrix of centered term values; group columns sum their
/// members' terms.
pub fn center_f<M: BetaModel + ?Sized>(
    samples: &ParamSamples,
    units: &[usize],
    layout: Units<'_>,
    model: &M,
    ds: &Dataset,
    cfg: &BetaConfig,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(samples.count(), units.len());
    for (s, theta) in samples.iter().enumerate() {
        for (c, &u) in units.iter().enumerate() {
            m[(s, c)] = match layout {
                Units::Points(_) => model.term(ds, u, theta, cfg),
                Units::Groups(g) => g[u].iter().map(|&i| model.term(ds, i, theta, cfg)).sum(),
            };
        }
    }
    center_columns(m)
}

/// `r_s = (N/B) 1^T g'_s - w^T g_s` for every sample `s`.
pub fn residuals(g: &DMatrix<f64>, g_batch: &DMatrix<f64>, w: &[f64], n: usize) -> Vec<f64> {
    let scale = n as f64 / g_batch.ncols().max(1) as f64;
    (0..g.nrows())
        .map(|s| {
            let full: f64 = g_batch.row(s).iter().sum();
            let fit: f64 = g.row(s).iter().zip(w).map(|(a, b)| a * b).sum();
            scale * full - fit
        })
        .collect()
}

/// Correlation estimates with per-column degeneracy flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlations {
    pub coreset: Vec<f64>,
    pub batch: Vec<f64>,
    pub coreset_degenerate: Vec<bool>,
    pub batch_degenerate: Vec<bool>,
}

fn column_correlations(g: &DMatrix<f64>, r: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let s = g.nrows() as f64;
    g.column_iter()
        .map(|col| {
            let sd = (col.iter().map(|v| v * v).sum::<f64>() / s).sqrt();
            if sd < DEGENERATE_SD {
                (0.0, true)
            } else {
                (col.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / s / sd, false)
            }
        })
        .unzip()
}

pub fn estimate_correlations(g: &DMatrix<f64>, g_batch: &DMatrix<f64>, w: &[f64], n: usize) -> Correlations {
    let r = residuals(g, g_batch, w, n);
    let (coreset, coreset_degenerate) = column_correlations(g, &r);
    let (batch, batch_degenerate) = column_correlations(g_batch, &r);
    Correlations { coreset, batch, coreset_degenerate, batch_degenerate }
}

/// Greedy choice over `support ∪ batch`: absolute correlation for units
/// already in the support, signed correlation for new ones. Degenerate
/// columns only compete when every candidate is degenerate; ties go to the
/// smallest unit index.
pub fn select_next(corr: &Correlations, support: &[usize], batch: &[usize]) -> Result<usize> {
    let mut candidates: Vec<(usize, f64, bool)> = support
        .iter()
        .enumerate()
        .map(|(k, &u)| (u, corr.coreset[k].abs(), corr.coreset_degenerate[k]))
        .collect();
    for (k, &u) in batch.iter().enumerate() {
        if !support.contains(&u) {
            candidates.push((u, corr.batch[k], corr.batch_degenerate[k]));
        }
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates to select from".into()));
    }
    let all_degenerate = candidates.iter().all(|c| c.2);
    candidates
        .into_iter()
        .filter(|c| all_degenerate || !c.2)
        .fold(None::<(usize, f64)>, |best, (u, score, _)| match best {
            Some((bu, bs)) if bs > score || (bs == score && bu < u) => Some((bu, bs)),
            _ => Some((u, score)),
        })
        .map(|(u, _)| u)
        .ok_or_else(|| Error::InvalidArgument("no candidates to select from".into()))
}

/// `-(1/S) sum_s g_s r_s` over the support columns.
pub fn mc_gradient(g: &DMatrix<f64>, g_batch: &DMatrix<f64>, w: &[f64], n: usize) -> Vec<f64> {
    let r = residuals(g, g_batch, w, n);
    let s = g.nrows() as f64;
    g.column_iter().map(|col| -col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / s).collect()
}

/// `w <- max(w - gamma * grad, 0)`.
pub fn projected_step(w: &mut [f64], grad: &[f64], gamma: f64) {
    for (wi, gi) in w.iter_mut().zip(grad) {
        *wi = (*wi - gamma * gi).max(0.0);
    }
}

/// Inputs shared by the selection and reweighting phases.
struct Context<'a, M: ?Sized> {
    ds: &'a Dataset,
    model: &'a M,
    cfg: &'a BuildConfig,
    layout: Units<'a>,
}

impl<M: BetaModel + ?Sized> Context<'_, M> {
    fn sample(&self, state: &CoresetState, rng: &mut ChaCha8Rng) -> Result<ParamSamples> {
        let w = state.pointwise(self.layout.groups());
        self.model.sample_posterior(self.ds, &w, &self.cfg.beta, self.cfg.samples, rng)
    }

    fn minibatch(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.layout.count();
        index::sample(rng, n, self.cfg.batch_size.min(n)).into_vec()
    }

    fn matrices(&self, samples: &ParamSamples, support: &[usize], batch: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        let f = |units: &[usize]| center_f(samples, units, self.layout, self.model, self.ds, &self.cfg.beta);
        (f(support), f(batch))
    }

    fn select(&self, state: &CoresetState, sampler: &mut ChaCha8Rng, batcher: &mut ChaCha8Rng) -> Result<usize> {
        let samples = self.sample(state, sampler)?;
        let batch = self.minibatch(batcher);
        let (g, gb) = self.matrices(&samples, &state.support, &batch);
        let corr = estimate_correlations(&g, &gb, &state.weights, self.layout.count());
        select_next(&corr, &state.support, &batch)
    }

    fn reweight(&self, state: &mut CoresetState, sampler: &mut ChaCha8Rng, batcher: &mut ChaCha8Rng) -> Result<()> {
        for t in 1..=self.cfg.steps {
            let samples = self.sample(state, sampler)?;
            let batch = self.minibatch(batcher);
            let (g, gb) = self.matrices(&samples, &state.support, &batch);
            let grad = mc_gradient(&g, &gb, &state.weights, self.layout.count());
            projected_step(&mut state.weights, &grad, self.cfg.c0 / t as f64);
        }
        Ok(())
    }
}

/// `T` projected SGD steps on the support of `state`, using the builder's
/// random streams for `cfg.seed`.
pub fn reweight<M: BetaModel + ?Sized>(
    state: &mut CoresetState,
    model: &M,
    ds: &Dataset,
    cfg: &BuildConfig,
) -> Result<()> {
    cfg.validate()?;
    if state.is_empty() {
        return Err(Error::InvalidArgument("cannot reweight an empty support".into()));
    }
    let ctx = Context { ds, model, cfg, layout: Units::Points(ds.n()) };
    let mut sampler = rng::stream(cfg.seed, rng::STREAM_SAMPLER);
    let mut batcher = rng::stream(cfg.seed, rng::STREAM_MINIBATCH);
    ctx.reweight(state, &mut sampler, &mut batcher)
}

/// Runs the construction, calling `observer(iteration, state, model)` after
/// every outer iteration (1-based).
pub fn build_with<M, F>(
    ds: &Dataset,
    model: &mut M,
    cfg: &BuildConfig,
    mut observer: F,
) -> Result<(CoresetState, Vec<TraceRecord>)>
where
    M: BetaModel,
    F: FnMut(usize, &CoresetState, &M) -> Result<()>,
{
    cfg.validate()?;
    let members = if cfg.group_mode { Some(ds.group_members()?) } else { None };
    let layout = match &members {
        Some(g) => Units::Groups(g),
        None => Units::Points(ds.n()),
    };
    if layout.count() == 0 {
        return Err(Error::Empty);
    }
    let mut state = CoresetState::new();
    for &u in &cfg.init_indices {
        if u >= layout.count() {
            return Err(Error::InvalidArgument(format!("init index {u} out of range")));
        }
        let k = state.insert(u);
        state.weights[k] = cfg.init_weight;
    }
    let mut sampler = rng::stream(cfg.seed, rng::STREAM_SAMPLER);
    let mut batcher = rng::stream(cfg.seed, rng::STREAM_MINIBATCH);
    let start = Instant::now();
    let mut traces = Vec::with_capacity(cfg.iterations);
    for iter in 1..=cfg.iterations {
        let selected = {
            let ctx = Context { ds, model: &*model, cfg, layout };
            let selected = ctx.select(&state, &mut sampler, &mut batcher)?;
            state.insert(selected);
            ctx.reweight(&mut state, &mut sampler, &mut batcher)?;
            selected
        };
        model.after_iteration(ds, &state.pointwise(layout.groups()), iter)?;
        traces.push(TraceRecord {
            iter,
            selected_index: selected,
            support_size: state.len(),
            total_weight: state.total_weight(),
            wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
            weight_digest: state.digest(),
        });
        log::debug!("iteration {iter}: selected {selected}, |I| = {}", state.len());
        observer(iter, &state, model)?;
    }
    Ok((state, traces))
}

pub fn build<M: BetaModel>(ds: &Dataset, model: &mut M, cfg: &BuildConfig) -> Result<(CoresetState, Vec<TraceRecord>)> {
    build_with(ds, model, cfg, |_, _, _| Ok(()))
}

/// [`build`] over the groups given by `ds.group_ids()`.
pub fn build_groups<M: BetaModel>(
    ds: &Dataset,
    model: &mut M,
    cfg: &BuildConfig,
) -> Result<(CoresetState, Vec<TraceRecord>)> {
    if ds.group_ids().is_none() {
        return Err(Error::Missing("group ids"));
    }
    let cfg = BuildConfig { group_mode: true, ..cfg.clone() };
    build(ds, model, &cfg)
}

/// `m` of `n` units drawn without replacement, each with weight `n/m`. For a
/// fixed seed, smaller subsets are prefixes of larger ones.
pub fn uniform_baseline(n: usize, m: usize, seed: u64) -> Result<CoresetState> {
    if m > n {
        return Err(Error::InvalidArgument(format!("cannot draw {m} of {n} points")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::STREAM_BASELINE));
    order.truncate(m);
    let w = if m == 0 { 0.0 } else { n as f64 / m as f64 };
    Ok(CoresetState { weights: vec![w; m], support: order })
}

/// `count` distinct random rows, optionally restricted to unmasked ones.
pub fn random_init(ds: &Dataset, count: usize, inliers_only: bool, seed: u64) -> Result<Vec<usize>> {
    let pool: Vec<usize> = if inliers_only {
        let mask = ds.require_mask()?;
        (0..ds.n()).filter(|&i| !mask[i]).collect()
    } else {
        (0..ds.n()).collect()
    };
    if count > pool.len() {
        return Err(Error::InvalidArgument(format!("cannot draw {count} of {} rows", pool.len())));
    }
    let mut r = rng::stream(seed, rng::STREAM_INIT);
    Ok(index::sample(&mut r, pool.len(), count).into_iter().map(|k| pool[k]).collect())
}
