//! JSON-configured experiment runs.
//!
//! A run is a grid of cells `(trial, F, method, beta)`. Each cell generates or
//! loads its data from the trial seed, builds a summary while checkpointing
//! every `checkpoint_every` iterations, and emits [`MetricPoint`]s. Cells are
//! independent; a failing cell is logged and skipped. Results are merged in
//! grid order, so output files depend only on the config.
//!
//! The `size` column of the metrics is the iteration count at the checkpoint.
//! Uniform baselines are evaluated at the same grid, holding as many units as
//! a summary would have added by that iteration.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::builder::{self, BuildConfig, CoresetState, TraceRecord};
use crate::data::{self, synthetic, Dataset, LabelKind, TableSchema};
use crate::error::{Error, Result};
use crate::eval::{self, MetricKind, MetricPoint};
use crate::models::{BetaConfig, BetaModel, GaussianModel, LogisticModel, NeuralLinearConfig, NeuralLinearModel};
use crate::rng;

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "BETACORES_OUTPUT_DIR";

/// The Boston housing table (506 rows, 13 features, `MEDV` response).
pub const HOUSING_CSV: &str = include_str!("../data/housing.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Gaussian,
    Logistic,
    NeuralLinear,
    Groups,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BetaCores,
    /// The same construction with log-likelihood terms.
    Classical,
    Uniform,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::BetaCores => "beta-cores",
            Method::Classical => "classical",
            Method::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        /// Row count; group runs take theirs from the group settings.
        #[serde(default)]
        n: usize,
        d: usize,
        /// Distance between class means (logistic and groups).
        #[serde(default = "default_separation")]
        separation: f64,
    },
    Csv {
        path: PathBuf,
        schema: TableSchema,
    },
    Sparse {
        path: PathBuf,
        d: usize,
    },
    /// The bundled housing table.
    Housing,
}

fn default_separation() -> f64 {
    4.0
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { n: 1000, d: 10, separation: default_separation() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianSettings {
    /// Every coordinate of the inlier mean.
    pub inlier_mean: f64,
    /// Every coordinate of the outlier mean.
    pub shift_mean: f64,
}

impl Default for GaussianSettings {
    fn default() -> Self {
        Self { inlier_mean: 1.0, shift_mean: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticSettings {
    pub prior_var: f64,
    pub test_fraction: f64,
    /// Share of the remaining rows held out (clean) for choosing beta.
    pub validation_fraction: f64,
    pub balanced_test: bool,
    pub noise_sd: f64,
    /// Laplace draws used for evaluation.
    pub eval_samples: usize,
    pub standardize: bool,
    pub pca: Option<usize>,
}

impl Default for LogisticSettings {
    fn default() -> Self {
        Self {
            prior_var: 1.0,
            test_fraction: 0.2,
            validation_fraction: 0.1,
            balanced_test: true,
            noise_sd: 5f64.sqrt(),
            eval_samples: 500,
            standardize: false,
            pca: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralLinearSettings {
    pub model: NeuralLinearConfig,
    pub test_size: usize,
    /// Contamination batch size; each iteration adds one such batch.
    pub batch_size: usize,
    pub within_fraction: f64,
    pub noise_sd: f64,
    pub init_size: usize,
    /// Draw the initial points from the inliers only.
    pub inlier_init: bool,
}

impl Default for NeuralLinearSettings {
    fn default() -> Self {
        Self {
            model: NeuralLinearConfig::default(),
            test_size: 50,
            batch_size: 10,
            within_fraction: 0.7,
            noise_sd: 5f64.sqrt(),
            init_size: 20,
            inlier_init: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSettings {
    pub groups: usize,
    pub group_size: usize,
    /// Group `g` is corrupted at `rates[g % rates.len()]`.
    pub rates: Vec<f64>,
    pub noise_sd: f64,
    pub prior_var: f64,
}

impl Default for GroupSettings {
    fn default() -> Self {
        Self { groups: 30, group_size: 50, rates: vec![0.0, 0.1, 0.2], noise_sd: 5f64.sqrt(), prior_var: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub build: BuildConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Beta grid for the robust method; the other methods ignore it.
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    /// Contamination rates `F`.
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default = "default_one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Per-method step scales replacing `build.c0`; the first match wins.
    #[serde(default)]
    pub step_overrides: Vec<StepOverride>,
    #[serde(default)]
    pub gaussian: GaussianSettings,
    #[serde(default)]
    pub logistic: LogisticSettings,
    #[serde(default)]
    pub neural_linear: NeuralLinearSettings,
    #[serde(default)]
    pub groups: GroupSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepOverride {
    pub method: Method,
    /// Matches every beta when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    pub c0: f64,
}

fn default_methods() -> Vec<Method> {
    vec![Method::BetaCores, Method::Classical, Method::Uniform]
}

fn default_betas() -> Vec<f64> {
    vec![0.1]
}

fn default_rates() -> Vec<f64> {
    vec![0.0]
}

fn default_one() -> usize {
    1
}

fn default_checkpoint() -> usize {
    10
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        // Relative data paths are taken from the config's directory.
        if let Some(dir) = path.parent() {
            match &mut cfg.data {
                DataSource::Csv { path, .. } | DataSource::Sparse { path, .. } if path.is_relative() => {
                    *path = dir.join(&*path);
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        if self.methods.contains(&Method::BetaCores) && self.betas.is_empty() {
            return bad("beta-cores needs at least one beta".into());
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return bad(format!("beta {b} must be positive"));
        }
        if let Some(f) = self.rates.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return bad(format!("contamination rate {f} outside [0, 1]"));
        }
        if self.rates.is_empty() {
            return bad("no contamination rates".into());
        }
        if let Some(o) = self.step_overrides.iter().find(|o| !(o.c0 > 0.0 && o.c0.is_finite())) {
            return bad(format!("step override c0 {} must be positive", o.c0));
        }
        if self.checkpoint_every < 1 {
            return bad("checkpoint_every must be at least 1".into());
        }
        self.build.validate()?;
        match self.experiment {
            ExperimentKind::Gaussian | ExperimentKind::Logistic => {
                if matches!(self.data, DataSource::Housing) {
                    return bad("the housing table is a regression dataset".into());
                }
            }
            ExperimentKind::NeuralLinear => {
                if !matches!(self.data, DataSource::Housing | DataSource::Csv { .. }) {
                    return bad("neural-linear runs need the housing table or a csv source".into());
                }
            }
            ExperimentKind::Groups => {
                if !matches!(self.data, DataSource::Synthetic { .. }) {
                    return bad("group runs use synthetic data".into());
                }
                if self.groups.rates.is_empty() {
                    return bad("group rates must not be empty".into());
                }
            }
        }
        Ok(())
    }

    /// `output_dir`, or the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output_dir.clone())
    }

    fn checkpoints(&self) -> Vec<usize> {
        let m = self.build.iterations;
        let mut c: Vec<usize> = (1..=m).filter(|i| i % self.checkpoint_every == 0).collect();
        if c.last() != Some(&m) {
            c.push(m);
        }
        c
    }
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub trial: usize,
    pub rate: f64,
    pub method: Method,
    pub beta: f64,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{}_b{}_F{}_t{}", self.method.as_str(), self.beta, self.rate, self.trial)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CellOutput {
    pub metrics: Vec<MetricPoint>,
    pub traces: Vec<TraceRecord>,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub metrics: Vec<MetricPoint>,
    pub traces: Vec<(Cell, Vec<TraceRecord>)>,
    pub failures: Vec<(Cell, String)>,
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for trial in 0..cfg.trials {
        for &rate in &cfg.rates {
            for &method in &cfg.methods {
                let betas = if method == Method::BetaCores { cfg.betas.clone() } else { vec![0.0] };
                for beta in betas {
                    out.push(Cell { trial, rate, method, beta });
                }
            }
        }
    }
    out
}

/// Runs every cell in memory, in parallel up to `cfg.workers`.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = cells(cfg);
    let results: Vec<Mutex<Option<Result<CellOutput>>>> = grid.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.workers.clamp(1, grid.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= grid.len() {
                    break;
                }
                let out = run_cell(cfg, &grid[k]);
                *results[k].lock().expect("result slot") = Some(out);
            });
        }
    });
    let mut run = RunOutput::default();
    for (cell, slot) in grid.into_iter().zip(results) {
        match slot.into_inner().expect("result slot").expect("every cell ran") {
            Ok(out) => {
                run.metrics.extend(out.metrics);
                run.traces.push((cell, out.traces));
            }
            Err(e) => {
                log::warn!("cell {} failed: {e}", cell.label());
                run.failures.push((cell, e.to_string()));
            }
        }
    }
    Ok(run)
}

/// Runs the grid and writes `metrics.csv`, `failures.csv` and one trace file
/// per cell under `traces/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let run = execute(cfg)?;
    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(dir.join("traces"))?;
    eval::write_metrics(fs::File::create(dir.join("metrics.csv"))?, &run.metrics)?;
    for (cell, traces) in &run.traces {
        builder::write_traces(fs::File::create(dir.join("traces").join(format!("{}.csv", cell.label())))?, traces)?;
    }
    let mut failures = csv::Writer::from_path(dir.join("failures.csv"))?;
    failures.write_record(["trial", "method", "beta", "F", "error"])?;
    for (cell, msg) in &run.failures {
        failures.write_record([
            cell.trial.to_string(),
            cell.method.as_str().to_string(),
            cell.beta.to_string(),
            cell.rate.to_string(),
            msg.clone(),
        ])?;
    }
    failures.flush()?;
    Ok(run)
}

pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<CellOutput> {
    match cfg.experiment {
        ExperimentKind::Gaussian => gaussian_cell(cfg, cell),
        ExperimentKind::Logistic => logistic_cell(cfg, cell),
        ExperimentKind::NeuralLinear => neural_linear_cell(cfg, cell),
        ExperimentKind::Groups => groups_cell(cfg, cell),
    }
}

/// Seeds shared by every method of one `(trial, F)` pair, so methods see the
/// same data.
fn data_seed(cfg: &ExperimentConfig, cell: &Cell) -> u64 {
    rng::derive_seed(cfg.seed, cell.trial as u64)
}

fn build_config(cfg: &ExperimentConfig, cell: &Cell) -> BuildConfig {
    let beta = match cell.method {
        Method::Classical => BetaConfig::classical(),
        _ => BetaConfig { beta: cell.beta, classical: false },
    };
    let c0 = cfg
        .step_overrides
        .iter()
        .find(|o| o.method == cell.method && o.beta.is_none_or(|b| b == cell.beta))
        .map_or(cfg.build.c0, |o| o.c0);
    BuildConfig { beta, c0, seed: rng::derive_seed(data_seed(cfg, cell), 0xB011D), ..cfg.build.clone() }
}

struct Recorder<'a> {
    cell: &'a Cell,
    points: Vec<MetricPoint>,
}

impl<'a> Recorder<'a> {
    fn new(cell: &'a Cell) -> Self {
        Self { cell, points: Vec::new() }
    }

    fn push(&mut self, size: usize, metric: MetricKind, value: f64) {
        self.points.push(MetricPoint {
            trial: self.cell.trial,
            method: self.cell.method.as_str().to_string(),
            beta: self.cell.beta,
            f: self.cell.rate,
            size,
            metric,
            value,
        });
    }
}

/// Runs the summary for a cell, calling `evaluate(iteration, pointwise
/// weights, unit state, model)` at every checkpoint. The uniform method draws
/// `units_at(iteration)` units instead of building.
fn run_method<M, E>(
    cfg: &ExperimentConfig,
    cell: &Cell,
    ds: &Dataset,
    model: &mut M,
    build_cfg: &BuildConfig,
    n_units: usize,
    units_at: impl Fn(usize) -> usize,
    mut evaluate: E,
) -> Result<Vec<TraceRecord>>
where
    M: BetaModel,
    E: FnMut(usize, &CoresetState, &M) -> Result<()>,
{
    let checkpoints = cfg.checkpoints();
    match cell.method {
        Method::Uniform => {
            let seed = build_cfg.seed;
            for &it in &checkpoints {
                let state = builder::uniform_baseline(n_units, units_at(it).min(n_units), seed)?;
                evaluate(it, &state, model)?;
            }
            Ok(Vec::new())
        }
        Method::BetaCores | Method::Classical => {
            let (_, traces) = builder::build_with(ds, model, build_cfg, |it, state, m| {
                if checkpoints.contains(&it) {
                    evaluate(it, state, m)?;
                }
                Ok(())
            })?;
            Ok(traces)
        }
    }
}

fn gaussian_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<CellOutput> {
    let seed = data_seed(cfg, cell);
    let DataSource::Synthetic { n, d, .. } = cfg.data else {
        let ds = load_source(&cfg.data)?;
        return gaussian_on(cfg, cell, ds, seed);
    };
    let clean = synthetic::gaussian(n, d, cfg.gaussian.inlier_mean, seed)?;
    gaussian_on(cfg, cell, clean, seed)
}

fn gaussian_on(cfg: &ExperimentConfig, cell: &Cell, clean: Dataset, seed: u64) -> Result<CellOutput> {
    let d = clean.d();
    let ds = data::contaminate_gaussian_shift(&clean, cell.rate, &vec![cfg.gaussian.shift_mean; d], seed)?;
    let mut model = GaussianModel::isotropic(d)?;
    let build_cfg = build_config(cfg, cell);
    let mut rec = Recorder::new(cell);
    let traces = run_method(cfg, cell, &ds, &mut model, &build_cfg, ds.n(), |it| it, |it, state, m| {
        let w = state.pairs();
        rec.push(it, MetricKind::ReverseKl, eval::reverse_kl_vs_clean(&w, m, &ds)?);
        rec.push(it, MetricKind::OutlierFraction, eval::outlier_fraction(&w, &ds)?);
        rec.push(it, MetricKind::SupportSize, state.nonzero() as f64);
        Ok(())
    })?;
    Ok(CellOutput { metrics: rec.points, traces })
}

fn load_source(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Csv { path, schema } => data::load_table(path, schema),
        DataSource::Sparse { path, d } => data::load_sparse(path, *d),
        DataSource::Housing => housing(),
        DataSource::Synthetic { .. } => Err(Error::Config("synthetic data has no file to load".into())),
    }
}

/// The bundled housing table with `MEDV` as the response.
pub fn housing() -> Result<Dataset> {
    data::parse_table(HOUSING_CSV, &TableSchema::labeled("MEDV", LabelKind::Regression))
}

/// Train, validation and test splits of a classification dataset; the
/// validation and test parts stay clean.
pub struct ClassificationSplits {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Dataset,
}

fn logistic_splits(cfg: &ExperimentConfig, seed: u64) -> Result<ClassificationSplits> {
    let s = &cfg.logistic;
    let full = match cfg.data {
        DataSource::Synthetic { n, d, separation } => synthetic::logistic(n, d, separation, seed)?,
        ref other => load_source(other)?,
    };
    let (rest, test) = data::split_train_test(&full, s.test_fraction, s.balanced_test, seed)?;
    let (mut train, mut validation) = if s.validation_fraction > 0.0 {
        let (t, v) = data::split_train_test(&rest, s.validation_fraction, false, rng::derive_seed(seed, 1))?;
        (t, Some(v))
    } else {
        (rest, None)
    };
    let mut test = test;
    if s.standardize || s.pca.is_some() {
        let (std_train, st) = data::standardize(&train)?;
        train = std_train;
        test = st.apply(&test)?;
        validation = validation.map(|v| st.apply(&v)).transpose()?;
        if let Some(k) = s.pca {
            let pca = data::fit_pca(&train, k)?;
            train = pca.project(&train)?;
            test = pca.project(&test)?;
            validation = validation.map(|v| pca.project(&v)).transpose()?;
        }
    }
    Ok(ClassificationSplits { train, validation, test })
}

fn logistic_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<CellOutput> {
    let seed = data_seed(cfg, cell);
    let splits = logistic_splits(cfg, seed)?;
    let s = &cfg.logistic;
    let train = data::contaminate_supervised(&splits.train, cell.rate, s.noise_sd, seed)?;
    let mut model = LogisticModel::isotropic(train.d(), s.prior_var)?;
    let build_cfg = build_config(cfg, cell);
    let eval_seed = rng::derive_seed(build_cfg.seed, 0xE7A1);
    let mut rec = Recorder::new(cell);
    let traces = run_method(cfg, cell, &train, &mut model, &build_cfg, train.n(), |it| it, |it, state, m| {
        let w = state.pairs();
        let samples = m.laplace_sample(&train, &w, &BetaConfig::classical(), s.eval_samples, eval_seed)?;
        rec.push(it, MetricKind::Accuracy, eval::predictive_accuracy(&samples, &splits.test)?);
        if let Some(v) = &splits.validation {
            rec.push(it, MetricKind::ValidationAccuracy, eval::predictive_accuracy(&samples, v)?);
        }
        rec.push(it, MetricKind::OutlierFraction, eval::outlier_fraction(&w, &train)?);
        rec.push(it, MetricKind::SupportSize, state.nonzero() as f64);
        Ok(())
    })?;
    Ok(CellOutput { metrics: rec.points, traces })
}

/// Regression splits for the neural-linear runs: features and response
/// standardized with training statistics, the training part contaminated in
/// minibatches whose ids become the group ids, and the initial points moved
/// into an extra group of their own (the last id).
pub struct RegressionSetup {
    pub train: Dataset,
    pub test: Dataset,
    /// Response scale, to report RMSE in original units.
    pub label_scale: f64,
    pub init_group: usize,
}

pub fn neural_linear_setup(cfg: &ExperimentConfig, rate: f64, seed: u64) -> Result<RegressionSetup> {
    let s = &cfg.neural_linear;
    let full = load_source(&cfg.data)?;
    if s.test_size == 0 || s.test_size >= full.n() {
        return Err(Error::Config(format!("test_size {} for {} rows", s.test_size, full.n())));
    }
    let (train, test) = data::split_train_test(&full, s.test_size as f64 / full.n() as f64, false, seed)?;
    let (train, st) = data::standardize(&train)?;
    let test = st.apply(&test)?;
    let (train, mean, scale) = data::standardize_labels(&train)?;
    let test_labels = test.require_labels()?.iter().map(|y| (y - mean) / scale).collect();
    let test = test.with_labels(test_labels)?;
    let train = data::contaminate_minibatches(&train, s.batch_size, rate, s.within_fraction, s.noise_sd, seed)?;
    let init = builder::random_init(&train, s.init_size, s.inlier_init, seed)?;
    let mut ids = train.group_ids().ok_or(Error::Missing("group ids"))?.to_vec();
    let init_group = ids.iter().max().map_or(0, |m| m + 1);
    for &i in &init {
        ids[i] = init_group;
    }
    // Keep ids dense if the moves emptied a batch.
    let ids = data::group_codes(&ids);
    let init_group = ids[init[0]];
    Ok(RegressionSetup { train: train.with_groups(ids)?, test, label_scale: scale, init_group })
}

fn neural_linear_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<CellOutput> {
    let seed = data_seed(cfg, cell);
    let setup = neural_linear_setup(cfg, cell.rate, seed)?;
    let train = &setup.train;
    let members = train.group_members()?;
    let mut model_cfg = cfg.neural_linear.model.clone();
    model_cfg.seed = rng::derive_seed(seed, 0x4E4C);
    let mut model = NeuralLinearModel::new(train.d(), model_cfg)?;
    let init_w: Vec<(usize, f64)> = members[setup.init_group].iter().map(|&i| (i, 1.0)).collect();
    let steps = model.config().mlp.steps;
    model.mlp_train(train, &init_w, steps)?;
    model.attach(train);

    let mut build_cfg = build_config(cfg, cell);
    build_cfg.group_mode = true;
    build_cfg.init_indices = vec![setup.init_group];
    let mut rec = Recorder::new(cell);
    let mut record = |it: usize, w: &[(usize, f64)], nonzero: usize, m: &NeuralLinearModel| -> Result<()> {
        let post = m.blr_posterior(train, w)?;
        rec.push(it, MetricKind::Rmse, setup.label_scale * eval::rmse(m, &post, &setup.test)?);
        rec.push(it, MetricKind::OutlierFraction, eval::outlier_fraction(w, train)?);
        rec.push(it, MetricKind::SupportSize, nonzero as f64);
        Ok(())
    };

    let traces = match cell.method {
        Method::Uniform => {
            // The initial group plus one random batch per iteration, the
            // network retrained on the current subset after each addition.
            let mut order: Vec<usize> = (0..members.len()).filter(|&g| g != setup.init_group).collect();
            order.shuffle(&mut rng::stream(build_cfg.seed, rng::STREAM_BASELINE));
            let checkpoints = cfg.checkpoints();
            for it in 1..=cfg.build.iterations {
                let mut chosen: Vec<usize> = members[setup.init_group].clone();
                for &g in order.iter().take(it) {
                    chosen.extend(&members[g]);
                }
                let weight = train.n() as f64 / chosen.len() as f64;
                let w: Vec<(usize, f64)> = chosen.iter().map(|&i| (i, weight)).collect();
                model.after_iteration(train, &w, it)?;
                if checkpoints.contains(&it) {
                    record(it, &w, w.len(), &model)?;
                }
            }
            Vec::new()
        }
        _ => {
            let checkpoints = cfg.checkpoints();
            let (_, traces) = builder::build_with(train, &mut model, &build_cfg, |it, state, m| {
                if checkpoints.contains(&it) {
                    let w = state.pointwise(Some(&members));
                    let nonzero = w.iter().filter(|p| p.1 > 0.0).count();
                    record(it, &w, nonzero, m)?;
                }
                Ok(())
            })?;
            traces
        }
    };
    Ok(CellOutput { metrics: rec.points, traces })
}

/// Synthetic grouped logistic data with group `g` corrupted at
/// `rates[g % rates.len()]`; returns the data and the clean-group flags.
pub fn groups_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Vec<bool>)> {
    let g = &cfg.groups;
    let (d, separation) = match cfg.data {
        DataSource::Synthetic { d, separation, .. } => (d, separation),
        _ => return Err(Error::Config("group runs use synthetic data".into())),
    };
    let ds = synthetic::grouped_logistic(g.groups, g.group_size, d, separation, seed)?;
    let rates: Vec<f64> = (0..g.groups).map(|k| g.rates[k % g.rates.len()]).collect();
    let clean = rates.iter().map(|r| *r == 0.0).collect();
    Ok((data::contaminate_groups(&ds, &rates, g.noise_sd, seed)?, clean))
}

fn groups_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<CellOutput> {
    let seed = data_seed(cfg, cell);
    let (ds, clean) = groups_dataset(cfg, seed)?;
    let members = ds.group_members()?;
    let mut model = LogisticModel::isotropic(ds.d(), cfg.groups.prior_var)?;
    let mut build_cfg = build_config(cfg, cell);
    build_cfg.group_mode = true;
    let mut rec = Recorder::new(cell);
    let traces = run_method(cfg, cell, &ds, &mut model, &build_cfg, members.len(), |it| it, |it, state, _| {
        rec.push(it, MetricKind::CleanGroupMass, eval::clean_group_mass(state, &clean)?);
        rec.push(it, MetricKind::OutlierFraction, eval::outlier_fraction(&state.pointwise(Some(&members)), &ds)?);
        rec.push(it, MetricKind::SupportSize, state.nonzero() as f64);
        Ok(())
    })?;
    Ok(CellOutput { metrics: rec.points, traces })
}

/// Linear-interpolation quantile of sorted values: position `q (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub beta: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub size: usize,
    pub metric: MetricKind,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Key(String, f64, f64, usize, MetricKind);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .cmp(&other.0)
            .then(self.1.total_cmp(&other.1))
            .then(self.2.total_cmp(&other.2))
            .then(self.3.cmp(&other.3))
            .then(self.4.cmp(&other.4))
    }
}

/// Median and quartiles across trials per `(method, beta, F, size, metric)`.
pub fn aggregate(points: &[MetricPoint]) -> Result<Vec<SummaryRow>> {
    if points.is_empty() {
        return Err(Error::Empty);
    }
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for p in points {
        groups.entry(Key(p.method.clone(), p.beta, p.f, p.size, p.metric)).or_default().push(p.value);
    }
    Ok(groups
        .into_iter()
        .map(|(Key(method, beta, f, size, metric), mut v)| {
            v.sort_by(f64::total_cmp);
            SummaryRow {
                method,
                beta,
                f,
                size,
                metric,
                median: quantile(&v, 0.5),
                q25: quantile(&v, 0.25),
                q75: quantile(&v, 0.75),
                trials: v.len(),
            }
        })
        .collect())
}

pub fn aggregate_csv<R: Read, W: std::io::Write>(input: R, output: W) -> Result<usize> {
    let rows = aggregate(&eval::read_metrics(input)?)?;
    let mut w = csv::Writer::from_writer(output);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows.len())
}
