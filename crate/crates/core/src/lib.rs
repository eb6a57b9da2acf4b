//! Outlier-robust sparse Bayesian coresets.
//!
//! A coreset is a small weighted subset of a dataset whose weighted posterior
//! stands in for the full-data posterior. This crate builds coresets whose
//! posterior targets the beta-divergence (density power divergence) posterior
//!
//! ```text
//! pi_{beta,w}(theta) ∝ exp(sum_n w_n f_n(theta)) pi_0(theta)
//! ```
//!
//! where `f_n` is the per-point beta-likelihood term. Points that the model
//! explains poorly have nearly constant `f_n`, so they carry almost no
//! correlation with the residual and are never picked by the greedy step.
//!
//! Layout:
//!
//! - [`data`]: loading, preprocessing, splitting, grouping and contamination.
//! - [`models`]: beta-likelihood terms and posterior samplers for the
//!   Gaussian-mean, logistic-regression and neural-linear models, plus an
//!   exactly enumerable discrete model used as a test oracle.
//! - [`builder`]: the incremental construction (greedy correlation selection
//!   followed by projected stochastic gradient reweighting), group mode and
//!   the uniform baseline.
//! - [`eval`]: KL divergences, predictive accuracy, RMSE and outlier mass.
//! - [`experiment`]: JSON-configured multi-trial runs and CSV aggregation.

pub mod builder;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod selftest;

pub use builder::{BuildConfig, CoresetState, TraceRecord};
pub use data::Dataset;
pub use error::{Error, Result};
pub use models::{BetaConfig, BetaModel, ParamSamples};
