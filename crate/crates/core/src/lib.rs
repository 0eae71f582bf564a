//! Conformal, FDR-controlled detection of treatment responders.
//!
//! A treated subject is a *responder* when its (covariate, response) pair is
//! not distributed like an untreated subject with the same covariates. The
//! crate scores every treated subject with a responder forest trained to
//! separate untreated observations from treated ones plus held-out untreated
//! "knockoffs", turns the scores into conformal p-values calibrated on the
//! knockoffs (optionally propensity weighted), and applies Benjamini-Hochberg.
//!
//! Modules:
//! - [`dataset`]: data model, CSV I/O, knockoff splitting
//! - [`trees`]: CART classifier and random forest
//! - [`responder`]: responder trees/forest (the non-conformity scorer)
//! - [`conformal`]: p-values, BH and the end-to-end analysis
//! - [`propensity`]: logistic/forest propensity with cross-fitting
//! - [`baselines`]: global eCDF test, CQR with quantile boosting, AdaDetect-RF
//! - [`simulation`]: data-generating processes and the Monte Carlo harness

pub mod baselines;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod propensity;
pub mod responder;
pub mod simulation;
pub mod trees;


pub use conformal::{
    adadetect_pvalue, bh_adjust, card_analyze, card_fit, weighted_pvalue, CardAnalysis, CardConfig,
    PValueEntry, PValueReport,
};
pub use dataset::{load_csv, read_csv, split_knockoffs, write_csv, CsvSchema, Dataset, KnockoffSplit};
pub use error::{CardError, Result};
pub use responder::{fit_responder_forest, ResponderForest, ResponderForestParams, ResponderSample, ResponderTree};
pub use exec::{with_workers, Exec};
pub use propensity::{PropensityEstimates, PropensityMode};
pub use simulation::{run_experiment, Method, MethodSettings, RunMetrics, Scenario, ScenarioConfig, SigmaMode};

