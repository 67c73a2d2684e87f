//! Automated offline A/B evaluation.
//!
//! The crate evaluates populations of policy variants against windows of
//! logged bandit feedback with importance-sampling estimators, searches the
//! variant space with a genetic algorithm, and keeps an append-only history
//! of evaluation runs with drift flags between consecutive runs.
//!
//! Module map:
//!
//! - [`logstore`]: logged-feedback records, JSON Lines ingestion, window selection
//! - [`policyspace`]: hyperparameter spaces, variants, and the linear-softmax policy family
//! - [`estimators`]: IS / CIS / NCIS value estimates with bootstrap intervals
//! - [`gasearch`]: generational genetic algorithm over a hyperparameter space
//! - [`orchestrator`]: periodic evaluation runs, results store, drift, reports
//! - [`banditsim`]: synthetic contextual bandit with exact policy values
//! - [`cli`]: the `offab` command-line front end

pub mod banditsim;
pub mod cli;
pub mod estimators;
pub mod gasearch;
pub mod logstore;
pub mod orchestrator;
pub mod policyspace;
pub mod rng;

pub use banditsim::SimConfig;
pub use estimators::{Estimate, EstimatorConfig, EstimatorKind};
pub use gasearch::{GaConfig, SearchResult};
pub use logstore::{LogDataset, LogRecord, WindowSpec};
pub use orchestrator::{EvaluationRun, ProgramConfig, RunStatus, Store};
pub use policyspace::{HyperparameterSpace, HyperparameterSpec, Policy, Variant};
