//! Harness for sequential multi-task in-context learning experiments.
//!
//! A language model (or a scripted stand-in) is shown several learning tasks
//! in a single growing prompt: one-dimensional linear functions, two-armed
//! bandits, and small real-world regression problems. The crate generates the
//! tasks, renders the prompts, queries the subject, co-simulates reference
//! learners on identical data, persists every trial, and runs the statistical
//! analyses over the resulting records.
//!
//! Module map:
//!
//! - [`tasks`]: task distributions and tabular dataset preparation
//! - [`prompts`]: prompt templates and completion decoding
//! - [`client`]: completion backends (HTTP completions/chat, scripted agents)
//! - [`baselines`]: Bayesian linear regression, Kalman bandit policies, random forest
//! - [`analysis`]: OLS and probit fits, design building, prior elicitation, metrics
//! - [`runner`]: experiment orchestration, persistence, resume

pub mod analysis;
pub mod baselines;
pub mod client;
pub mod prompts;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod tasks;

pub use analysis::RegressionFit;
pub use baselines::{ArmBelief, BlrPosterior, BlrPrior};
pub use client::{BackendConfig, BackendKind, CompletionBackend, CompletionRequest};
pub use runner::{RunConfig, TrialRecord};
pub use tasks::{BanditTask, Dataset, FunctionTask, RegressionEpisode};
