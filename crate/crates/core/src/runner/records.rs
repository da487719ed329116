//! Row formats written by a run.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::analysis::PriorEstimate;

/// What the subject was asked about on a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialInput {
    Function {
        x: f64,
        /// Noisy observation revealed after the query, as displayed.
        observed_y: f64,
    },
    Bandit {
        /// Letters of arm 0 and arm 1.
        letters: [char; 2],
        /// Order in which the question named the machines.
        order: [char; 2],
        arm_means: [f64; 2],
    },
    Regression {
        dataset: String,
        row: usize,
        x: Vec<f64>,
    },
}

/// A reference learner's outcome on the same trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice: Option<usize>,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub simulation: usize,
    /// 1-based.
    pub task: usize,
    /// 1-based.
    pub trial: usize,
    pub input: TrialInput,
    pub completion: String,
    /// Parsed numeric prediction (supervised experiments).
    pub prediction: Option<f64>,
    /// Parsed arm choice (bandit).
    pub choice: Option<usize>,
    /// Arm actually played; a random arm when the choice was unparsable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub played_arm: Option<usize>,
    /// Scoring target, or the displayed reward on bandit trials.
    pub target: f64,
    /// Squared error or expected regret; present iff `valid`.
    pub loss: Option<f64>,
    pub valid: bool,
    /// Content hash of the transcript of this query.
    pub transcript: String,
    pub baselines: Vec<BaselineOutcome>,
}

impl TrialRecord {
    pub fn baseline(&self, name: &str) -> Option<&BaselineOutcome> {
        self.baselines.iter().find(|b| b.name == name)
    }
}

/// A prior probe result as written to `priors.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub simulation: usize,
    pub task: usize,
    pub estimate: Option<PriorEstimate>,
    /// Why no estimate could be formed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationEntry {
    pub index: usize,
    pub seed: u64,
    pub status: SimulationStatus,
    /// Completed (task, trial) cells; all or nothing per simulation.
    pub cells_completed: usize,
    pub invalid_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub code_version: String,
    pub config: RunConfig,
    pub simulations: Vec<SimulationEntry>,
    /// Byte length of the committed prefix of `records.jsonl`.
    pub records_bytes: u64,
    pub priors_bytes: u64,
    pub total_records: usize,
    pub total_invalid: usize,
}

impl RunManifest {
    pub fn completed(&self) -> usize {
        self.simulations.iter().filter(|s| s.status == SimulationStatus::Complete).count()
    }

    pub fn failed(&self) -> usize {
        self.simulations.iter().filter(|s| s.status == SimulationStatus::Failed).count()
    }

    pub fn is_complete(&self) -> bool {
        self.completed() == self.simulations.len()
    }
}
