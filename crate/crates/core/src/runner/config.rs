//! Run configuration: one TOML document per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::baselines::{ForestConfig, KalmanParams};
use crate::client::BackendConfig;
use crate::tasks::{BanditTaskParams, FunctionTaskParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Function,
    Bandit,
    Regression,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Function => "function",
            Experiment::Bandit => "bandit",
            Experiment::Regression => "regression",
        }
    }
}

/// What supervised predictions are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTarget {
    /// The noise-free function value at the queried input.
    NoiseFree,
    /// The noisy observation that is revealed afterwards.
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestParams {
    pub temperature: f64,
    /// 16 for numeric predictions and 8 for bandit choices when unset.
    pub max_tokens: Option<u32>,
}

impl Default for RequestParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionConfig {
    pub task: FunctionTaskParams,
    pub target: ScoreTarget,
    /// Noise variance of the default-prior BLR baseline.
    pub blr_noise_variance: f64,
}

impl Default for FunctionConfig {
    fn default() -> Self {
        Self { task: FunctionTaskParams::default(), target: ScoreTarget::NoiseFree, blr_noise_variance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub task: BanditTaskParams,
    /// Beliefs of the co-simulated baseline policies.
    pub kalman: KalmanParams,
    pub ucb_c: f64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self { task: BanditTaskParams::default(), kalman: KalmanParams::default(), ucb_c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    /// CSV files or directories of CSV files; the last column is the target.
    pub datasets: Vec<PathBuf>,
    pub points_per_task: usize,
    pub blr_noise_variance: f64,
    pub forest: ForestConfig,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self { datasets: Vec::new(), points_per_task: 5, blr_noise_variance: 1.0, forest: ForestConfig::default() }
    }
}

/// Prior elicitation before every task (function and bandit experiments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub enabled: bool,
    pub n_points: usize,
    pub grid: [f64; 2],
    pub n_probes: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { enabled: false, n_points: 20, grid: [0.0, 100.0], n_probes: 5, temperature: 1.0, max_tokens: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Z-score regression predictors.
    pub standardize: bool,
    /// RBF width for the similarity regression; `None` means 1 / dimension.
    pub gamma: Option<f64>,
    /// Filter used to replay the subject's beliefs in the strategy regression.
    pub kalman: KalmanParams,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { standardize: true, gamma: None, kalman: KalmanParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub n_simulations: usize,
    pub n_tasks: usize,
    /// Overrides the per-experiment trial count when set.
    pub trials_per_task: Option<usize>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Simulations run concurrently.
    pub workers: usize,
    /// Write one transcript file per query.
    pub transcripts: bool,
    pub request: RequestParams,
    pub backend: BackendConfig,
    pub function: FunctionConfig,
    pub bandit: BanditConfig,
    pub regression: RegressionConfig,
    pub probes: ProbeConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Function,
            n_simulations: 1,
            n_tasks: 5,
            trials_per_task: None,
            master_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            workers: 4,
            transcripts: true,
            request: RequestParams::default(),
            backend: BackendConfig::default(),
            function: FunctionConfig::default(),
            bandit: BanditConfig::default(),
            regression: RegressionConfig::default(),
            probes: ProbeConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RunnerError> {
        toml::from_str(text).map_err(|e| RunnerError::Config(vec![e.to_string()]))
    }

    pub fn to_toml_string(&self) -> Result<String, RunnerError> {
        toml::to_string(self).map_err(|e| RunnerError::Config(vec![e.to_string()]))
    }

    /// Parse a file and apply `key=value` overrides. Relative dataset paths
    /// resolve against the file's directory; `output_dir` stays relative to
    /// the working directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let mut value: toml::Value =
            toml::from_str(&text).map_err(|e| RunnerError::Config(vec![format!("{}: {e}", path.display())]))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut config: RunConfig = value.try_into().map_err(|e: toml::de::Error| RunnerError::Config(vec![e.to_string()]))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.regression.datasets.iter_mut().for_each(fix);
    }

    pub fn trials(&self) -> usize {
        self.trials_per_task.unwrap_or(match self.experiment {
            Experiment::Function => self.function.task.trials_per_task,
            Experiment::Bandit => self.bandit.task.trials_per_task,
            Experiment::Regression => self.regression.points_per_task,
        })
    }

    pub fn max_tokens(&self) -> u32 {
        self.request.max_tokens.unwrap_or(match self.experiment {
            Experiment::Bandit => 8,
            _ => 16,
        })
    }

    /// Field-level problems; empty when the configuration is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_simulations == 0 {
            out.push("n_simulations: must be >= 1".into());
        }
        if self.n_tasks == 0 {
            out.push("n_tasks: must be >= 1".into());
        }
        if self.trials() == 0 {
            out.push("trials_per_task: must be >= 1".into());
        }
        if self.workers == 0 {
            out.push("workers: must be >= 1".into());
        }
        if !(0.0..=2.0).contains(&self.request.temperature) {
            out.push(format!("request.temperature: must be in [0, 2], got {}", self.request.temperature));
        }
        if self.request.max_tokens == Some(0) {
            out.push("request.max_tokens: must be >= 1".into());
        }
        out.extend(self.backend.problems());
        match self.experiment {
            Experiment::Function => {
                if let Err(e) = self.function.task.validate() {
                    out.push(format!("function.task: {e}"));
                }
                if !(self.function.blr_noise_variance > 0.0) {
                    out.push("function.blr_noise_variance: must be > 0".into());
                }
            }
            Experiment::Bandit => {
                if let Err(e) = self.bandit.task.validate() {
                    out.push(format!("bandit.task: {e}"));
                }
                let k = &self.bandit.kalman;
                if !(k.prior_variance > 0.0 && k.obs_variance > 0.0) {
                    out.push("bandit.kalman: variances must be > 0".into());
                }
            }
            Experiment::Regression => {
                if self.regression.datasets.is_empty() {
                    out.push("regression.datasets: at least one path is required".into());
                }
                if self.regression.points_per_task == 0 {
                    out.push("regression.points_per_task: must be >= 1".into());
                }
                if self.trials() > self.regression.points_per_task {
                    out.push("trials_per_task: cannot exceed regression.points_per_task".into());
                }
                if self.regression.forest.n_trees == 0 || self.regression.forest.min_leaf == 0 {
                    out.push("regression.forest: n_trees and min_leaf must be >= 1".into());
                }
                if self.probes.enabled {
                    out.push("probes.enabled: prior probes exist for the function and bandit experiments only".into());
                }
            }
        }
        if self.probes.enabled {
            if self.probes.n_points == 0 || self.probes.n_probes == 0 {
                out.push("probes: n_points and n_probes must be >= 1".into());
            }
            if !(self.probes.grid[0] < self.probes.grid[1]) {
                out.push("probes.grid: lower bound must be below upper bound".into());
            }
            if !(0.0..=2.0).contains(&self.probes.temperature) {
                out.push("probes.temperature: must be in [0, 2]".into());
            }
        }
        if let Some(g) = self.analysis.gamma {
            if !(g > 0.0) {
                out.push("analysis.gamma: must be > 0".into());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(RunnerError::Config(p))
        }
    }
}

/// Parse the right-hand side of an override as TOML, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set a dotted key (`backend.kind=scripted`) inside a TOML document.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<(), RunnerError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| RunnerError::Config(vec![format!("override {assignment:?}: expected key=value")]))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(RunnerError::Config(vec![format!("override {assignment:?}: empty key segment")]));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| RunnerError::Config(vec![format!("override {key}: {part} is not a table")]))?;
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| RunnerError::Config(vec![format!("override {key}: parent is not a table")]))?;
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}
