//! One simulation of each experiment: tasks in sequence, one query per
//! trial, reference learners on the same data.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use super::config::{Experiment, RunConfig, ScoreTarget};
use super::records::{BaselineOutcome, PriorRecord, TrialInput, TrialRecord};
use super::transcripts::Recorder;
use super::RunnerError;
use crate::analysis::{estimate_bandit_prior, estimate_function_prior, AnalysisError, PriorEstimate, ProbeSettings};
use crate::baselines::{
    blr_predict, blr_update, design_row, policy_random, random_forest_fit, random_forest_predict, simulate_policy,
    BanditPolicy, BlrPrior,
};
use crate::client::{CompletionBackend, CompletionRequest};
use crate::prompts::{
    parse_choice_completion, parse_numeric_completion, render_bandit_prompt, render_function_prompt,
    render_regression_prompt, round_to, BanditHistory, BanditObservation, ExperimentKind, FunctionHistory,
    FunctionObservation, RegressionHistory, RegressionObservation,
};
use crate::rng::{stream_rng, Stream};
use crate::tasks::{
    bandit_reward, check_unique_names, load_dataset, prepare_dataset, sample_bandit_task, sample_function_task,
    sample_regression_episode, BanditTaskParams, FunctionTaskParams, PreparedDataset, TaskError, REGRESSION_FEATURES,
};

/// Baseline names as they appear in records and analysis tables.
pub const BLR_DEFAULT: &str = "blr_default";
pub const BLR_ORACLE: &str = "blr_oracle";
pub const BLR: &str = "blr";
pub const RANDOM_FOREST: &str = "random_forest";
pub const GREEDY: &str = "greedy";
pub const UCB: &str = "ucb";
pub const RANDOM: &str = "random";

/// Everything a simulation produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub index: usize,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
    pub priors: Vec<PriorRecord>,
    pub queries: usize,
}

impl SimulationOutput {
    pub fn invalid_trials(&self) -> usize {
        self.records.iter().filter(|r| !r.valid).count()
    }
}

/// Shared read-only inputs: the prepared regression datasets.
#[derive(Debug, Clone, Default)]
pub struct ExperimentContext {
    pub datasets: Vec<PreparedDataset>,
}

fn csv_files(path: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| RunnerError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

impl ExperimentContext {
    pub fn load(config: &RunConfig) -> Result<Self, RunnerError> {
        if config.experiment != Experiment::Regression {
            return Ok(Self::default());
        }
        let mut datasets = Vec::new();
        for root in &config.regression.datasets {
            for file in csv_files(root)? {
                let raw = load_dataset(&file)?;
                match prepare_dataset(&raw, REGRESSION_FEATURES) {
                    Ok(p) => datasets.push(p),
                    Err(e @ (TaskError::TooFewFeatures { .. } | TaskError::ConstantColumn { .. })) => {
                        tracing::warn!("skipping dataset {}: {e}", file.display());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        check_unique_names(&datasets)?;
        let eligible = datasets.iter().filter(|d| d.dataset.n_rows() >= config.regression.points_per_task).count();
        if eligible < config.n_tasks {
            return Err(TaskError::InsufficientDatasets { needed: config.n_tasks, available: eligible }.into());
        }
        Ok(Self { datasets })
    }
}

struct Sim<'a, 'b> {
    config: &'a RunConfig,
    index: usize,
    rec: Recorder<'b>,
    records: Vec<TrialRecord>,
    priors: Vec<PriorRecord>,
}

impl Sim<'_, '_> {
    fn request(&self, prompt: String, zero_shot: bool) -> CompletionRequest {
        CompletionRequest {
            temperature: self.config.request.temperature,
            max_tokens: self.config.max_tokens(),
            zero_shot,
            ..CompletionRequest::new(prompt, self.config.backend.model_name.clone())
        }
    }

    fn probe_settings(&self) -> ProbeSettings {
        ProbeSettings {
            model_name: self.config.backend.model_name.clone(),
            temperature: self.config.probes.temperature,
            max_tokens: self.config.probes.max_tokens,
        }
    }

    fn cell(&self, task: usize, trial: usize) -> String {
        format!("sim{}/task{task}/trial{trial}", self.index)
    }

    fn record_prior(&mut self, task: usize, result: Result<PriorEstimate, AnalysisError>) -> Result<(), RunnerError> {
        let (estimate, error) = match result {
            Ok(e) => (Some(e), None),
            Err(AnalysisError::Client(e)) => return Err(e.into()),
            Err(e) => (None, Some(e.to_string())),
        };
        self.priors.push(PriorRecord { simulation: self.index, task, estimate, error });
        Ok(())
    }
}

fn parse_prediction(text: &str) -> Option<f64> {
    parse_numeric_completion(text).ok().filter(|v| v.is_finite())
}

fn blr_mean(prior: &BlrPrior, data: &[(Vec<f64>, f64)], query: &[f64]) -> Result<f64, RunnerError> {
    let dim = prior.dim();
    let mut x = DMatrix::zeros(data.len(), dim);
    let mut y = DVector::zeros(data.len());
    for (i, (xi, yi)) in data.iter().enumerate() {
        x.set_row(i, &design_row(xi).transpose());
        y[i] = *yi;
    }
    let post = blr_update(prior, &x, &y)?;
    Ok(blr_predict(&post, &design_row(query))?.0)
}

fn scored(name: &str, prediction: Option<f64>, target: f64) -> BaselineOutcome {
    BaselineOutcome { name: name.into(), prediction, choice: None, loss: prediction.map(|p| (p - target).powi(2)) }
}

/// Prior matching the generative distribution of the function tasks.
/// Zero spreads are floored so the covariance stays invertible.
pub fn oracle_function_prior(params: &FunctionTaskParams) -> BlrPrior {
    let floor = |v: f64| v.max(1e-12);
    BlrPrior {
        mean: DVector::from_vec(vec![params.slope_mean, params.intercept_mean]),
        covariance: DMatrix::from_diagonal(&DVector::from_vec(vec![
            floor(params.slope_sd.powi(2)),
            floor(params.intercept_sd.powi(2)),
        ])),
        noise_variance: params.noise_sd.powi(2).max(1e-6),
    }
}

/// Run simulation `index` with seed `seed`.
pub fn run_simulation(
    config: &RunConfig,
    ctx: &ExperimentContext,
    index: usize,
    seed: u64,
    backend: Box<dyn CompletionBackend>,
    transcripts: Option<&Path>,
) -> Result<SimulationOutput, RunnerError> {
    let mut sim = Sim { config, index, rec: Recorder::new(backend, transcripts), records: Vec::new(), priors: Vec::new() };
    match config.experiment {
        Experiment::Function => function_simulation(&mut sim, seed)?,
        Experiment::Bandit => bandit_simulation(&mut sim, seed)?,
        Experiment::Regression => regression_simulation(&mut sim, ctx, seed)?,
    }
    Ok(SimulationOutput { index, seed, queries: sim.rec.queries, records: sim.records, priors: sim.priors })
}

fn function_simulation(sim: &mut Sim, seed: u64) -> Result<(), RunnerError> {
    let cfg = sim.config;
    let trials = cfg.trials();
    let params = FunctionTaskParams { trials_per_task: trials, ..cfg.function.task.clone() };
    let mut task_rng = stream_rng(seed, Stream::Tasks);
    let mut env = stream_rng(seed, Stream::Environment);
    let default_prior = BlrPrior::standard_normal(2, cfg.function.blr_noise_variance);
    let oracle_prior = oracle_function_prior(&params);
    let mut history = FunctionHistory::new(cfg.n_tasks);
    for t in 1..=cfg.n_tasks {
        let task = sample_function_task(&mut task_rng, &params);
        if cfg.probes.enabled {
            sim.rec.enter(format!("sim{}/prior{t}", sim.index), ExperimentKind::PriorProbe);
            let settings = sim.probe_settings();
            let grid = (cfg.probes.grid[0], cfg.probes.grid[1]);
            let result = estimate_function_prior(&mut sim.rec, &settings, &history, cfg.probes.n_points, grid);
            sim.record_prior(t, result)?;
        }
        history.start_task();
        for k in 1..=trials {
            let x = task.sample_input(&mut env).round();
            let observed = task.observe_at(x, &mut env).round();
            let target = match cfg.function.target {
                ScoreTarget::NoiseFree => task.value(x),
                ScoreTarget::Noisy => observed,
            };
            let request = sim.request(render_function_prompt(&history, x), history.n_observations() == 0);
            sim.rec.enter(sim.cell(t, k), ExperimentKind::Function);
            let (completion, transcript) = sim.rec.query(&request, parse_prediction)?;
            let prediction = parse_prediction(&completion);
            let data: Vec<(Vec<f64>, f64)> =
                history.tasks.last().into_iter().flatten().map(|o| (vec![o.x], o.y)).collect();
            let baselines = vec![
                scored(BLR_DEFAULT, Some(blr_mean(&default_prior, &data, &[x])?), target),
                scored(BLR_ORACLE, Some(blr_mean(&oracle_prior, &data, &[x])?), target),
            ];
            sim.records.push(TrialRecord {
                simulation: sim.index,
                task: t,
                trial: k,
                input: TrialInput::Function { x, observed_y: observed },
                completion,
                prediction,
                choice: None,
                played_arm: None,
                target,
                loss: prediction.map(|p| (p - target).powi(2)),
                valid: prediction.is_some(),
                transcript,
                baselines,
            });
            history.push(FunctionObservation { x, y: observed });
        }
    }
    Ok(())
}

fn bandit_simulation(sim: &mut Sim, seed: u64) -> Result<(), RunnerError> {
    let cfg = sim.config;
    let trials = cfg.trials();
    let params = BanditTaskParams { trials_per_task: trials, ..cfg.bandit.task.clone() };
    let mut task_rng = stream_rng(seed, Stream::Tasks);
    let mut env = stream_rng(seed, Stream::Environment);
    let mut presentation = stream_rng(seed, Stream::Presentation);
    let mut base_rng = stream_rng(seed, Stream::Baselines);
    let policies = [
        (GREEDY, BanditPolicy::Greedy),
        (UCB, BanditPolicy::Ucb { c: cfg.bandit.ucb_c }),
        (RANDOM, BanditPolicy::Random),
    ];
    let mut history = BanditHistory::new(cfg.n_tasks);
    for t in 1..=cfg.n_tasks {
        let task = sample_bandit_task(&mut task_rng, &params);
        if cfg.probes.enabled {
            sim.rec.enter(format!("sim{}/prior{t}", sim.index), ExperimentKind::PriorProbe);
            let settings = sim.probe_settings();
            let result =
                estimate_bandit_prior(&mut sim.rec, &settings, &history, task.letters[0], cfg.probes.n_probes, trials);
            sim.record_prior(t, result)?;
        }
        let best = task.best_mean();
        let reference: Vec<Vec<(usize, f64)>> = policies
            .iter()
            .map(|(_, p)| simulate_policy(&task, *p, &cfg.bandit.kalman, trials, &mut base_rng))
            .collect();
        history.start_task();
        for k in 1..=trials {
            let (prompt, order) = render_bandit_prompt(&history, trials, task.letters, &mut presentation);
            let request = sim.request(prompt, history.n_observations() == 0);
            sim.rec.enter(sim.cell(t, k), ExperimentKind::Bandit);
            let choose = |c: &str| {
                parse_choice_completion(c, order).ok().and_then(|i| task.arm_of_letter(order[i])).map(|a| a as f64)
            };
            let (completion, transcript) = sim.rec.query(&request, choose)?;
            let choice = choose(&completion).map(|a| a as usize);
            let played = match choice {
                Some(a) => a,
                None => policy_random(&mut presentation),
            };
            let reward = round_to(bandit_reward(&task, played, &mut env)?, 1);
            let baselines = policies
                .iter()
                .zip(&reference)
                .map(|((name, _), path)| {
                    let arm = path[k - 1].0;
                    BaselineOutcome {
                        name: (*name).into(),
                        prediction: None,
                        choice: Some(arm),
                        loss: Some(best - task.arm_means[arm]),
                    }
                })
                .collect();
            sim.records.push(TrialRecord {
                simulation: sim.index,
                task: t,
                trial: k,
                input: TrialInput::Bandit { letters: task.letters, order, arm_means: task.arm_means },
                completion,
                prediction: None,
                choice,
                played_arm: Some(played),
                target: reward,
                loss: choice.map(|a| best - task.arm_means[a]),
                valid: choice.is_some(),
                transcript,
                baselines,
            });
            history.push(BanditObservation { letter: task.letters[played], reward });
        }
    }
    Ok(())
}

fn regression_simulation(sim: &mut Sim, ctx: &ExperimentContext, seed: u64) -> Result<(), RunnerError> {
    let cfg = sim.config;
    let trials = cfg.trials();
    let mut task_rng = stream_rng(seed, Stream::Tasks);
    let mut base_rng = stream_rng(seed, Stream::Baselines);
    let episode = sample_regression_episode(&ctx.datasets, &mut task_rng, cfg.n_tasks, cfg.regression.points_per_task)?;
    let prior = BlrPrior::standard_normal(REGRESSION_FEATURES + 1, cfg.regression.blr_noise_variance);
    let mut history = RegressionHistory::new(cfg.n_tasks);
    for (ti, et) in episode.tasks.iter().enumerate() {
        let t = ti + 1;
        let ds = &ctx.datasets[et.dataset_index].dataset;
        history.start_task();
        for k in 1..=trials {
            let row = et.rows[k - 1];
            let x: Vec<f64> = ds.features[row].iter().map(|v| round_to(*v, 2)).collect();
            let target = round_to(ds.targets[row], 2);
            let request = sim.request(render_regression_prompt(&history, &x)?, history.n_observations() == 0);
            sim.rec.enter(sim.cell(t, k), ExperimentKind::Regression);
            let (completion, transcript) = sim.rec.query(&request, parse_prediction)?;
            let prediction = parse_prediction(&completion);
            let data: Vec<(Vec<f64>, f64)> =
                history.tasks.last().into_iter().flatten().map(|o| (o.x.clone(), o.y)).collect();
            let forest = if data.is_empty() {
                None
            } else {
                let xs: Vec<Vec<f64>> = data.iter().map(|d| d.0.clone()).collect();
                let ys: Vec<f64> = data.iter().map(|d| d.1).collect();
                let f = random_forest_fit(&xs, &ys, &cfg.regression.forest, &mut base_rng)?;
                Some(random_forest_predict(&f, &x)?)
            };
            let baselines =
                vec![scored(BLR, Some(blr_mean(&prior, &data, &x)?), target), scored(RANDOM_FOREST, forest, target)];
            sim.records.push(TrialRecord {
                simulation: sim.index,
                task: t,
                trial: k,
                input: TrialInput::Regression { dataset: et.dataset.clone(), row, x: x.clone() },
                completion,
                prediction,
                choice: None,
                played_arm: None,
                target,
                loss: prediction.map(|p| (p - target).powi(2)),
                valid: prediction.is_some(),
                transcript,
                baselines,
            });
            history.push(RegressionObservation { x, y: target });
        }
    }
    Ok(())
}
