//! Experiment orchestration with persistence and resume.
//!
//! A run directory holds `manifest.json`, `records.jsonl`, `priors.jsonl`
//! and `transcripts/`. Simulations are independent and run on a bounded
//! worker pool; their records are appended by a single writer in
//! simulation order, so identical seeds give byte-identical logs no matter
//! how the work was scheduled.

mod analyze;
mod config;
mod records;
mod simulate;
mod transcripts;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use analyze::{
    analyze_records, analyze_run, bandit_steps, effect_fit, similarity_rows, write_report, AnalysisReport, CurveRow,
    Effect, ExtremeRow, ANALYSIS_DIR,
};
pub use config::{
    apply_override, AnalysisConfig, BanditConfig, Experiment, FunctionConfig, ProbeConfig, RegressionConfig,
    RequestParams, RunConfig, ScoreTarget,
};
pub use records::{
    BaselineOutcome, PriorRecord, RunManifest, SimulationEntry, SimulationStatus, TrialInput, TrialRecord,
};
pub use simulate::{
    oracle_function_prior, run_simulation, ExperimentContext, SimulationOutput, BLR, BLR_DEFAULT, BLR_ORACLE, GREEDY,
    RANDOM, RANDOM_FOREST, UCB,
};
pub use transcripts::{read_transcript, transcript_hash, write_atomic, Recorder, TranscriptFile};

use crate::analysis::AnalysisError;
use crate::baselines::BaselineError;
use crate::client::{BackendFactory, ClientError};
use crate::prompts::PromptError;
use crate::rng::{simulation_seed, stream_seed, Stream};
use crate::tasks::TaskError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const PRIORS_FILE: &str = "priors.jsonl";
pub const TRANSCRIPTS_DIR: &str = "transcripts";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run directory {0} is locked by another process (remove {LOCK_FILE} if stale)")]
    Locked(PathBuf),
    #[error("refusing to resume: corrupt manifest {path}: {reason}")]
    CorruptManifest { path: PathBuf, reason: String },
    #[error("refusing to resume: {0}")]
    ConfigMismatch(String),
    #[error("no records in {0}")]
    MissingRecords(PathBuf),
    #[error("{path}:{line}: {reason}")]
    BadRecord { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] ClientError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl RunnerError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io { path: path.to_path_buf(), source }
    }
}

/// Identifier of everything that determines a run's records.
pub fn run_id(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.workers = 1;
    c.output_dir = PathBuf::new();
    c.backend.max_concurrency = 1;
    c.backend.request_log = None;
    let text = toml::to_string(&c).expect("config serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

/// Counters reported after every finished simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Progress {
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub invalid_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub run_id: String,
    pub output_dir: PathBuf,
    pub progress: Progress,
    pub records: usize,
    /// Simulations executed by this invocation (0 when already complete).
    pub executed: usize,
    pub queries: usize,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.progress.failed == 0 && self.progress.completed == self.progress.total
    }
}

/// Results of a run kept in memory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub records: Vec<TrialRecord>,
    pub priors: Vec<PriorRecord>,
    pub failures: Vec<(usize, String)>,
}

type Job<'a> = dyn Fn(usize) -> Result<SimulationOutput, RunnerError> + Sync + 'a;

/// Run `job` for every index on `workers` threads and hand results to
/// `sink` in index order.
fn execute(
    indices: &[usize],
    workers: usize,
    job: &Job<'_>,
    mut sink: impl FnMut(usize, Result<SimulationOutput, RunnerError>) -> Result<(), RunnerError>,
) -> Result<(), RunnerError> {
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers.clamp(1, indices.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= indices.len() {
                    break;
                }
                if tx.send((i, job(indices[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&expected) {
                if let Err(e) = sink(indices[expected], result) {
                    // stop handing out work; running simulations finish and are dropped
                    next.store(indices.len(), Ordering::SeqCst);
                    return Err(e);
                }
                expected += 1;
            }
        }
        Ok(())
    })
}

fn simulation_job<'a>(
    config: &'a RunConfig,
    ctx: &'a ExperimentContext,
    factory: &'a dyn BackendFactory,
    transcripts: Option<&'a Path>,
) -> impl Fn(usize) -> Result<SimulationOutput, RunnerError> + Sync + 'a {
    move |index| {
        let seed = simulation_seed(config.master_seed, index);
        let backend = factory.backend(index, stream_seed(seed, Stream::Agent))?;
        run_simulation(config, ctx, index, seed, backend, transcripts)
    }
}

/// Run every simulation without touching the disk.
pub fn run_in_memory(config: &RunConfig, factory: &dyn BackendFactory) -> Result<RunOutput, RunnerError> {
    config.validate()?;
    let ctx = ExperimentContext::load(config)?;
    let indices: Vec<usize> = (0..config.n_simulations).collect();
    let job = simulation_job(config, &ctx, factory, None);
    let mut out = RunOutput::default();
    execute(&indices, config.workers, &job, |index, result| {
        match result {
            Ok(sim) => {
                out.records.extend(sim.records);
                out.priors.extend(sim.priors);
            }
            Err(e) => out.failures.push((index, e.to_string())),
        }
        Ok(())
    })?;
    Ok(out)
}

/// Exclusive claim on a run directory.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, RunnerError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(RunnerError::Locked(dir.to_path_buf())),
            Err(e) => Err(RunnerError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest, RunnerError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| RunnerError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::CorruptManifest { path, reason: e.to_string() })
}

fn save_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), RunnerError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    write_atomic(&path, &bytes).map_err(|e| RunnerError::io(&path, e))
}

fn check_manifest(dir: &Path, manifest: &RunManifest, config: &RunConfig) -> Result<(), RunnerError> {
    let corrupt = |reason: String| RunnerError::CorruptManifest { path: dir.join(MANIFEST_FILE), reason };
    if manifest.run_id != run_id(&manifest.config) {
        return Err(corrupt("run id does not match the stored configuration".into()));
    }
    if manifest.run_id != run_id(config) {
        return Err(RunnerError::ConfigMismatch(format!(
            "{} was created by a different configuration (run {}, this config is run {})",
            dir.display(),
            manifest.run_id,
            run_id(config)
        )));
    }
    if manifest.simulations.len() != config.n_simulations
        || manifest.simulations.iter().enumerate().any(|(i, s)| {
            s.index != i || s.seed != simulation_seed(config.master_seed, i)
        })
    {
        return Err(corrupt("simulation table does not match the configuration".into()));
    }
    for (file, bytes) in [(RECORDS_FILE, manifest.records_bytes), (PRIORS_FILE, manifest.priors_bytes)] {
        let path = dir.join(file);
        let len = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
        if len < bytes {
            return Err(corrupt(format!("{file} is shorter ({len} bytes) than the committed {bytes} bytes")));
        }
    }
    Ok(())
}

fn truncate_to(path: &Path, len: u64) -> Result<(), RunnerError> {
    let f = OpenOptions::new().create(true).write(true).truncate(false).open(path).map_err(|e| RunnerError::io(path, e))?;
    f.set_len(len).map_err(|e| RunnerError::io(path, e))
}

fn append_lines<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<u64, RunnerError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("row serializes");
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().append(true).create(true).open(path).map_err(|e| RunnerError::io(path, e))?;
    f.write_all(&buf).map_err(|e| RunnerError::io(path, e))?;
    f.sync_data().map_err(|e| RunnerError::io(path, e))?;
    Ok(buf.len() as u64)
}

fn fresh_manifest(config: &RunConfig) -> RunManifest {
    RunManifest {
        run_id: run_id(config),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        simulations: (0..config.n_simulations)
            .map(|i| SimulationEntry {
                index: i,
                seed: simulation_seed(config.master_seed, i),
                status: SimulationStatus::Pending,
                cells_completed: 0,
                invalid_trials: 0,
                error: None,
            })
            .collect(),
        records_bytes: 0,
        priors_bytes: 0,
        total_records: 0,
        total_invalid: 0,
    }
}

fn progress_of(m: &RunManifest) -> Progress {
    Progress { total: m.simulations.len(), completed: m.completed(), failed: m.failed(), invalid_trials: m.total_invalid }
}

/// Run (or resume) an experiment in `config.output_dir`.
///
/// Completed simulations are skipped; failed and pending ones are run.
/// `progress` is called after each simulation is committed.
pub fn run_experiment(
    config: &RunConfig,
    factory: &dyn BackendFactory,
    progress: &mut dyn FnMut(&Progress),
) -> Result<RunSummary, RunnerError> {
    config.validate()?;
    let dir = config.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let _lock = RunLock::acquire(dir)?;
    let mut manifest = if dir.join(MANIFEST_FILE).exists() {
        let m = load_manifest(dir)?;
        check_manifest(dir, &m, config)?;
        m
    } else {
        fresh_manifest(config)
    };
    truncate_to(&dir.join(RECORDS_FILE), manifest.records_bytes)?;
    truncate_to(&dir.join(PRIORS_FILE), manifest.priors_bytes)?;
    let transcripts_dir = dir.join(TRANSCRIPTS_DIR);
    if config.transcripts {
        fs::create_dir_all(&transcripts_dir).map_err(|e| RunnerError::io(&transcripts_dir, e))?;
    }
    save_manifest(dir, &manifest)?;
    let todo: Vec<usize> = manifest
        .simulations
        .iter()
        .filter(|s| s.status != SimulationStatus::Complete)
        .map(|s| s.index)
        .collect();
    let mut executed = 0;
    let mut queries = 0;
    if !todo.is_empty() {
        let ctx = ExperimentContext::load(config)?;
        let job = simulation_job(config, &ctx, factory, config.transcripts.then_some(transcripts_dir.as_path()));
        let cells = config.n_tasks * config.trials();
        execute(&todo, config.workers, &job, |index, result| {
            executed += 1;
            let entry = &mut manifest.simulations[index];
            match result {
                Ok(sim) => {
                    queries += sim.queries;
                    let invalid = sim.invalid_trials();
                    let rb = append_lines(&dir.join(RECORDS_FILE), &sim.records)?;
                    let pb = append_lines(&dir.join(PRIORS_FILE), &sim.priors)?;
                    entry.status = SimulationStatus::Complete;
                    entry.cells_completed = cells;
                    entry.invalid_trials = invalid;
                    entry.error = None;
                    manifest.records_bytes += rb;
                    manifest.priors_bytes += pb;
                    manifest.total_records += sim.records.len();
                    manifest.total_invalid += invalid;
                }
                Err(e) => {
                    tracing::warn!("simulation {index} failed: {e}");
                    entry.status = SimulationStatus::Failed;
                    entry.error = Some(e.to_string());
                }
            }
            save_manifest(dir, &manifest)?;
            progress(&progress_of(&manifest));
            Ok(())
        })?;
    }
    Ok(RunSummary {
        run_id: manifest.run_id.clone(),
        output_dir: dir.to_path_buf(),
        progress: progress_of(&manifest),
        records: manifest.total_records,
        executed,
        queries,
    })
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, limit: u64) -> Result<Vec<T>, RunnerError> {
    let f = File::open(path).map_err(|e| RunnerError::io(path, e))?;
    let mut out = Vec::new();
    let mut consumed = 0u64;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| RunnerError::io(path, e))?;
        consumed += line.len() as u64 + 1;
        if consumed > limit {
            break;
        }
        let row = serde_json::from_str(&line).map_err(|e| RunnerError::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Committed records of a run directory.
pub fn load_records(dir: &Path) -> Result<Vec<TrialRecord>, RunnerError> {
    let manifest = load_manifest(dir)?;
    let path = dir.join(RECORDS_FILE);
    if !path.exists() || manifest.total_records == 0 {
        return Err(RunnerError::MissingRecords(dir.to_path_buf()));
    }
    read_jsonl(&path, manifest.records_bytes)
}

/// Committed prior-probe results of a run directory (empty when none).
pub fn load_priors(dir: &Path) -> Result<Vec<PriorRecord>, RunnerError> {
    let manifest = load_manifest(dir)?;
    let path = dir.join(PRIORS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(&path, manifest.priors_bytes)
}

/// Outcome of checking every stored prompt against its record.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuditReport {
    pub checked: usize,
    pub missing: usize,
    pub violations: Vec<String>,
}

/// Verify that the prompt of every trial shows exactly the completed
/// previous tasks plus the earlier trials of the current task.
pub fn audit_leakage(dir: &Path) -> Result<AuditReport, RunnerError> {
    use crate::client::{BanditView, SupervisedView};
    let manifest = load_manifest(dir)?;
    let trials = manifest.config.trials();
    let records = load_records(dir)?;
    let tdir = dir.join(TRANSCRIPTS_DIR);
    let mut report = AuditReport::default();
    for r in &records {
        let Some(file) = read_transcript(&tdir, &r.transcript) else {
            report.missing += 1;
            continue;
        };
        report.checked += 1;
        let prompt = &file.request.prompt;
        let id = format!("simulation {} task {} trial {}", r.simulation, r.task, r.trial);
        let (block_sizes, ok_query) = match &r.input {
            TrialInput::Bandit { .. } => match BanditView::parse(prompt).and_then(|v| Some((v.blocks, v.question?))) {
                Some((blocks, (_, casino))) => (blocks.iter().map(Vec::len).collect::<Vec<_>>(), casino == r.task),
                None => {
                    report.violations.push(format!("{id}: unreadable bandit prompt"));
                    continue;
                }
            },
            TrialInput::Function { x, .. } => match SupervisedView::parse(prompt) {
                Some(v) => (v.blocks.iter().map(Vec::len).collect(), v.query == vec![*x]),
                None => {
                    report.violations.push(format!("{id}: unreadable prompt"));
                    continue;
                }
            },
            TrialInput::Regression { x, .. } => match SupervisedView::parse(prompt) {
                Some(v) => (v.blocks.iter().map(Vec::len).collect(), v.query == *x),
                None => {
                    report.violations.push(format!("{id}: unreadable prompt"));
                    continue;
                }
            },
        };
        let mut expected = vec![trials; r.task - 1];
        expected.push(r.trial - 1);
        if block_sizes != expected {
            report.violations.push(format!("{id}: prompt blocks {block_sizes:?}, expected {expected:?}"));
        }
        if !ok_query {
            report.violations.push(format!("{id}: question does not match the recorded input"));
        }
    }
    Ok(report)
}
