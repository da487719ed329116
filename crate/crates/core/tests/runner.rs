use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use micl_core::client::{AgentSpec, ClientError, CompletionBackend, ScriptedAgent};
use micl_core::runner::{
    analyze_run, audit_leakage, load_manifest, load_records, read_transcript, run_experiment, run_in_memory,
    Experiment, RunConfig, RunnerError, SimulationStatus, TrialInput, BLR_DEFAULT, RECORDS_FILE, TRANSCRIPTS_DIR,
};
use micl_core::stats::mean;
use micl_core::{BackendConfig, CompletionRequest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scripted(agent: AgentSpec) -> BackendConfig {
    BackendConfig { agent: Some(agent), ..BackendConfig::default() }
}

fn config(experiment: Experiment, agent: AgentSpec, n_simulations: usize, dir: &Path) -> RunConfig {
    RunConfig {
        experiment,
        n_simulations,
        master_seed: 7,
        output_dir: dir.to_path_buf(),
        workers: 3,
        backend: scripted(agent),
        ..RunConfig::default()
    }
}

fn factory(cfg: &RunConfig) -> impl Fn(usize, u64) -> Result<Box<dyn CompletionBackend>, ClientError> + Sync {
    let agent = cfg.backend.agent.clone().unwrap();
    move |_, seed| Ok(Box::new(ScriptedAgent::new(agent.clone(), seed)) as Box<dyn CompletionBackend>)
}

fn blr() -> AgentSpec {
    AgentSpec::BlrMean { noise_variance: 1.0 }
}

/// Writes `n` small CSV datasets with five informative features.
fn write_datasets(dir: &Path, n: usize) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in 0..n {
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut text = String::from("a,b,c,d,e,f,target\n");
        for _ in 0..40 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.1 * rng.random::<f64>();
            let cells: Vec<String> = x.iter().chain([&y]).map(|v| format!("{v:.4}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        fs::write(dir.join(format!("set{d:02}.csv")), text).unwrap();
    }
}

#[test]
fn identical_seeds_give_identical_record_logs() {
    let tmp = tempfile::tempdir().unwrap();
    for experiment in [Experiment::Function, Experiment::Bandit] {
        let agent = if experiment == Experiment::Bandit { AgentSpec::thompson() } else { blr() };
        let a = config(experiment, agent.clone(), 6, &tmp.path().join(format!("{}-a", experiment.name())));
        let mut b = config(experiment, agent, 6, &tmp.path().join(format!("{}-b", experiment.name())));
        b.workers = 1;
        run_experiment(&a, &factory(&a), &mut |_| {}).unwrap();
        run_experiment(&b, &factory(&b), &mut |_| {}).unwrap();
        let ra = fs::read(a.output_dir.join(RECORDS_FILE)).unwrap();
        let rb = fs::read(b.output_dir.join(RECORDS_FILE)).unwrap();
        assert!(!ra.is_empty());
        assert_eq!(ra, rb, "{}", experiment.name());
    }
}

#[test]
fn different_seeds_differ() {
    let tmp = tempfile::tempdir().unwrap();
    let a = config(Experiment::Function, blr(), 2, &tmp.path().join("a"));
    let mut b = config(Experiment::Function, blr(), 2, &tmp.path().join("b"));
    b.master_seed = 8;
    let ra = run_in_memory(&a, &factory(&a)).unwrap().records;
    let rb = run_in_memory(&b, &factory(&b)).unwrap().records;
    assert_ne!(ra, rb);
}

#[test]
fn interrupted_run_resumes_to_the_uninterrupted_result() {
    let tmp = tempfile::tempdir().unwrap();
    let full = config(Experiment::Bandit, AgentSpec::thompson(), 8, &tmp.path().join("full"));
    run_experiment(&full, &factory(&full), &mut |_| {}).unwrap();

    let partial = RunConfig { output_dir: tmp.path().join("partial"), ..full.clone() };
    let base = factory(&partial);
    let failing = |sim: usize, seed: u64| {
        if sim % 2 == 1 {
            Err(ClientError::Transport { attempts: 1, message: "connection reset".into() })
        } else {
            base(sim, seed)
        }
    };
    let first = run_experiment(&partial, &failing, &mut |_| {}).unwrap();
    assert_eq!(first.progress.completed, 4);
    assert_eq!(first.progress.failed, 4);
    assert!(!first.is_complete());
    let m = load_manifest(&partial.output_dir).unwrap();
    assert_eq!(m.failed(), 4);
    assert!(m.simulations.iter().filter(|s| s.status == SimulationStatus::Failed).all(|s| s.error.is_some()));

    let second = run_experiment(&partial, &base, &mut |_| {}).unwrap();
    assert!(second.is_complete());
    assert_eq!(second.executed, 4);

    let mut a = load_records(&full.output_dir).unwrap();
    let mut b = load_records(&partial.output_dir).unwrap();
    let key = |r: &micl_core::TrialRecord| (r.simulation, r.task, r.trial);
    a.sort_by_key(key);
    b.sort_by_key(key);
    assert_eq!(a, b);
}

#[test]
fn torn_tail_is_discarded_on_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Function, blr(), 2, &tmp.path().join("run"));
    run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    let clean = fs::read(cfg.output_dir.join(RECORDS_FILE)).unwrap();
    let mut torn = clean.clone();
    torn.extend_from_slice(b"{\"simulation\": 9, \"tas");
    fs::write(cfg.output_dir.join(RECORDS_FILE), torn).unwrap();
    assert_eq!(load_records(&cfg.output_dir).unwrap().len(), 50);
    let again = run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    assert_eq!(again.executed, 0);
    assert_eq!(fs::read(cfg.output_dir.join(RECORDS_FILE)).unwrap(), clean);
}

#[test]
fn completed_directory_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Function, blr(), 2, &tmp.path().join("run"));
    let first = run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    let calls = AtomicUsize::new(0);
    let counting = |sim: usize, seed: u64| {
        calls.fetch_add(1, Ordering::SeqCst);
        factory(&cfg)(sim, seed)
    };
    let second = run_experiment(&cfg, &counting, &mut |_| {}).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    assert_eq!(second.executed, 0);
    assert_eq!(second.records, first.records);
}

#[test]
fn second_runner_on_a_locked_directory_refuses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Function, blr(), 1, &tmp.path().join("run"));
    fs::create_dir_all(&cfg.output_dir).unwrap();
    fs::write(cfg.output_dir.join(".lock"), "1234\n").unwrap();
    let err = run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap_err();
    assert!(matches!(err, RunnerError::Locked(_)), "{err}");
}

#[test]
fn concurrent_runs_on_one_directory_do_not_both_proceed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Bandit, AgentSpec::thompson(), 20, &tmp.path().join("run"));
    let results: Vec<Result<_, RunnerError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..2).map(|_| s.spawn(|| run_experiment(&cfg, &factory(&cfg), &mut |_| {}))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let locked = results.iter().filter(|r| matches!(r, Err(RunnerError::Locked(_)))).count();
    let executed: usize = results.iter().filter_map(|r| r.as_ref().ok()).map(|s| s.executed).sum();
    // either the second call was refused, or it started after the first had finished
    assert!(locked == 1 || executed == 20);
    assert_eq!(load_manifest(&cfg.output_dir).unwrap().total_records, 20 * 5 * 10);
}

#[test]
fn corrupt_manifest_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Function, blr(), 1, &tmp.path().join("run"));
    run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    fs::write(cfg.output_dir.join("manifest.json"), "{ not json").unwrap();
    let err = run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap_err();
    assert!(matches!(err, RunnerError::CorruptManifest { .. }), "{err}");
}

#[test]
fn changed_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Function, blr(), 1, &tmp.path().join("run"));
    run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    let other = RunConfig { master_seed: 99, ..cfg.clone() };
    let err = run_experiment(&other, &factory(&other), &mut |_| {}).unwrap_err();
    assert!(matches!(err, RunnerError::ConfigMismatch { .. }), "{err}");
}

#[test]
fn record_count_matches_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Function, blr(), 4, &tmp.path().join("run"));
    let summary = run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    let m = load_manifest(&cfg.output_dir).unwrap();
    let lines = fs::read_to_string(cfg.output_dir.join(RECORDS_FILE)).unwrap().lines().count();
    assert_eq!(lines, m.total_records);
    assert_eq!(summary.records, 4 * 5 * 5);
    let cells: usize = m.simulations.iter().map(|s| s.cells_completed).sum();
    assert_eq!(cells, m.total_records);
}

#[test]
fn bandit_run_size() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(Experiment::Bandit, AgentSpec::KalmanGreedy { kalman: Default::default() }, 500, tmp.path());
    cfg.transcripts = false;
    cfg.workers = 8;
    let out = run_in_memory(&cfg, &factory(&cfg)).unwrap();
    assert_eq!(out.records.len(), 25_000);
    assert!(out.failures.is_empty());
    assert!(out.records.iter().all(|r| r.valid && r.loss.is_some()));
}

#[test]
fn single_task_prompts_only_show_one_machine() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(Experiment::Function, blr(), 3, &tmp.path().join("run"));
    cfg.n_tasks = 1;
    run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    let tdir = cfg.output_dir.join(TRANSCRIPTS_DIR);
    for r in load_records(&cfg.output_dir).unwrap() {
        let t = read_transcript(&tdir, &r.transcript).unwrap();
        assert!(!t.request.prompt.contains("Machine 2:"));
        assert!(t.request.prompt.contains("Machine 1:"));
    }
}

#[test]
fn blr_agent_matches_default_prior_baseline_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(Experiment::Function, blr(), 20, tmp.path());
    cfg.transcripts = false;
    let records = run_in_memory(&cfg, &factory(&cfg)).unwrap().records;
    for r in &records {
        assert_eq!(r.loss, r.baseline(BLR_DEFAULT).unwrap().loss);
    }
}

#[test]
fn blr_agent_improves_within_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(Experiment::Function, blr(), 100, tmp.path());
    cfg.transcripts = false;
    cfg.workers = 8;
    let records = run_in_memory(&cfg, &factory(&cfg)).unwrap().records;
    let at = |trial: usize| mean(&records.iter().filter(|r| r.trial == trial).filter_map(|r| r.loss).collect::<Vec<_>>());
    assert!(at(5) < at(1), "trial 5 {} vs trial 1 {}", at(5), at(1));
}

#[test]
fn constant_zero_agent_rmse_is_rms_of_targets() {
    let tmp = tempfile::tempdir().unwrap();
    write_datasets(&tmp.path().join("data"), 8);
    let mut cfg = config(Experiment::Regression, AgentSpec::Constant { reply: "0".into() }, 10, &tmp.path().join("run"));
    cfg.regression.datasets = vec![tmp.path().join("data")];
    run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    let records = load_records(&cfg.output_dir).unwrap();
    assert_eq!(records.len(), 10 * 5 * 5);
    let report = analyze_run(&cfg.output_dir).unwrap();
    let mut targets: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &records {
        targets.entry((r.task, r.trial)).or_default().push(r.target);
    }
    for row in &report.curves {
        let t = &targets[&(row.task, row.trial)];
        let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        assert!((row.rmse.unwrap() - rms).abs() < 1e-12);
    }
}

#[test]
fn blr_agent_beats_constant_agent_on_regression() {
    let tmp = tempfile::tempdir().unwrap();
    write_datasets(&tmp.path().join("data"), 8);
    let rmse_at_5 = |agent: AgentSpec| {
        let mut cfg = config(Experiment::Regression, agent, 100, tmp.path());
        cfg.transcripts = false;
        cfg.regression.datasets = vec![tmp.path().join("data")];
        let records = run_in_memory(&cfg, &factory(&cfg)).unwrap().records;
        mean(&records.iter().filter(|r| r.trial == 5).filter_map(|r| r.loss).collect::<Vec<_>>()).sqrt()
    };
    let blr = rmse_at_5(blr());
    let zero = rmse_at_5(AgentSpec::Constant { reply: "0".into() });
    assert!(blr < zero, "{blr} vs {zero}");
}

#[test]
fn transcripts_show_no_future_data() {
    let tmp = tempfile::tempdir().unwrap();
    write_datasets(&tmp.path().join("data"), 6);
    for (experiment, agent) in [
        (Experiment::Function, blr()),
        (Experiment::Bandit, AgentSpec::thompson()),
        (Experiment::Regression, blr()),
    ] {
        let mut cfg = config(experiment, agent, 3, &tmp.path().join(experiment.name()));
        cfg.regression.datasets = vec![tmp.path().join("data")];
        run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
        let audit = audit_leakage(&cfg.output_dir).unwrap();
        assert_eq!(audit.missing, 0);
        assert_eq!(audit.checked, load_manifest(&cfg.output_dir).unwrap().total_records);
        assert!(audit.violations.is_empty(), "{:?}", audit.violations);
    }
}

#[test]
fn audit_flags_a_tampered_prompt() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Function, blr(), 1, &tmp.path().join("run"));
    run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    let records = load_records(&cfg.output_dir).unwrap();
    let r = records.iter().find(|r| r.task == 1 && r.trial == 2).unwrap();
    let tdir = cfg.output_dir.join(TRANSCRIPTS_DIR);
    let path = tdir.join(format!("{}.json", r.transcript));
    let mut file = read_transcript(&tdir, &r.transcript).unwrap();
    let TrialInput::Function { x, .. } = r.input else { unreachable!() };
    file.request.prompt = file.request.prompt.replacen(";\nx=", &format!(";\nx={x}, y=1;\nx="), 1);
    fs::write(&path, serde_json::to_vec(&file).unwrap()).unwrap();
    let audit = audit_leakage(&cfg.output_dir).unwrap();
    assert_eq!(audit.violations.len(), 1, "{:?}", audit.violations);
}

#[test]
fn cached_transcripts_answer_repeated_queries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(Experiment::Function, blr(), 2, &tmp.path().join("run"));
    run_experiment(&cfg, &factory(&cfg), &mut |_| {}).unwrap();
    let records_before = fs::read(cfg.output_dir.join(RECORDS_FILE)).unwrap();
    // force a re-run of simulation 1 with a subject that must never be called
    let mut m = load_manifest(&cfg.output_dir).unwrap();
    let keep: Vec<String> = fs::read_to_string(cfg.output_dir.join(RECORDS_FILE))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("{\"simulation\":0"))
        .map(str::to_owned)
        .collect();
    let kept = keep.iter().map(|l| l.len() as u64 + 1).sum::<u64>();
    m.simulations[1].status = SimulationStatus::Pending;
    m.records_bytes = kept;
    m.total_records = keep.len();
    m.priors_bytes = 0;
    fs::write(cfg.output_dir.join("manifest.json"), serde_json::to_vec_pretty(&m).unwrap()).unwrap();

    struct Refuse;
    impl CompletionBackend for Refuse {
        fn complete(&mut self, _: &CompletionRequest) -> Result<String, ClientError> {
            Err(ClientError::Transport { attempts: 1, message: "should have been cached".into() })
        }
    }
    let refuse = |_: usize, _: u64| Ok(Box::new(Refuse) as Box<dyn CompletionBackend>);
    let summary = run_experiment(&cfg, &refuse, &mut |_| {}).unwrap();
    assert!(summary.is_complete());
    assert_eq!(summary.queries, 0);
    assert_eq!(fs::read(cfg.output_dir.join(RECORDS_FILE)).unwrap(), records_before);
}
