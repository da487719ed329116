//! `micl`: run, analyse and plot multi-task in-context learning experiments.
//!
//! Exit codes: 0 success, 1 usage, configuration or fatal error, 2 partial
//! completion (some simulations failed).

mod report;
mod svg;

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use micl_core::client::{BackendFactory, ConfiguredBackends, HttpClient, RequestLog};
use micl_core::runner::{
    analyze_run, load_manifest, run_experiment, AnalysisReport, ExperimentContext, Progress, RunConfig,
    RunnerError,
};

const EXIT_USAGE: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "micl", version, about = "Multi-task in-context learning experiment harness")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Only print errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// `key=value` overrides applied after the file is parsed, e.g. `n_simulations=10 backend.kind=scripted`.
    #[arg(short, long = "override", value_name = "KEY=VALUE", num_args = 1.., action = ArgAction::Append)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run (or resume) an experiment.
    Run(ConfigArgs),
    /// Write effect, strategy, curve and extreme-rate tables for a run.
    Analyze {
        /// Run directory.
        dir: PathBuf,
    },
    /// Run an experiment with prior probes enabled before every task.
    ProbePriors(ConfigArgs),
    /// Render figures from a run's analysis tables.
    Report {
        /// Run directory.
        dir: PathBuf,
    },
    /// Check configuration files without running anything.
    ValidateConfig {
        /// Configuration files.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(short, long = "override", value_name = "KEY=VALUE", num_args = 1.., action = ArgAction::Append)]
        overrides: Vec<String>,
    },
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => tracing::Level::ERROR,
        (false, 0) => tracing::Level::WARN,
        (false, 1) => tracing::Level::INFO,
        (false, 2) => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).with_target(false).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose, cli.quiet);
    let quiet = cli.quiet;
    let result = match cli.command {
        Command::Run(args) => load(&args).and_then(|c| cmd_run(c, quiet)),
        Command::ProbePriors(args) => load(&args).and_then(|mut c| {
            c.probes.enabled = true;
            cmd_run(c, quiet)
        }),
        Command::Analyze { dir } => cmd_analyze(&dir, quiet),
        Command::Report { dir } => cmd_report(&dir, quiet),
        Command::ValidateConfig { configs, overrides } => cmd_validate(&configs, &overrides, quiet),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn load(args: &ConfigArgs) -> Result<RunConfig, String> {
    RunConfig::load(&args.config, &args.overrides).map_err(|e| e.to_string())
}

fn check(config: &RunConfig) -> Result<(), String> {
    config.validate().map_err(|e| e.to_string())?;
    ExperimentContext::load(config).map_err(|e| e.to_string())?;
    Ok(())
}

fn backends(config: &mut RunConfig) -> Result<ConfiguredBackends, String> {
    config.backend.resolve_api_key().map_err(|e| e.to_string())?;
    if !config.backend.kind.is_http() {
        return ConfiguredBackends::new(&config.backend).map_err(|e| e.to_string());
    }
    let log = match &config.backend.request_log {
        None => None,
        Some(p) => {
            let path = Path::new(p);
            let path = if path.is_relative() { config.output_dir.join(path) } else { path.to_path_buf() };
            std::fs::create_dir_all(&config.output_dir).map_err(|e| e.to_string())?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            Some(RequestLog::new(Box::new(file)))
        }
    };
    let client = HttpClient::with_log(&config.backend, log).map_err(|e| e.to_string())?;
    Ok(ConfiguredBackends::with_http_client(&config.backend, client))
}

fn cmd_run(mut config: RunConfig, quiet: bool) -> Result<u8, String> {
    check(&config)?;
    let factory = backends(&mut config)?;
    let factory: &dyn BackendFactory = &factory;
    let step = (config.n_simulations / 20).max(1);
    let mut last_failed = 0;
    let mut report = |p: &Progress| {
        let due = p.completed % step == 0 || p.completed + p.failed >= p.total || p.failed != last_failed;
        last_failed = p.failed;
        if !quiet && due {
            eprintln!(
                "simulations {}/{} complete, {} failed, {} invalid trials",
                p.completed, p.total, p.failed, p.invalid_trials
            );
        }
    };
    let summary = run_experiment(&config, factory, &mut report).map_err(|e| match e {
        RunnerError::Config(_) => e.to_string(),
        other => format!("run failed: {other}"),
    })?;
    let p = summary.progress;
    if !quiet {
        if summary.executed == 0 {
            println!("run {} in {} is already complete", summary.run_id, summary.output_dir.display());
        }
        println!(
            "run {}: {}/{} simulations, {} records, {} invalid trials, {} queries",
            summary.run_id, p.completed, p.total, summary.records, p.invalid_trials, summary.queries
        );
    }
    if summary.is_complete() {
        Ok(0)
    } else {
        if let Ok(m) = load_manifest(&summary.output_dir) {
            for s in m.simulations.iter().filter(|s| s.error.is_some()) {
                eprintln!("simulation {} failed: {}", s.index, s.error.as_deref().unwrap_or_default());
            }
        }
        eprintln!("partial run: re-run the same command to retry the failed simulations");
        Ok(EXIT_PARTIAL)
    }
}

fn print_analysis(report: &AnalysisReport) {
    for e in &report.effects {
        println!("{} ({} observations)", e.model, e.fit.n_observations);
        for i in 0..e.fit.names.len() {
            println!(
                "  {:<12} {:>10.4} ± {:<8.4} t = {:>8.3}  p = {:.3e}",
                e.fit.names[i], e.fit.coefficients[i], e.fit.ci95_halfwidth[i], e.fit.statistics[i], e.fit.p_values[i]
            );
        }
    }
    if let Some(fit) = &report.strategy {
        println!("probit strategy ({} choices)", fit.n_observations);
        for i in 0..fit.names.len() {
            println!(
                "  {:<12} {:>10.4} ± {:<8.4} z = {:>8.3}  p = {:.3e}",
                fit.names[i], fit.coefficients[i], fit.ci95_halfwidth[i], fit.statistics[i], fit.p_values[i]
            );
        }
    }
    let invalid: usize = report.curves.iter().map(|c| c.n_invalid).sum();
    let total: usize = report.curves.iter().map(|c| c.n + c.n_invalid).sum();
    println!("invalid trials: {invalid} of {total}");
}

fn cmd_analyze(dir: &Path, quiet: bool) -> Result<u8, String> {
    let report = analyze_run(dir).map_err(|e| e.to_string())?;
    for note in &report.notes {
        eprintln!("warning: {note}");
    }
    if !quiet {
        print_analysis(&report);
        println!("tables written to {}", dir.join(micl_core::runner::ANALYSIS_DIR).display());
    }
    Ok(0)
}

fn cmd_report(dir: &Path, quiet: bool) -> Result<u8, String> {
    let outcome = report::render_report(dir).map_err(|e| e.to_string())?;
    for s in &outcome.skipped {
        eprintln!("notice: skipping {s}");
    }
    if !quiet {
        for p in &outcome.written {
            println!("{}", p.display());
        }
    }
    Ok(0)
}

fn cmd_validate(configs: &[PathBuf], overrides: &[String], quiet: bool) -> Result<u8, String> {
    let mut ok = true;
    for path in configs {
        match RunConfig::load(path, overrides).map_err(|e| e.to_string()).and_then(|c| {
            check(&c)?;
            Ok(c)
        }) {
            Ok(c) => {
                if !quiet {
                    println!("ok: {} ({}, {} simulations)", path.display(), c.experiment.name(), c.n_simulations);
                }
            }
            Err(e) => {
                ok = false;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    Ok(if ok { 0 } else { EXIT_USAGE })
}
