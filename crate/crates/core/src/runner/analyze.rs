//! From a run directory to the analysis tables under `analysis/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::config::{Experiment, RunConfig};
use super::records::{TrialInput, TrialRecord};
use super::{load_manifest, load_records, RunnerError};
use crate::analysis::{
    build_probit_design, default_gamma, error_metrics, is_extreme, ols_fit, probit_fit_design, task_similarity,
    AnalysisError, BanditStep, ErrorSample, RegressionFit,
};
use crate::stats::MeanCi;

pub const ANALYSIS_DIR: &str = "analysis";

/// A named OLS fit (`model` lists its predictors).
#[derive(Debug, Clone, PartialEq)]
pub struct Effect {
    pub model: String,
    pub fit: RegressionFit,
}

/// One (task, trial) cell of the learning curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub task: usize,
    pub trial: usize,
    pub n: usize,
    pub n_invalid: usize,
    pub mean: f64,
    pub ci95: f64,
    /// Root of the mean squared error (supervised experiments only).
    pub rmse: Option<f64>,
    pub baselines: Vec<(String, MeanCi)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeRow {
    pub source: String,
    pub trial: usize,
    pub n: usize,
    pub n_extreme: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub run_id: String,
    pub experiment: Experiment,
    pub metric: &'static str,
    pub effects: Vec<Effect>,
    pub strategy: Option<RegressionFit>,
    pub curves: Vec<CurveRow>,
    pub extremes: Vec<ExtremeRow>,
    /// Fits that could not be computed, with the reason.
    pub notes: Vec<String>,
}

fn metric_of(experiment: Experiment) -> &'static str {
    match experiment {
        Experiment::Bandit => "regret",
        _ => "squared_error",
    }
}

/// OLS of the per-trial loss on trial and task number.
pub fn effect_fit(records: &[TrialRecord], standardize: bool) -> Result<RegressionFit, AnalysisError> {
    let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.valid).collect();
    let x = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { rows[i].trial as f64 } else { rows[i].task as f64 });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.loss.expect("valid records carry a loss")));
    ols_fit(&["trial", "task"], &x, &y, standardize)
}

/// Similarity of every regression query (tasks 2 and later) to the inputs
/// of all earlier tasks of its simulation.
pub fn similarity_rows(records: &[TrialRecord], gamma: Option<f64>) -> Result<Vec<(&TrialRecord, f64)>, AnalysisError> {
    let mut by_sim: BTreeMap<usize, BTreeMap<usize, Vec<Vec<f64>>>> = BTreeMap::new();
    for r in records {
        if let TrialInput::Regression { x, .. } = &r.input {
            by_sim.entry(r.simulation).or_default().entry(r.task).or_default().push(x.clone());
        }
    }
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.valid && r.task > 1) {
        let TrialInput::Regression { x, .. } = &r.input else { continue };
        let previous: Vec<Vec<Vec<f64>>> =
            by_sim[&r.simulation].range(..r.task).map(|(_, points)| points.clone()).collect();
        let g = gamma.unwrap_or_else(|| default_gamma(x.len()));
        out.push((r, task_similarity(x, &previous, g)?));
    }
    Ok(out)
}

fn similarity_fit(records: &[TrialRecord], config: &RunConfig) -> Result<RegressionFit, AnalysisError> {
    let rows = similarity_rows(records, config.analysis.gamma)?;
    let x = DMatrix::from_fn(rows.len(), 3, |i, j| match j {
        0 => rows[i].0.trial as f64,
        1 => rows[i].0.task as f64,
        _ => rows[i].1,
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|(r, _)| r.loss.expect("valid")));
    ols_fit(&["trial", "task", "similarity"], &x, &y, config.analysis.standardize)
}

/// Bandit records as the pulls the subject saw.
pub fn bandit_steps(records: &[TrialRecord]) -> Vec<BanditStep> {
    records
        .iter()
        .map(|r| BanditStep {
            simulation: r.simulation,
            task: r.task,
            trial: r.trial,
            arm: r.played_arm,
            reward: r.target,
            valid: r.valid,
        })
        .collect()
}

fn sorted(records: &[TrialRecord]) -> Vec<TrialRecord> {
    let mut v = records.to_vec();
    v.sort_by_key(|r| (r.simulation, r.task, r.trial));
    v
}

fn curves(records: &[TrialRecord], experiment: Experiment) -> Vec<CurveRow> {
    let mut cells: BTreeMap<(usize, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.task, r.trial)).or_default().push(r);
    }
    let names: Vec<String> = records.first().map(|r| r.baselines.iter().map(|b| b.name.clone()).collect()).unwrap_or_default();
    cells
        .into_iter()
        .map(|((task, trial), rs)| {
            let losses: Vec<f64> = rs.iter().filter_map(|r| r.loss).collect();
            let ci = MeanCi::of(&losses);
            let baselines = names
                .iter()
                .map(|name| {
                    let l: Vec<f64> = rs.iter().filter_map(|r| r.baseline(name).and_then(|b| b.loss)).collect();
                    (name.clone(), MeanCi::of(&l))
                })
                .collect();
            CurveRow {
                task,
                trial,
                n: losses.len(),
                n_invalid: rs.len() - losses.len(),
                mean: ci.mean,
                ci95: ci.ci95,
                rmse: (experiment != Experiment::Bandit).then(|| ci.mean.sqrt()),
                baselines,
            }
        })
        .collect()
}

fn extremes(records: &[TrialRecord]) -> Vec<ExtremeRow> {
    let mut out = Vec::new();
    let subject: Vec<ErrorSample> = records
        .iter()
        .map(|r| ErrorSample { task: r.task, trial: r.trial, prediction: r.prediction, target: r.target })
        .collect();
    for e in error_metrics(&subject).extremes {
        out.push(ExtremeRow { source: "subject".into(), trial: e.trial, n: e.n, n_extreme: e.n_extreme, rate: e.rate });
    }
    let names: Vec<String> = records.first().map(|r| r.baselines.iter().map(|b| b.name.clone()).collect()).unwrap_or_default();
    for name in names {
        let mut by_trial: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for r in records {
            if let Some(p) = r.baseline(&name).and_then(|b| b.prediction) {
                let e = by_trial.entry(r.trial).or_default();
                e.0 += 1;
                e.1 += is_extreme(p) as usize;
            }
        }
        for (trial, (n, k)) in by_trial {
            out.push(ExtremeRow { source: name.clone(), trial, n, n_extreme: k, rate: k as f64 / n as f64 });
        }
    }
    out
}

/// All analyses for one experiment's records.
pub fn analyze_records(config: &RunConfig, run_id: &str, records: &[TrialRecord]) -> AnalysisReport {
    let records = sorted(records);
    let mut notes = Vec::new();
    let mut effects = Vec::new();
    match effect_fit(&records, config.analysis.standardize) {
        Ok(fit) => effects.push(Effect { model: "trial+task".into(), fit }),
        Err(e) => notes.push(format!("trial+task: {e}")),
    }
    if config.experiment == Experiment::Regression {
        match similarity_fit(&records, config) {
            Ok(fit) => effects.push(Effect { model: "trial+task+similarity".into(), fit }),
            Err(e) => notes.push(format!("trial+task+similarity: {e}")),
        }
    }
    let strategy = if config.experiment == Experiment::Bandit {
        match build_probit_design(&bandit_steps(&records), &config.analysis.kalman).and_then(|d| probit_fit_design(&d)) {
            Ok(fit) => {
                if fit.separation_warning {
                    notes.push("strategy: fitted probabilities of 0 or 1 occurred (quasi-separation)".into());
                }
                Some(fit)
            }
            Err(e) => {
                notes.push(format!("strategy: {e}"));
                None
            }
        }
    } else {
        None
    };
    AnalysisReport {
        run_id: run_id.to_string(),
        experiment: config.experiment,
        metric: metric_of(config.experiment),
        effects,
        strategy,
        curves: curves(&records, config.experiment),
        extremes: if config.experiment == Experiment::Regression { extremes(&records) } else { Vec::new() },
        notes,
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn write_fit(w: &mut csv::Writer<fs::File>, report: &AnalysisReport, model: &str, fit: &RegressionFit) -> csv::Result<()> {
    for i in 0..fit.names.len() {
        w.write_record([
            report.run_id.as_str(),
            report.experiment.name(),
            model,
            &fit.names[i],
            &num(fit.coefficients[i]),
            &num(fit.standard_errors[i]),
            &num(fit.statistics[i]),
            &num(fit.p_values[i]),
            &num(fit.ci95_halfwidth[i]),
            &fit.n_observations.to_string(),
            &fit.log_likelihood.map(num).unwrap_or_default(),
            if fit.separation_warning { "true" } else { "false" },
        ])?;
    }
    Ok(())
}

const FIT_HEADER: [&str; 12] = [
    "run_id",
    "experiment",
    "model",
    "term",
    "estimate",
    "std_error",
    "statistic",
    "p_value",
    "ci95_halfwidth",
    "n_observations",
    "log_likelihood",
    "separation_warning",
];

/// Write `effects.csv`, `curves.csv` and, where applicable, `strategy.csv`
/// and `extremes.csv` into `dir`.
pub fn write_report(dir: &Path, report: &AnalysisReport) -> Result<(), RunnerError> {
    fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))?;
    let csv_err = |path: &Path, e: csv::Error| RunnerError::io(path, std::io::Error::other(e.to_string()));
    let open = |name: &str| {
        let path = dir.join(name);
        csv::Writer::from_path(&path).map(|w| (w, path.clone())).map_err(|e| csv_err(&path, e))
    };

    let (mut w, path) = open("effects.csv")?;
    w.write_record(FIT_HEADER).map_err(|e| csv_err(&path, e))?;
    for e in &report.effects {
        write_fit(&mut w, report, &e.model, &e.fit).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| RunnerError::io(&path, e))?;

    if let Some(fit) = &report.strategy {
        let (mut w, path) = open("strategy.csv")?;
        w.write_record(FIT_HEADER).map_err(|e| csv_err(&path, e))?;
        write_fit(&mut w, report, "probit", fit).map_err(|e| csv_err(&path, e))?;
        w.flush().map_err(|e| RunnerError::io(&path, e))?;
    }

    let (mut w, path) = open("curves.csv")?;
    let mut header: Vec<String> = ["run_id", "experiment", "task", "trial", "n", "n_invalid", "metric", "mean", "ci95", "rmse"]
        .map(String::from)
        .to_vec();
    if let Some(first) = report.curves.first() {
        for (name, _) in &first.baselines {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_ci95"));
        }
    }
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for c in &report.curves {
        let mut row = vec![
            report.run_id.clone(),
            report.experiment.name().to_string(),
            c.task.to_string(),
            c.trial.to_string(),
            c.n.to_string(),
            c.n_invalid.to_string(),
            report.metric.to_string(),
            num(c.mean),
            num(c.ci95),
            c.rmse.map(num).unwrap_or_default(),
        ];
        for (_, ci) in &c.baselines {
            row.push(num(ci.mean));
            row.push(num(ci.ci95));
        }
        w.write_record(&row).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| RunnerError::io(&path, e))?;

    if report.experiment == Experiment::Regression {
        let (mut w, path) = open("extremes.csv")?;
        w.write_record(["run_id", "source", "trial", "n", "n_extreme", "rate"]).map_err(|e| csv_err(&path, e))?;
        for x in &report.extremes {
            w.write_record([
                report.run_id.as_str(),
                &x.source,
                &x.trial.to_string(),
                &x.n.to_string(),
                &x.n_extreme.to_string(),
                &num(x.rate),
            ])
            .map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| RunnerError::io(&path, e))?;
    }
    Ok(())
}

/// Analyse a run directory and write its tables under `analysis/`.
pub fn analyze_run(dir: &Path) -> Result<AnalysisReport, RunnerError> {
    let manifest = load_manifest(dir)?;
    let records = load_records(dir)?;
    let report = analyze_records(&manifest.config, &manifest.run_id, &records);
    write_report(&dir.join(ANALYSIS_DIR), &report)?;
    Ok(report)
}
