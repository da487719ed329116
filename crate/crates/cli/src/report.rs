//! Figures rendered from the analysis tables of a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use micl_core::analysis::PriorEstimate;
use micl_core::runner::{load_priors, ANALYSIS_DIR};

use crate::svg::{range_of, Chart, PALETTE};

pub const FIGURES_DIR: &str = "figures";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A CSV file held as rows of named cells.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Option<Self>, ReportError> {
        if !path.exists() {
            return Ok(None);
        }
        let err = |e: csv::Error| ReportError::Table { path: path.to_path_buf(), message: e.to_string() };
        let mut r = csv::Reader::from_path(path).map_err(err)?;
        let header = r.headers().map_err(err)?.iter().map(str::to_owned).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_owned).collect()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        Ok(Some(Self { header, rows }))
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn text<'a>(&self, row: &'a [String], name: &str) -> &'a str {
        self.col(name).map(|i| row[i].as_str()).unwrap_or("")
    }

    fn num(&self, row: &[String], name: &str) -> f64 {
        self.text(row, name).parse().unwrap_or(f64::NAN)
    }
}

fn curves_figure(t: &Table) -> Chart {
    let metric = t.rows.first().map(|r| t.text(r, "metric").to_owned()).unwrap_or_default();
    let mut by_task: BTreeMap<usize, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in &t.rows {
        let task = t.num(r, "task") as usize;
        by_task.entry(task).or_default().push((t.num(r, "trial"), t.num(r, "mean"), t.num(r, "ci95")));
    }
    let baselines: Vec<String> =
        t.header.iter().filter_map(|h| h.strip_suffix("_mean").map(str::to_owned)).collect();
    let mut baseline_curves: BTreeMap<&str, BTreeMap<i64, Vec<f64>>> = BTreeMap::new();
    for name in &baselines {
        let entry = baseline_curves.entry(name).or_default();
        for r in &t.rows {
            entry.entry(t.num(r, "trial") as i64).or_default().push(t.num(r, &format!("{name}_mean")));
        }
    }
    let ys = by_task
        .values()
        .flatten()
        .flat_map(|&(_, m, c)| [m - c, m + c])
        .chain(baseline_curves.values().flat_map(|m| m.values().flatten().copied()));
    let xs = by_task.values().flatten().map(|p| p.0);
    let (x0, x1) = range_of(xs, false);
    let mut chart = Chart::new(&format!("Learning curves per task ({metric})"), "trial", &metric, (x0, x1), range_of(ys, true));
    for (i, (task, points)) in by_task.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart.line(&points.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), color, false);
        for &(x, m, c) in points {
            chart.whisker(x, m - c, m + c, color);
            chart.marker(x, m, color);
        }
        chart.legend(&format!("task {task}"), color, false);
    }
    for (j, (name, per_trial)) in baseline_curves.iter().enumerate() {
        let color = PALETTE[(PALETTE.len() - 1 - j) % PALETTE.len()];
        let points: Vec<(f64, f64)> = per_trial
            .iter()
            .map(|(x, v)| (*x as f64, v.iter().filter(|v| v.is_finite()).sum::<f64>() / v.iter().filter(|v| v.is_finite()).count().max(1) as f64))
            .collect();
        chart.line(&points, color, true);
        chart.legend(name, color, true);
    }
    chart
}

fn task_means_figure(t: &Table) -> Chart {
    let metric = t.rows.first().map(|r| t.text(r, "metric").to_owned()).unwrap_or_default();
    let mut series = vec![("subject".to_string(), "mean".to_string())];
    for h in &t.header {
        if let Some(name) = h.strip_suffix("_mean") {
            series.push((name.to_owned(), h.clone()));
        }
    }
    let mut means: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &t.rows {
        let task = t.num(r, "task") as usize;
        let slot = means.entry(task).or_insert_with(|| vec![0.0; 2 * series.len()]);
        let n = t.num(r, "n");
        for (k, (_, col)) in series.iter().enumerate() {
            let v = t.num(r, col);
            if v.is_finite() && n > 0.0 {
                slot[2 * k] += v * n;
                slot[2 * k + 1] += n;
            }
        }
    }
    let values: BTreeMap<usize, Vec<f64>> = means
        .into_iter()
        .map(|(task, s)| (task, s.chunks(2).map(|c| if c[1] > 0.0 { c[0] / c[1] } else { f64::NAN }).collect()))
        .collect();
    let labels = values.keys().map(|t| format!("task {t}")).collect();
    let y = range_of(values.values().flatten().copied(), true);
    let mut chart = Chart::categorical(&format!("Mean {metric} per task"), &metric, labels, y);
    let w = 0.8 / series.len() as f64;
    for (i, (_, vals)) in values.iter().enumerate() {
        for (k, v) in vals.iter().enumerate() {
            let x = i as f64 - 0.4 + w * (k as f64 + 0.5);
            chart.bar(x, w * 0.9, *v, PALETTE[k % PALETTE.len()]);
        }
    }
    for (k, (name, _)) in series.iter().enumerate() {
        chart.legend(name, PALETTE[k % PALETTE.len()], false);
    }
    chart
}

fn coefficient_figure(t: &Table, title: &str) -> Chart {
    let labels: Vec<String> = t.rows.iter().map(|r| t.text(r, "term").to_owned()).collect();
    let ys = t.rows.iter().flat_map(|r| {
        let (b, c) = (t.num(r, "estimate"), t.num(r, "ci95_halfwidth"));
        [b - c, b + c]
    });
    let mut chart = Chart::categorical(title, "estimate (95% CI)", labels, range_of(ys, true));
    let mut models: Vec<&str> = Vec::new();
    for (i, r) in t.rows.iter().enumerate() {
        let model = t.text(r, "model");
        let k = models.iter().position(|m| *m == model).unwrap_or_else(|| {
            models.push(model);
            models.len() - 1
        });
        let (b, c) = (t.num(r, "estimate"), t.num(r, "ci95_halfwidth"));
        chart.bar(i as f64, 0.6, b, PALETTE[k % PALETTE.len()]);
        chart.whisker(i as f64, b - c, b + c, "#000");
    }
    for (k, m) in models.iter().enumerate() {
        chart.legend(m, PALETTE[k % PALETTE.len()], false);
    }
    chart
}

fn priors_figure(priors: &[PriorEstimate]) -> Chart {
    let function = priors.iter().any(|p| matches!(p, PriorEstimate::Function { .. }));
    let mut points: Vec<(f64, f64, f64, f64)> = Vec::new();
    for p in priors {
        match p {
            PriorEstimate::Function { task, slope, intercept, .. } => points.push((*task as f64, *slope, *intercept, 0.0)),
            PriorEstimate::Bandit { task, mean, sd, .. } => points.push((*task as f64, *mean, f64::NAN, *sd)),
        }
    }
    let xs = points.iter().map(|p| p.0);
    let x = range_of(xs, false);
    if function {
        let y = range_of(points.iter().flat_map(|p| [p.1, p.2]), true);
        let mut chart = Chart::new("Elicited priors across tasks", "task", "fitted coefficient", x, y);
        for p in &points {
            chart.marker(p.0 - 0.08, p.1, PALETTE[0]);
            chart.marker(p.0 + 0.08, p.2, PALETTE[1]);
        }
        chart.legend("slope", PALETTE[0], false);
        chart.legend("intercept", PALETTE[1], false);
        chart
    } else {
        let y = range_of(points.iter().flat_map(|p| [p.1 - p.3, p.1 + p.3]), true);
        let mut chart = Chart::new("Elicited reward priors across tasks", "task", "reward (mean ± sd)", x, y);
        for p in &points {
            chart.whisker(p.0, p.1 - p.3, p.1 + p.3, PALETTE[0]);
            chart.marker(p.0, p.1, PALETTE[0]);
        }
        chart.legend("probe mean", PALETTE[0], false);
        chart
    }
}

fn extremes_figure(t: &Table) -> Chart {
    let mut sources: Vec<String> = Vec::new();
    let mut by_trial: BTreeMap<i64, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in &t.rows {
        let s = t.text(r, "source").to_owned();
        let k = sources.iter().position(|x| *x == s).unwrap_or_else(|| {
            sources.push(s);
            sources.len() - 1
        });
        by_trial.entry(t.num(r, "trial") as i64).or_default().insert(k, t.num(r, "rate"));
    }
    let labels = by_trial.keys().map(|t| format!("trial {t}")).collect();
    let mut chart = Chart::categorical("Rate of extreme predictions", "share with |prediction| ≥ 1", labels, (0.0, 1.0));
    let w = 0.8 / sources.len().max(1) as f64;
    for (i, rates) in by_trial.values().enumerate() {
        for (k, v) in rates {
            chart.bar(i as f64 - 0.4 + w * (*k as f64 + 0.5), w * 0.9, *v, PALETTE[k % PALETTE.len()]);
        }
    }
    for (k, s) in sources.iter().enumerate() {
        chart.legend(s, PALETTE[k % PALETTE.len()], false);
    }
    chart
}

/// Files written and panels skipped by [`render_report`].
#[derive(Debug, Default)]
pub struct ReportOutcome {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<String>,
}

/// Render every figure the run's analysis supports into `<dir>/figures`.
pub fn render_report(dir: &Path) -> Result<ReportOutcome, ReportError> {
    let analysis = dir.join(ANALYSIS_DIR);
    let curves = Table::read(&analysis.join("curves.csv"))?.ok_or_else(|| ReportError::Table {
        path: analysis.join("curves.csv"),
        message: "missing; run `micl analyze` first".into(),
    })?;
    let out_dir = dir.join(FIGURES_DIR);
    fs::create_dir_all(&out_dir).map_err(|source| ReportError::Io { path: out_dir.clone(), source })?;
    let mut outcome = ReportOutcome::default();
    let mut emit = |name: &str, chart: Chart| -> Result<(), ReportError> {
        let path = out_dir.join(name);
        fs::write(&path, chart.render()).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        outcome.written.push(path);
        Ok(())
    };

    emit("curves.svg", curves_figure(&curves))?;
    emit("task_means.svg", task_means_figure(&curves))?;
    match Table::read(&analysis.join("effects.csv"))? {
        Some(t) if !t.rows.is_empty() => emit("effects.svg", coefficient_figure(&t, "Effects of trial and task"))?,
        _ => outcome.skipped.push("C-panel: no effect estimates".into()),
    }
    if let Some(t) = Table::read(&analysis.join("strategy.csv"))? {
        emit("strategy.svg", coefficient_figure(&t, "Probit strategy weights"))?;
    }
    let priors: Vec<PriorEstimate> = load_priors(dir)
        .map(|p| p.into_iter().filter_map(|r| r.estimate).collect())
        .unwrap_or_default();
    if priors.is_empty() {
        outcome.skipped.push("D-panel: no prior-probe data".into());
    } else {
        emit("priors.svg", priors_figure(&priors))?;
    }
    if let Some(t) = Table::read(&analysis.join("extremes.csv"))? {
        emit("extremes.svg", extremes_figure(&t))?;
    }
    Ok(outcome)
}
