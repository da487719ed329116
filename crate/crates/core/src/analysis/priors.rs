//! Eliciting the subject's expectations before a task starts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::regression::ols_fit;
use super::AnalysisError;
use crate::client::{CompletionBackend, CompletionRequest};
use crate::prompts::{
    parse_numeric_completion, render_function_prompt, render_prior_probe_bandit_with_history, BanditHistory,
    FunctionHistory, FunctionObservation,
};
use crate::stats::{mean, sample_sd};

/// Predictions at or beyond this magnitude are treated as outliers.
pub const OUTLIER_LIMIT: f64 = 10_000.0;

/// Request parameters shared by all probe queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { model_name: String::new(), temperature: 1.0, max_tokens: 16 }
    }
}

impl ProbeSettings {
    fn request(&self, prompt: String, zero_shot: bool) -> CompletionRequest {
        CompletionRequest {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            zero_shot,
            ..CompletionRequest::new(prompt, self.model_name.clone())
        }
    }
}

/// One prior sample. `task` is the 1-based task the probe preceded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum PriorEstimate {
    Function {
        task: usize,
        slope: f64,
        intercept: f64,
        /// Surviving (x, prediction) pairs the line was fitted to.
        points: Vec<(f64, f64)>,
        outliers: usize,
        unparsable: usize,
    },
    Bandit {
        task: usize,
        letter: char,
        samples: Vec<f64>,
        mean: f64,
        sd: f64,
        unparsable: usize,
    },
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Least-squares line through the non-outlying points.
pub fn fit_prior_line(points: &[(f64, f64)]) -> Result<(f64, f64, Vec<(f64, f64)>), AnalysisError> {
    let kept: Vec<(f64, f64)> = points.iter().copied().filter(|(_, y)| y.abs() < OUTLIER_LIMIT).collect();
    if kept.len() < 3 {
        return Err(AnalysisError::InsufficientData { needed: 3, found: kept.len() });
    }
    let x = DMatrix::from_fn(kept.len(), 1, |i, _| kept[i].0);
    let y = DVector::from_fn(kept.len(), |i, _| kept[i].1);
    let fit = ols_fit(&["x"], &x, &y, false)?;
    Ok((fit.coefficients[1], fit.coefficients[0], kept))
}

/// Ask for predictions on an evenly spaced grid inside a fresh machine
/// block, feeding each parsed prediction back as if it had been observed.
/// Grid inputs are rounded to integers, as the prompt shows them.
pub fn estimate_function_prior(
    backend: &mut dyn CompletionBackend,
    settings: &ProbeSettings,
    previous: &FunctionHistory,
    n_points: usize,
    grid: (f64, f64),
) -> Result<PriorEstimate, AnalysisError> {
    let mut history = previous.clone();
    history.start_task();
    let mut points = Vec::with_capacity(n_points);
    let mut unparsable = 0;
    for x in linspace(grid.0, grid.1, n_points) {
        let x = x.round();
        let prompt = render_function_prompt(&history, x);
        let zero_shot = history.n_observations() == 0;
        let reply = backend.complete(&settings.request(prompt, zero_shot))?;
        match parse_numeric_completion(&reply) {
            Ok(y) => {
                history.push(FunctionObservation { x, y });
                points.push((x, y));
            }
            Err(_) => unparsable += 1,
        }
    }
    let (slope, intercept, kept) = fit_prior_line(&points)?;
    Ok(PriorEstimate::Function {
        task: previous.tasks.len() + 1,
        slope,
        intercept,
        outliers: points.len() - kept.len(),
        points: kept,
        unparsable,
    })
}

/// Ask `n_probes` times how rewarding `letter` is expected to be.
pub fn estimate_bandit_prior(
    backend: &mut dyn CompletionBackend,
    settings: &ProbeSettings,
    previous: &BanditHistory,
    letter: char,
    n_probes: usize,
    trials_per_task: usize,
) -> Result<PriorEstimate, AnalysisError> {
    let prompt = render_prior_probe_bandit_with_history(previous, letter, trials_per_task)?;
    let mut samples = Vec::with_capacity(n_probes);
    let mut unparsable = 0;
    for _ in 0..n_probes {
        let reply = backend.complete(&settings.request(prompt.clone(), false))?;
        match parse_numeric_completion(&reply) {
            Ok(v) => samples.push(v),
            Err(_) => unparsable += 1,
        }
    }
    if samples.is_empty() {
        return Err(AnalysisError::AllProbesUnparsable(n_probes));
    }
    Ok(PriorEstimate::Bandit {
        task: previous.tasks.len() + 1,
        letter,
        mean: mean(&samples),
        sd: sample_sd(&samples),
        samples,
        unparsable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{AgentSpec, ScriptedAgent};

    struct Replies(Vec<String>, usize);

    impl CompletionBackend for Replies {
        fn complete(&mut self, _: &CompletionRequest) -> Result<String, crate::client::ClientError> {
            let r = self.0[self.1 % self.0.len()].clone();
            self.1 += 1;
            Ok(r)
        }
    }

    #[test]
    fn exact_line_recovered() {
        let mut agent = ScriptedAgent::new(AgentSpec::Line { slope: -2.0, intercept: -100.0, noise_sd: 0.0 }, 0);
        let est = estimate_function_prior(&mut agent, &ProbeSettings::default(), &FunctionHistory::new(5), 20, (0.0, 100.0))
            .unwrap();
        let PriorEstimate::Function { slope, intercept, points, .. } = est else { panic!() };
        assert_eq!(points.len(), 20);
        assert!((slope + 2.0).abs() < 1e-9 && (intercept + 100.0).abs() < 1e-7);
    }

    #[test]
    fn outliers_leave_too_little() {
        let mut b = Replies(vec!["50,000".into()], 0);
        let err = estimate_function_prior(&mut b, &ProbeSettings::default(), &FunctionHistory::new(5), 20, (0.0, 100.0));
        assert!(matches!(err, Err(AnalysisError::InsufficientData { found: 0, .. })));
    }

    #[test]
    fn noisy_line_slope() {
        let mut agent = ScriptedAgent::new(AgentSpec::Line { slope: 3.0, intercept: 0.0, noise_sd: 1.0 }, 4);
        let est = estimate_function_prior(&mut agent, &ProbeSettings::default(), &FunctionHistory::new(5), 20, (0.0, 100.0))
            .unwrap();
        let PriorEstimate::Function { slope, .. } = est else { panic!() };
        assert!((slope - 3.0).abs() < 0.1, "{slope}");
    }

    #[test]
    fn bandit_prior_summary() {
        let h = BanditHistory::new(5);
        let mut b = Replies(vec!["6.49".into()], 0);
        let PriorEstimate::Bandit { mean, sd, .. } =
            estimate_bandit_prior(&mut b, &ProbeSettings::default(), &h, 'A', 5, 10).unwrap()
        else {
            panic!()
        };
        assert_eq!((mean, sd), (6.49, 0.0));
        let mut b = Replies(["4", "5", "6", "7", "8"].map(String::from).to_vec(), 0);
        let PriorEstimate::Bandit { mean, sd, .. } =
            estimate_bandit_prior(&mut b, &ProbeSettings::default(), &h, 'A', 5, 10).unwrap()
        else {
            panic!()
        };
        assert_eq!(mean, 6.0);
        assert!((sd - 2.5f64.sqrt()).abs() < 1e-12);
        let mut b = Replies(vec!["no idea".into()], 0);
        assert!(matches!(
            estimate_bandit_prior(&mut b, &ProbeSettings::default(), &h, 'A', 5, 10),
            Err(AnalysisError::AllProbesUnparsable(5))
        ));
    }
}
