//! Similarity, regret and prediction-error summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::stats::MeanCi;
use crate::tasks::BanditTask;

/// Mean RBF kernel `exp(-gamma * |x - p|^2)` between `point` and every
/// point of every previous task.
pub fn task_similarity(point: &[f64], previous_tasks: &[Vec<Vec<f64>>], gamma: f64) -> Result<f64, AnalysisError> {
    if !(gamma > 0.0) {
        return Err(AnalysisError::Dimension(format!("gamma must be > 0, got {gamma}")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in previous_tasks.iter().flatten() {
        if p.len() != point.len() {
            return Err(AnalysisError::Dimension(format!("point has {} dims, previous point {}", point.len(), p.len())));
        }
        let d2: f64 = point.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        sum += (-gamma * d2).exp();
        n += 1;
    }
    if n == 0 {
        return Err(AnalysisError::UndefinedSimilarity);
    }
    Ok(sum / n as f64)
}

/// Default kernel width: one over the input dimension.
pub fn default_gamma(dim: usize) -> f64 {
    1.0 / dim.max(1) as f64
}

/// Expected regret of each choice: best arm mean minus chosen arm mean.
pub fn compute_regret(task: &BanditTask, choices: &[usize]) -> Result<Vec<f64>, AnalysisError> {
    let best = task.best_mean();
    choices
        .iter()
        .map(|&c| {
            task.arm_means
                .get(c)
                .map(|m| best - m)
                .ok_or_else(|| AnalysisError::DataIntegrity(format!("arm {c} out of range")))
        })
        .collect()
}

/// A prediction and its target, in the same (normalised, for regression) space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub task: usize,
    pub trial: usize,
    pub prediction: Option<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub task: usize,
    pub trial: usize,
    pub n: usize,
    pub n_invalid: usize,
    pub mse: f64,
    pub mse_ci95: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeRate {
    pub trial: usize,
    pub n: usize,
    pub n_extreme: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub cells: Vec<CellError>,
    pub extremes: Vec<ExtremeRate>,
}

/// Predictions at or outside the normalised target range.
pub fn is_extreme(prediction: f64) -> bool {
    prediction.abs() >= 1.0
}

/// MSE and RMSE per (task, trial) cell and the extreme-prediction rate per
/// trial. Missing predictions are counted, not scored.
pub fn error_metrics(samples: &[ErrorSample]) -> ErrorMetrics {
    let mut cells: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
    let mut by_trial: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for s in samples {
        let cell = cells.entry((s.task, s.trial)).or_default();
        let Some(p) = s.prediction else {
            cell.1 += 1;
            continue;
        };
        cell.0.push((p - s.target).powi(2));
        let t = by_trial.entry(s.trial).or_default();
        t.0 += 1;
        if is_extreme(p) {
            t.1 += 1;
        }
    }
    let cells = cells
        .into_iter()
        .map(|((task, trial), (sq, n_invalid))| {
            let ci = MeanCi::of(&sq);
            CellError { task, trial, n: sq.len(), n_invalid, mse: ci.mean, mse_ci95: ci.ci95, rmse: ci.mean.sqrt() }
        })
        .collect();
    let extremes = by_trial
        .into_iter()
        .map(|(trial, (n, k))| ExtremeRate { trial, n, n_extreme: k, rate: k as f64 / n as f64 })
        .collect();
    ErrorMetrics { cells, extremes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::policy_random;
    use crate::tasks::BanditTaskParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn similarity_hand_values() {
        let s = task_similarity(&[0.0, 0.0], &[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], 1.0).unwrap();
        assert!((s - (-1f64).exp()).abs() < 1e-12);
        let same = task_similarity(&[0.3, 0.2], &[vec![vec![0.3, 0.2], vec![0.3, 0.2]]], 1.0).unwrap();
        assert_eq!(same, 1.0);
        let far = task_similarity(&[0.0], &[vec![vec![1.0]]], 1e6).unwrap();
        assert!(far < 1e-300);
        assert_eq!(task_similarity(&[0.0], &[], 1.0), Err(AnalysisError::UndefinedSimilarity));
    }

    fn task(means: [f64; 2]) -> BanditTask {
        BanditTask { arm_means: means, letters: ['A', 'B'], params: BanditTaskParams::default() }
    }

    #[test]
    fn regret_definition() {
        assert_eq!(compute_regret(&task([5.0, -3.0]), &[1, 0]).unwrap(), vec![8.0, 0.0]);
        assert_eq!(compute_regret(&task([5.0, -3.0]), &[0, 0, 0]).unwrap(), vec![0.0; 3]);
        assert!(compute_regret(&task([5.0, -3.0]), &[2]).is_err());
    }

    #[test]
    fn random_policy_regret_is_half_the_gap() {
        let t = task([3.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let choices: Vec<usize> = (0..200_000).map(|_| policy_random(&mut rng)).collect();
        let r = compute_regret(&t, &choices).unwrap();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        assert!((m - 2.0).abs() < 0.02 * 2.0, "{m}");
    }

    #[test]
    fn error_cells() {
        let m = error_metrics(&[ErrorSample { task: 1, trial: 1, prediction: Some(1.5), target: 0.5 }]);
        assert_eq!((m.cells[0].mse, m.cells[0].rmse), (1.0, 1.0));
        assert_eq!(m.extremes[0].rate, 1.0);
        let m = error_metrics(&[
            ErrorSample { task: 1, trial: 1, prediction: Some(-1.0), target: -1.0 },
            ErrorSample { task: 1, trial: 1, prediction: None, target: 0.0 },
            ErrorSample { task: 1, trial: 2, prediction: Some(0.2), target: 0.2 },
        ]);
        assert_eq!(m.cells[0].mse, 0.0);
        assert_eq!(m.cells[0].n_invalid, 1);
        assert_eq!(m.extremes[0].n_extreme, 1);
        assert_eq!(m.extremes[1].rate, 0.0);
    }
}
