//! Kalman replay of bandit choices into probit regressors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::regression::{probit_fit, RegressionFit};
use super::AnalysisError;
use crate::baselines::{kalman_update, ArmBelief, BeliefRegressors, KalmanParams};
use crate::tasks::N_ARMS;

/// Coefficient names of the strategy regression, in design-column order.
pub const PROBIT_NAMES: [&str; 6] = ["V", "RU", "V/TU", "V:task", "RU:task", "V/TU:task"];

/// One pull as seen by the subject: which arm was played and what it paid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditStep {
    pub simulation: usize,
    /// 1-based.
    pub task: usize,
    /// 1-based.
    pub trial: usize,
    /// Arm index into the task's letter pair; `None` when nothing was pulled.
    pub arm: Option<usize>,
    pub reward: f64,
    /// The subject made this choice itself (invalid trials were played at random).
    pub valid: bool,
}

/// Regressors before a choice. `task_number` is 0 for the first task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbitDesignRow {
    pub simulation: usize,
    pub task: usize,
    pub trial: usize,
    pub v: f64,
    pub ru: f64,
    pub v_over_tu: f64,
    pub task_number: f64,
    /// Arm 0 was chosen.
    pub choice: bool,
}

impl ProbitDesignRow {
    pub fn regressors(&self) -> [f64; 6] {
        let k = self.task_number;
        [self.v, self.ru, self.v_over_tu, self.v * k, self.ru * k, self.v_over_tu * k]
    }
}

/// Replay per-task Kalman filters over every pull and emit one row per
/// valid choice. All pulls update the filter, because the subject saw them.
pub fn build_probit_design(steps: &[BanditStep], kalman: &KalmanParams) -> Result<Vec<ProbitDesignRow>, AnalysisError> {
    let mut rows = Vec::with_capacity(steps.len());
    let mut belief = ArmBelief::prior(kalman);
    let mut prev: Option<&BanditStep> = None;
    for s in steps {
        if s.task == 0 || s.trial == 0 {
            return Err(AnalysisError::DataIntegrity(format!("zero index at simulation {}", s.simulation)));
        }
        let new_task = match prev {
            None => true,
            Some(p) => {
                let key = (s.simulation, s.task, s.trial);
                let pkey = (p.simulation, p.task, p.trial);
                if key <= pkey {
                    return Err(AnalysisError::DataIntegrity(format!("records out of order at {key:?} after {pkey:?}")));
                }
                (s.simulation, s.task) != (p.simulation, p.task)
            }
        };
        if new_task {
            belief = ArmBelief::prior(kalman);
            if s.trial != 1 {
                return Err(AnalysisError::DataIntegrity(format!(
                    "simulation {} task {} starts at trial {}",
                    s.simulation, s.task, s.trial
                )));
            }
        } else if s.trial != prev.map_or(0, |p| p.trial) + 1 {
            return Err(AnalysisError::DataIntegrity(format!(
                "simulation {} task {} skips to trial {}",
                s.simulation, s.task, s.trial
            )));
        }
        let arm = s.arm.ok_or_else(|| {
            AnalysisError::DataIntegrity(format!("reward without a pulled arm at {:?}", (s.simulation, s.task, s.trial)))
        })?;
        if arm >= N_ARMS || !s.reward.is_finite() {
            return Err(AnalysisError::DataIntegrity(format!(
                "invalid arm {arm} or reward {} at {:?}",
                s.reward,
                (s.simulation, s.task, s.trial)
            )));
        }
        if s.valid {
            let r = BeliefRegressors::of(&belief);
            let v_over_tu = r.v_over_tu().map_err(|e| AnalysisError::DataIntegrity(e.to_string()))?;
            rows.push(ProbitDesignRow {
                simulation: s.simulation,
                task: s.task,
                trial: s.trial,
                v: r.v,
                ru: r.ru,
                v_over_tu,
                task_number: (s.task - 1) as f64,
                choice: arm == 0,
            });
        }
        belief = kalman_update(&belief, arm, s.reward, kalman.obs_variance)
            .map_err(|e| AnalysisError::DataIntegrity(e.to_string()))?;
        prev = Some(s);
    }
    Ok(rows)
}

pub fn design_matrix(rows: &[ProbitDesignRow]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), PROBIT_NAMES.len(), |i, j| rows[i].regressors()[j])
}

/// Strategy regression over design rows.
pub fn probit_fit_design(rows: &[ProbitDesignRow]) -> Result<RegressionFit, AnalysisError> {
    let x = design_matrix(rows);
    let y: Vec<bool> = rows.iter().map(|r| r.choice).collect();
    probit_fit(&PROBIT_NAMES, &x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(task: usize, trial: usize, arm: usize, reward: f64) -> BanditStep {
        BanditStep { simulation: 0, task, trial, arm: Some(arm), reward, valid: true }
    }

    #[test]
    fn first_trial_is_symmetric() {
        let rows = build_probit_design(&[step(1, 1, 0, 8.0)], &KalmanParams::default()).unwrap();
        assert_eq!((rows[0].v, rows[0].ru, rows[0].v_over_tu), (0.0, 0.0, 0.0));
        assert!(rows[0].choice);
    }

    #[test]
    fn one_step_closed_form() {
        let rows = build_probit_design(&[step(1, 1, 0, 8.0), step(1, 2, 1, 0.0)], &KalmanParams::default()).unwrap();
        let r = rows[1];
        assert!((r.v - 16.0 / 3.0).abs() < 1e-12);
        assert!((r.ru - ((64.0f64 / 3.0).sqrt() - 8.0)).abs() < 1e-12);
        let tu = (64.0f64 / 3.0 + 64.0).sqrt();
        assert!((r.v_over_tu - 16.0 / 3.0 / tu).abs() < 1e-12);
        assert!((tu - 9.238).abs() < 1e-3);
        assert!(!r.choice);
    }

    #[test]
    fn task_resets_and_centering() {
        let steps = [step(1, 1, 0, 8.0), step(2, 1, 1, 3.0), step(2, 2, 0, 1.0)];
        let rows = build_probit_design(&steps, &KalmanParams::default()).unwrap();
        assert_eq!(rows[1].v, 0.0);
        assert_eq!(rows[1].task_number, 1.0);
        assert_eq!(rows[0].task_number, 0.0);
        assert_eq!(rows[2].regressors()[3], rows[2].v);
    }

    #[test]
    fn integrity_errors() {
        let k = KalmanParams::default();
        assert!(build_probit_design(&[step(1, 2, 0, 1.0)], &k).is_err());
        assert!(build_probit_design(&[step(1, 1, 0, 1.0), step(1, 1, 0, 1.0)], &k).is_err());
        let mut s = step(1, 1, 0, 1.0);
        s.arm = None;
        assert!(build_probit_design(&[s], &k).is_err());
    }

    #[test]
    fn invalid_trials_update_but_emit_nothing() {
        let mut s = step(1, 1, 0, 8.0);
        s.valid = false;
        let rows = build_probit_design(&[s, step(1, 2, 1, 0.0)], &KalmanParams::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].v - 16.0 / 3.0).abs() < 1e-12);
    }
}
