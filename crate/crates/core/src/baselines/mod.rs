//! Reference learners the subject is compared against.

mod blr;
mod forest;
mod kalman;

pub use blr::{blr_predict, blr_update, design_row, BlrPosterior, BlrPrior};
pub use forest::{random_forest_fit, random_forest_predict, ForestConfig, RandomForest};
pub use kalman::{
    hybrid_choice_prob, kalman_update, policy_greedy, policy_random, policy_thompson, policy_ucb,
    simulate_policy, ArmBelief, BanditPolicy, BeliefRegressors, KalmanParams, StrategyWeights,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("total uncertainty is zero; V/TU is undefined")]
    ZeroTotalUncertainty,
    #[error("cannot fit a model on zero training points")]
    NoTrainingData,
}
