//! Statistical analyses over trial records: OLS effect regressions, probit
//! strategy decomposition, prior elicitation, similarity and error metrics.

mod design;
mod metrics;
mod priors;
mod regression;

use thiserror::Error;

use crate::client::ClientError;
use crate::prompts::PromptError;

pub use design::{build_probit_design, design_matrix, probit_fit_design, BanditStep, ProbitDesignRow, PROBIT_NAMES};
pub use metrics::{
    compute_regret, default_gamma, error_metrics, is_extreme, task_similarity, CellError, ErrorMetrics, ErrorSample,
    ExtremeRate,
};
pub use priors::{
    estimate_bandit_prior, estimate_function_prior, fit_prior_line, linspace, PriorEstimate, ProbeSettings,
    OUTLIER_LIMIT,
};
pub use regression::{
    ols_fit, probit_fit, probit_fitted, probit_log_likelihood, probit_observed_information, probit_score,
    standardize_columns, Coefficient, FitKind, RegressionFit, INTERCEPT,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("insufficient data: need {needed}, have {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("probit did not converge after {iterations} iterations (log-likelihood trace {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },
    #[error("data integrity: {0}")]
    DataIntegrity(String),
    #[error("similarity is undefined without previous tasks")]
    UndefinedSimilarity,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("all {0} probe replies were unparsable")]
    AllProbesUnparsable(usize),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl PartialEq for AnalysisError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
