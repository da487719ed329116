use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BaselineError;

fn contract(msg: impl Into<String>) -> BaselineError {
    BaselineError::Contract(msg.into())
}

fn check_gaussian(mean: &DVector<f64>, cov: &DMatrix<f64>, noise: f64) -> Result<(), BaselineError> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(contract(format!("covariance is {}x{}, mean has {d} entries", cov.nrows(), cov.ncols())));
    }
    if !(noise.is_finite() && noise > 0.0) {
        return Err(contract(format!("noise variance must be > 0, got {noise}")));
    }
    for i in 0..d {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 {
                return Err(contract("covariance is not symmetric"));
            }
        }
    }
    if cov.clone().cholesky().is_none() {
        return Err(contract("covariance is not positive definite"));
    }
    Ok(())
}

/// Gaussian prior over regression weights; the intercept is the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrPrior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub noise_variance: f64,
}

impl BlrPrior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, noise_variance: f64) -> Result<Self, BaselineError> {
        check_gaussian(&mean, &covariance, noise_variance)?;
        Ok(Self { mean, covariance, noise_variance })
    }

    /// `N(0, I)` over `dim` weights.
    pub fn standard_normal(dim: usize, noise_variance: f64) -> Self {
        Self { mean: DVector::zeros(dim), covariance: DMatrix::identity(dim, dim), noise_variance }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub noise_variance: f64,
}

impl BlrPosterior {
    /// Use this posterior as the prior of a further update.
    pub fn as_prior(&self) -> BlrPrior {
        BlrPrior { mean: self.mean.clone(), covariance: self.covariance.clone(), noise_variance: self.noise_variance }
    }
}

impl From<BlrPrior> for BlrPosterior {
    fn from(p: BlrPrior) -> Self {
        Self { mean: p.mean, covariance: p.covariance, noise_variance: p.noise_variance }
    }
}

/// Append the intercept column to a feature vector.
pub fn design_row(features: &[f64]) -> DVector<f64> {
    DVector::from_iterator(features.len() + 1, features.iter().copied().chain(std::iter::once(1.0)))
}

fn spd_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>, BaselineError> {
    let inv = m.cholesky().ok_or_else(|| contract("matrix is not positive definite"))?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Conjugate update with design `x` (intercept column included) and targets `y`.
pub fn blr_update(prior: &BlrPrior, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<BlrPosterior, BaselineError> {
    check_gaussian(&prior.mean, &prior.covariance, prior.noise_variance)?;
    if x.nrows() != y.len() {
        return Err(contract(format!("design has {} rows, targets have {}", x.nrows(), y.len())));
    }
    if x.nrows() == 0 {
        return Ok(prior.clone().into());
    }
    if x.ncols() != prior.dim() {
        return Err(contract(format!("design has {} columns, prior has {}", x.ncols(), prior.dim())));
    }
    let prior_precision = spd_inverse(prior.covariance.clone())?;
    let s2 = prior.noise_variance;
    let precision = &prior_precision + x.transpose() * x / s2;
    let covariance = spd_inverse(precision)?;
    let mean = &covariance * (&prior_precision * &prior.mean + x.transpose() * y / s2);
    Ok(BlrPosterior { mean, covariance, noise_variance: s2 })
}

/// Predictive mean and variance (including observation noise) at `x`.
pub fn blr_predict(posterior: &BlrPosterior, x: &DVector<f64>) -> Result<(f64, f64), BaselineError> {
    if x.len() != posterior.mean.len() {
        return Err(contract(format!("input has {} entries, posterior has {}", x.len(), posterior.mean.len())));
    }
    let mean = x.dot(&posterior.mean);
    let var = (x.transpose() * &posterior.covariance * x)[(0, 0)] + posterior.noise_variance;
    Ok((mean, var))
}
