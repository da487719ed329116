//! Ordinary least squares and maximum-likelihood probit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::stats::{inverse_mills, normal_cdf, normal_two_sided_p, sample_sd, student_two_sided_p};

/// Name given to the intercept column added by [`ols_fit`].
pub const INTERCEPT: &str = "intercept";

const PROB_CLAMP: f64 = 1e-12;
const SEPARATION_EPS: f64 = 1e-10;
const MAX_ITER: usize = 100;
const LL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Ols,
    Probit,
}

/// Coefficients with their uncertainty. `statistics` holds t values for OLS
/// and z values for probit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub kind: FitKind,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    pub ci95_halfwidth: Vec<f64>,
    pub n_observations: usize,
    pub log_likelihood: Option<f64>,
    /// Some fitted probability is numerically 0 or 1.
    pub separation_warning: bool,
    pub iterations: usize,
}

/// One row of a fit, for lookups by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficient {
    pub estimate: f64,
    pub standard_error: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub ci95_halfwidth: f64,
}

impl RegressionFit {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<Coefficient> {
        let i = self.index_of(name)?;
        Some(Coefficient {
            estimate: self.coefficients[i],
            standard_error: self.standard_errors[i],
            statistic: self.statistics[i],
            p_value: self.p_values[i],
            ci95_halfwidth: self.ci95_halfwidth[i],
        })
    }

    /// Does the 95% interval of coefficient `i` contain `value`?
    pub fn covers(&self, i: usize, value: f64) -> bool {
        (self.coefficients[i] - value).abs() <= self.ci95_halfwidth[i]
    }

    fn assemble(
        kind: FitKind,
        names: Vec<String>,
        beta: &DVector<f64>,
        cov: &DMatrix<f64>,
        n: usize,
        p_of: impl Fn(f64) -> f64,
    ) -> Self {
        let se: Vec<f64> = (0..beta.len()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
        let stat: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
        Self {
            kind,
            names,
            coefficients: beta.iter().copied().collect(),
            p_values: stat.iter().map(|&t| p_of(t)).collect(),
            ci95_halfwidth: se.iter().map(|s| 1.96 * s).collect(),
            standard_errors: se,
            statistics: stat,
            n_observations: n,
            log_likelihood: None,
            separation_warning: false,
            iterations: 0,
        }
    }
}

fn check_shape(names: &[String], x: &DMatrix<f64>, n_y: usize) -> Result<(), AnalysisError> {
    if x.nrows() != n_y {
        return Err(AnalysisError::Dimension(format!("{} design rows but {} responses", x.nrows(), n_y)));
    }
    if names.len() != x.ncols() {
        return Err(AnalysisError::Dimension(format!("{} names for {} columns", names.len(), x.ncols())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::DataIntegrity("non-finite value in design matrix".into()));
    }
    Ok(())
}

fn full_rank(x: &DMatrix<f64>) -> bool {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > max * 1e-10 * (x.nrows().max(x.ncols()) as f64)
}

/// Z-score every column in place using the sample standard deviation.
pub fn standardize_columns(x: &mut DMatrix<f64>) -> Result<(), AnalysisError> {
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let sd = sample_sd(&col);
        if !(sd > 0.0) {
            return Err(AnalysisError::SingularDesign(format!("column {j} is constant")));
        }
        x.column_mut(j).apply(|v| *v = (*v - m) / sd);
    }
    Ok(())
}

/// OLS with an intercept prepended to `x`. When `standardize` is set the
/// predictors are z-scored first.
pub fn ols_fit(
    names: &[&str],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    standardize: bool,
) -> Result<RegressionFit, AnalysisError> {
    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    check_shape(&names, x, y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::DataIntegrity("non-finite response".into()));
    }
    let mut pred = x.clone();
    if standardize {
        standardize_columns(&mut pred)?;
    }
    let n = pred.nrows();
    let p = pred.ncols() + 1;
    if n <= p {
        return Err(AnalysisError::InsufficientData { needed: p + 1, found: n });
    }
    let design = pred.insert_column(0, 1.0);
    if !full_rank(&design) {
        return Err(AnalysisError::SingularDesign("design matrix is rank deficient".into()));
    }
    let xtx = design.transpose() * &design;
    let xtx_inv = xtx
        .cholesky()
        .ok_or_else(|| AnalysisError::SingularDesign("X'X is not positive definite".into()))?
        .inverse();
    let beta = &xtx_inv * design.transpose() * y;
    let resid = y - &design * &beta;
    let df = (n - p) as f64;
    let sigma2 = resid.norm_squared() / df;
    let cov = xtx_inv * sigma2;
    let mut all = vec![INTERCEPT.to_string()];
    all.extend(names);
    Ok(RegressionFit::assemble(FitKind::Ols, all, &beta, &cov, n, |t| student_two_sided_p(t, df)))
}

fn signs(y: &[bool]) -> Vec<f64> {
    y.iter().map(|&c| if c { 1.0 } else { -1.0 }).collect()
}

/// Probit log-likelihood with probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn probit_log_likelihood(x: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(signs(y))
        .map(|(&e, q)| normal_cdf(q * e).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
        .sum()
}

/// Rows whose probability sits on the clamp contribute a constant to the
/// likelihood and nothing to its derivatives.
fn clamped(u: f64) -> bool {
    let p = normal_cdf(u);
    !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p)
}

/// Gradient of [`probit_log_likelihood`].
pub fn probit_score(x: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>) -> DVector<f64> {
    let eta = x * beta;
    let q = signs(y);
    let mut g = DVector::zeros(x.ncols());
    for i in 0..x.nrows() {
        if clamped(q[i] * eta[i]) {
            continue;
        }
        let w = q[i] * inverse_mills(q[i] * eta[i]);
        g += x.row(i).transpose() * w;
    }
    g
}

/// Negative Hessian of [`probit_log_likelihood`].
pub fn probit_observed_information(x: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>) -> DMatrix<f64> {
    let eta = x * beta;
    let q = signs(y);
    let k = x.ncols();
    let mut info = DMatrix::zeros(k, k);
    for i in 0..x.nrows() {
        let u = q[i] * eta[i];
        if clamped(u) {
            continue;
        }
        let lam = inverse_mills(u);
        let w = lam * (u + lam);
        let r = x.row(i);
        info += r.transpose() * r * w;
    }
    info
}

fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let scale = m.diagonal().iter().cloned().fold(0.0, f64::max).max(1.0);
    let mut ridge = 1e-10 * scale;
    for _ in 0..12 {
        let damped = m + DMatrix::identity(m.nrows(), m.ncols()) * ridge;
        if let Some(ch) = damped.cholesky() {
            return Some(ch.solve(b));
        }
        ridge *= 10.0;
    }
    None
}

/// Maximum-likelihood probit without an implicit intercept.
///
/// Newton steps on the observed information with step halving. Stops when
/// the log-likelihood changes by less than 1e-8.
pub fn probit_fit(names: &[&str], x: &DMatrix<f64>, y: &[bool]) -> Result<RegressionFit, AnalysisError> {
    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    check_shape(&names, x, y.len())?;
    let n = x.nrows();
    let k = x.ncols();
    if n < 10 * k {
        return Err(AnalysisError::InsufficientData { needed: 10 * k, found: n });
    }
    if !full_rank(x) {
        return Err(AnalysisError::SingularDesign("probit design is rank deficient".into()));
    }
    let mut beta = DVector::zeros(k);
    let mut ll = probit_log_likelihood(x, y, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let score = probit_score(x, y, &beta);
        let info = probit_observed_information(x, y, &beta);
        let Some(step) = solve_spd(&info, &score) else {
            return Err(AnalysisError::NonConvergence { iterations, trace });
        };
        let mut t = 1.0;
        let mut next = &beta + &step;
        let mut next_ll = probit_log_likelihood(x, y, &next);
        while next_ll < ll && t > 1e-10 {
            t *= 0.5;
            next = &beta + &step * t;
            next_ll = probit_log_likelihood(x, y, &next);
        }
        let delta = next_ll - ll;
        if delta < 0.0 {
            // no ascent direction left
            converged = true;
            break;
        }
        beta = next;
        ll = next_ll;
        trace.push(ll);
        if delta < LL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(AnalysisError::NonConvergence { iterations, trace });
    }
    let info = probit_observed_information(x, y, &beta);
    let cov = match info.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => info.try_inverse().ok_or_else(|| AnalysisError::SingularDesign("information matrix is singular".into()))?,
    };
    let eta = x * &beta;
    let separation = eta.iter().any(|&e| {
        let p = normal_cdf(e);
        p < SEPARATION_EPS || p > 1.0 - SEPARATION_EPS
    });
    let mut fit = RegressionFit::assemble(FitKind::Probit, names, &beta, &cov, n, normal_two_sided_p);
    fit.log_likelihood = Some(ll);
    fit.separation_warning = separation;
    fit.iterations = iterations;
    Ok(fit)
}

/// Fitted probabilities `Phi(x' beta)`.
pub fn probit_fitted(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let b = DVector::from_column_slice(beta);
    (x * b).iter().map(|&e| normal_cdf(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn ols_exact_line() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = DVector::from_fn(10, |i, _| 3.0 * i as f64);
        let fit = ols_fit(&["x"], &x, &y, false).unwrap();
        assert_eq!(fit.names, vec!["intercept", "x"]);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(fit.p_values[1] < 1e-12);
    }

    #[test]
    fn ols_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.random_range(1..=6);
            let n = rng.random_range(k + 3..40);
            let x = random_matrix(&mut rng, n, k);
            let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let fit = ols_fit(&refs, &x, &y, false).unwrap();
            let mut d = DMatrix::from_element(n, k + 1, 1.0);
            d.view_mut((0, 1), (n, k)).copy_from(&x);
            let inv = (d.transpose() * &d).try_inverse().unwrap();
            let beta = &inv * d.transpose() * &y;
            for j in 0..=k {
                assert!((fit.coefficients[j] - beta[j]).abs() < 1e-8);
                assert!((fit.statistics[j] - fit.coefficients[j] / fit.standard_errors[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collinear_design_is_rejected() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let y = DVector::from_fn(10, |i, _| i as f64);
        assert!(matches!(ols_fit(&["a", "b"], &x, &y, false), Err(AnalysisError::SingularDesign(_))));
    }

    #[test]
    fn standardized_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = random_matrix(&mut rng, 30, 3) * 17.0;
        standardize_columns(&mut x).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            assert!(crate::stats::mean(&col).abs() < 1e-10);
            assert!((sample_sd(&col) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 200, 4);
        let y: Vec<bool> = (0..200).map(|_| rng.random()).collect();
        for _ in 0..100 {
            let beta = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let g = probit_score(&x, &y, &beta);
            for j in 0..4 {
                let h = 1e-5;
                let mut up = beta.clone();
                up[j] += h;
                let mut dn = beta.clone();
                dn[j] -= h;
                let fd = (probit_log_likelihood(&x, &y, &up) - probit_log_likelihood(&x, &y, &dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn probit_rescaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 400, 2);
        let y: Vec<bool> = (0..400)
            .map(|i| rng.random::<f64>() < normal_cdf(0.8 * x[(i, 0)] - 0.5 * x[(i, 1)]))
            .collect();
        let a = probit_fit(&["a", "b"], &x, &y).unwrap();
        let mut scaled = x.clone();
        scaled.column_mut(1).scale_mut(10.0);
        let b = probit_fit(&["a", "b"], &scaled, &y).unwrap();
        assert!((a.coefficients[1] - 10.0 * b.coefficients[1]).abs() < 1e-6);
        let pa = probit_fitted(&x, &a.coefficients);
        let pb = probit_fitted(&scaled, &b.coefficients);
        for (u, v) in pa.iter().zip(&pb) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn separated_data_sets_warning() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 - 19.5);
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let fit = probit_fit(&["x"], &x, &y).unwrap();
        assert!(fit.separation_warning);
    }
}
