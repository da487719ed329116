//! Small numerical helpers shared by the baselines and the analyses.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
pub fn student_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    // sf(|t|) keeps precision for large |t|
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Inverse Mills ratio `phi(u) / Phi(u)`, stable for very negative `u`.
pub fn inverse_mills(u: f64) -> f64 {
    if u < -30.0 {
        // continued-fraction tail
        let u2 = u * u;
        -u / (1.0 - 1.0 / u2 + 3.0 / (u2 * u2))
    } else {
        normal_pdf(u) / normal_cdf(u)
    }
}

/// Mean of a slice; NaN when empty.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Mean with a normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci95: f64,
}

impl MeanCi {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = mean(xs);
        let sd = sample_sd(xs);
        let ci95 = if n > 1 { 1.96 * sd / (n as f64).sqrt() } else { f64::NAN };
        Self { n, mean, sd, ci95 }
    }
}
