//! Task distributions and tabular dataset preparation.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bandit tasks always have two arms.
pub const N_ARMS: usize = 2;

/// Features used per regression task.
pub const REGRESSION_FEATURES: usize = 5;

/// Letters available for naming slot machines: A–Z without I and U.
pub const MACHINE_LETTERS: [char; 24] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S',
    'T', 'V', 'W', 'X', 'Y', 'Z',
];

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("arm index {0} out of range (bandit tasks have two arms)")]
    InvalidArm(usize),
    #[error("cannot read dataset {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("dataset {name}: {reason}")]
    Ingestion { name: String, reason: String },
    #[error("dataset {name} has {found} feature columns, {needed} required")]
    TooFewFeatures { name: String, found: usize, needed: usize },
    #[error("dataset {name}: column `{column}` is constant and cannot be normalized")]
    ConstantColumn { name: String, column: String },
    #[error("need {needed} eligible datasets, only {available} available")]
    InsufficientDatasets { needed: usize, available: usize },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> TaskError {
    TaskError::InvalidParams { field, reason: reason.into() }
}

/// Generative parameters of the linear function-learning tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionTaskParams {
    pub slope_mean: f64,
    pub slope_sd: f64,
    pub intercept_mean: f64,
    pub intercept_sd: f64,
    pub noise_sd: f64,
    pub input_low: f64,
    pub input_high: f64,
    pub trials_per_task: usize,
}

impl Default for FunctionTaskParams {
    fn default() -> Self {
        Self {
            slope_mean: -2.0,
            slope_sd: 1.0,
            intercept_mean: -100.0,
            intercept_sd: 1.0,
            noise_sd: 1.0,
            input_low: 0.0,
            input_high: 100.0,
            trials_per_task: 5,
        }
    }
}

impl FunctionTaskParams {
    pub fn validate(&self) -> Result<(), TaskError> {
        for (field, v) in [
            ("slope_mean", self.slope_mean),
            ("intercept_mean", self.intercept_mean),
            ("input_low", self.input_low),
            ("input_high", self.input_high),
        ] {
            if !v.is_finite() {
                return Err(invalid(field, "must be finite"));
            }
        }
        // Zero spread is accepted so a task can be pinned to a fixed line.
        for (field, v) in [
            ("slope_sd", self.slope_sd),
            ("intercept_sd", self.intercept_sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, format!("must be a finite value >= 0, got {v}")));
            }
        }
        if self.input_low >= self.input_high {
            return Err(invalid("input_low", "must be below input_high"));
        }
        if self.trials_per_task == 0 {
            return Err(invalid("trials_per_task", "must be at least 1"));
        }
        Ok(())
    }
}

/// One linear function `f(x) = slope * x + intercept` plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionTask {
    pub slope: f64,
    pub intercept: f64,
    pub params: FunctionTaskParams,
}

impl FunctionTask {
    /// Noise-free function value.
    pub fn value(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Draw an input uniformly from the task's input range.
    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.params.input_low..=self.params.input_high)
    }

    /// Noisy observation at `x`.
    pub fn observe_at<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        self.value(x) + gaussian(rng, self.params.noise_sd)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("validated standard deviation").sample(rng)
}

pub fn sample_function_task<R: Rng + ?Sized>(rng: &mut R, params: &FunctionTaskParams) -> FunctionTask {
    let slope = params.slope_mean + gaussian(rng, params.slope_sd);
    let intercept = params.intercept_mean + gaussian(rng, params.intercept_sd);
    FunctionTask { slope, intercept, params: params.clone() }
}

/// One `(x, y)` draw with `x ~ U(low, high)` and `y = f(x) + noise`.
pub fn gen_function_trial<R: Rng + ?Sized>(task: &FunctionTask, rng: &mut R) -> (f64, f64) {
    let x = task.sample_input(rng);
    let y = task.observe_at(x, rng);
    (x, y)
}

/// Generative parameters of the two-armed bandit tasks.
///
/// `mean_sd` and `reward_noise_sd` are standard deviations; the defaults are
/// `sqrt(64)` and `sqrt(32)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditTaskParams {
    pub mean_sd: f64,
    pub reward_noise_sd: f64,
    pub trials_per_task: usize,
}

impl Default for BanditTaskParams {
    fn default() -> Self {
        Self { mean_sd: 8.0, reward_noise_sd: 32f64.sqrt(), trials_per_task: 10 }
    }
}

impl BanditTaskParams {
    pub fn validate(&self) -> Result<(), TaskError> {
        if !(self.mean_sd.is_finite() && self.mean_sd > 0.0) {
            return Err(invalid("mean_sd", "must be > 0"));
        }
        if !(self.reward_noise_sd.is_finite() && self.reward_noise_sd >= 0.0) {
            return Err(invalid("reward_noise_sd", "must be >= 0"));
        }
        if self.trials_per_task == 0 {
            return Err(invalid("trials_per_task", "must be at least 1"));
        }
        Ok(())
    }
}

/// A casino: two slot machines with hidden mean rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditTask {
    pub arm_means: [f64; N_ARMS],
    pub letters: [char; N_ARMS],
    pub params: BanditTaskParams,
}

impl BanditTask {
    pub fn best_mean(&self) -> f64 {
        self.arm_means[0].max(self.arm_means[1])
    }

    pub fn arm_of_letter(&self, letter: char) -> Option<usize> {
        self.letters.iter().position(|&l| l == letter)
    }
}

pub fn sample_bandit_task<R: Rng + ?Sized>(rng: &mut R, params: &BanditTaskParams) -> BanditTask {
    let arm_means = [gaussian(rng, params.mean_sd), gaussian(rng, params.mean_sd)];
    let picked: Vec<char> = MACHINE_LETTERS.choose_multiple(rng, N_ARMS).copied().collect();
    BanditTask { arm_means, letters: [picked[0], picked[1]], params: params.clone() }
}

/// Raw reward of pulling `arm`. Prompts show it rounded to one decimal.
pub fn bandit_reward<R: Rng + ?Sized>(task: &BanditTask, arm: usize, rng: &mut R) -> Result<f64, TaskError> {
    if arm >= N_ARMS {
        return Err(TaskError::InvalidArm(arm));
    }
    Ok(task.arm_means[arm] + gaussian(rng, task.params.reward_noise_sd))
}

/// A numeric table whose last column is the regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// Row-major feature matrix.
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Names of the feature columns (the target column is not included).
    pub column_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.column_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.features.iter().map(|row| row[j]).collect()
    }

    /// Keep only the listed feature columns, in the given order.
    pub fn project(&self, columns: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self
                .features
                .iter()
                .map(|row| columns.iter().map(|&j| row[j]).collect())
                .collect(),
            targets: self.targets.clone(),
            column_names: columns.iter().map(|&j| self.column_names[j].clone()).collect(),
            target_name: self.target_name.clone(),
        }
    }
}

/// Read a comma-separated file with a header row; the last column is the target.
///
/// Rows containing any empty, non-numeric or non-finite cell are dropped.
pub fn load_dataset(path: &Path) -> Result<Dataset, TaskError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let unreadable = |reason: String| TaskError::Unreadable { path: path.display().to_string(), reason };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| unreadable(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| unreadable(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(TaskError::Ingestion { name, reason: "empty file or missing header row".into() });
    }
    if header.len() < 2 {
        return Err(TaskError::Ingestion {
            name,
            reason: "need at least one feature column and a target column".into(),
        });
    }
    let width = header.len();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| unreadable(e.to_string()))?;
        if record.len() != width {
            continue;
        }
        let parsed: Option<Vec<f64>> = record
            .iter()
            .map(|cell| cell.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        if let Some(mut row) = parsed {
            let target = row.pop().expect("width >= 2");
            features.push(row);
            targets.push(target);
        }
    }
    if targets.is_empty() {
        return Err(TaskError::Ingestion { name, reason: "no fully numeric rows".into() });
    }
    let mut column_names = header;
    let target_name = column_names.pop().expect("width >= 2");
    Ok(Dataset { name, features, targets, column_names, target_name })
}

/// Univariate regression F statistic of every feature column against the target.
///
/// `F = (n - 2) r^2 / (1 - r^2)`; constant columns (or a constant target) get 0,
/// perfectly correlated columns get `+inf`.
pub fn f_values(dataset: &Dataset) -> Vec<f64> {
    let n = dataset.n_rows() as f64;
    let y = &dataset.targets;
    let y_mean = y.iter().sum::<f64>() / n;
    let syy: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    (0..dataset.n_features())
        .map(|j| {
            let x = dataset.column(j);
            let x_mean = x.iter().sum::<f64>() / n;
            let sxx: f64 = x.iter().map(|v| (v - x_mean).powi(2)).sum();
            if sxx == 0.0 || syy == 0.0 {
                return 0.0;
            }
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - x_mean) * (b - y_mean)).sum();
            let r2 = (sxy * sxy / (sxx * syy)).min(1.0);
            if r2 >= 1.0 {
                f64::INFINITY
            } else {
                (n - 2.0) * r2 / (1.0 - r2)
            }
        })
        .collect()
}

/// Feature columns ordered by decreasing F value, ties toward the lower index.
pub fn rank_features_f_value(dataset: &Dataset) -> Vec<usize> {
    let f = f_values(dataset);
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[b].partial_cmp(&f[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order
}

/// The `k` columns with the largest F values, returned in column order.
pub fn select_features_f_value(dataset: &Dataset, k: usize) -> Result<Vec<usize>, TaskError> {
    if dataset.n_features() < k {
        return Err(TaskError::TooFewFeatures {
            name: dataset.name.clone(),
            found: dataset.n_features(),
            needed: k,
        });
    }
    if dataset.n_rows() < 3 {
        return Err(TaskError::Ingestion {
            name: dataset.name.clone(),
            reason: format!("F-value selection needs at least 3 rows, found {}", dataset.n_rows()),
        });
    }
    let mut chosen: Vec<usize> = rank_features_f_value(dataset).into_iter().take(k).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn rescale(v: f64, lo: f64, hi: f64) -> f64 {
    if v == hi {
        1.0
    } else {
        2.0 * (v - lo) / (hi - lo) - 1.0
    }
}

/// Map every feature column and the target affinely onto `[-1, 1]`.
pub fn normalize_minus1_1(dataset: &Dataset) -> Result<Dataset, TaskError> {
    let mut out = dataset.clone();
    for j in 0..dataset.n_features() {
        let (lo, hi) = min_max(dataset.features.iter().map(|r| r[j]));
        if !(hi > lo) {
            return Err(TaskError::ConstantColumn {
                name: dataset.name.clone(),
                column: dataset.column_names[j].clone(),
            });
        }
        for row in &mut out.features {
            row[j] = rescale(row[j], lo, hi);
        }
    }
    let (lo, hi) = min_max(dataset.targets.iter().copied());
    if !(hi > lo) {
        return Err(TaskError::ConstantColumn {
            name: dataset.name.clone(),
            column: dataset.target_name.clone(),
        });
    }
    for t in &mut out.targets {
        *t = rescale(*t, lo, hi);
    }
    Ok(out)
}

/// A dataset reduced to its top-F features and normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub dataset: Dataset,
    /// Indices of the retained columns in the source file.
    pub source_features: Vec<usize>,
}

/// Feature selection followed by normalization over the full dataset.
pub fn prepare_dataset(dataset: &Dataset, k: usize) -> Result<PreparedDataset, TaskError> {
    let selected = select_features_f_value(dataset, k)?;
    let normalized = normalize_minus1_1(&dataset.project(&selected))?;
    Ok(PreparedDataset { dataset: normalized, source_features: selected })
}

/// One regression task inside an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTask {
    pub dataset: String,
    /// Index into the prepared dataset list the episode was drawn from.
    pub dataset_index: usize,
    pub features: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEpisode {
    pub tasks: Vec<EpisodeTask>,
    pub points_per_task: usize,
    pub feature_count: usize,
}

/// Draw `n_tasks` distinct datasets and `points_per_task` distinct rows of each.
pub fn sample_regression_episode<R: Rng + ?Sized>(
    datasets: &[PreparedDataset],
    rng: &mut R,
    n_tasks: usize,
    points_per_task: usize,
) -> Result<RegressionEpisode, TaskError> {
    let eligible: Vec<usize> = datasets
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            d.dataset.n_features() == REGRESSION_FEATURES && d.dataset.n_rows() >= points_per_task
        })
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < n_tasks {
        return Err(TaskError::InsufficientDatasets { needed: n_tasks, available: eligible.len() });
    }
    let mut chosen = eligible;
    chosen.shuffle(rng);
    chosen.truncate(n_tasks);
    let tasks = chosen
        .into_iter()
        .map(|i| {
            let d = &datasets[i];
            let rows = rand::seq::index::sample(rng, d.dataset.n_rows(), points_per_task).into_vec();
            EpisodeTask {
                dataset: d.dataset.name.clone(),
                dataset_index: i,
                features: d.source_features.clone(),
                rows,
            }
        })
        .collect();
    Ok(RegressionEpisode { tasks, points_per_task, feature_count: REGRESSION_FEATURES })
}

/// Ensure the dataset names are unique; duplicates would make episodes ambiguous.
pub fn check_unique_names(datasets: &[PreparedDataset]) -> Result<(), TaskError> {
    let mut seen = HashSet::new();
    for d in datasets {
        if !seen.insert(d.dataset.name.as_str()) {
            return Err(TaskError::Ingestion {
                name: d.dataset.name.clone(),
                reason: "duplicate dataset name".into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sample_mean_sd(xs: &[f64]) -> (f64, f64) {
        (crate::stats::mean(xs), crate::stats::sample_sd(xs))
    }

    /// Kolmogorov–Smirnov distance against a normal CDF.
    fn ks_normal(mut xs: Vec<f64>, mean: f64, sd: f64) -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = crate::stats::normal_cdf((x - mean) / sd);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    // c(0.01) = 1.628 for the asymptotic KS distribution
    fn ks_critical(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    #[test]
    fn degenerate_function_task() {
        let params = FunctionTaskParams { slope_sd: 0.0, intercept_sd: 0.0, ..Default::default() };
        let task = sample_function_task(&mut rng(1), &params);
        assert_eq!(task.slope, -2.0);
        assert_eq!(task.intercept, -100.0);
    }

    #[test]
    fn function_task_distribution() {
        let params = FunctionTaskParams::default();
        let mut r = rng(11);
        let slopes: Vec<f64> = (0..10_000).map(|_| sample_function_task(&mut r, &params).slope).collect();
        let (m, _) = sample_mean_sd(&slopes);
        assert!((m + 2.0).abs() < 0.05, "mean {m}");
        let d = ks_normal(slopes, -2.0, 1.0);
        assert!(d < ks_critical(10_000), "KS {d}");
    }

    #[test]
    fn function_task_is_deterministic() {
        let params = FunctionTaskParams::default();
        assert_eq!(sample_function_task(&mut rng(5), &params), sample_function_task(&mut rng(5), &params));
    }

    #[test]
    fn noiseless_trial_is_on_the_line() {
        let params = FunctionTaskParams { noise_sd: 0.0, ..Default::default() };
        let task = FunctionTask { slope: -2.0, intercept: -100.0, params };
        assert_eq!(task.observe_at(52.0, &mut rng(0)), -204.0);
    }

    #[test]
    fn trial_noise_and_input_range() {
        let mut task = sample_function_task(&mut rng(2), &FunctionTaskParams::default());
        task.params.noise_sd = 1.0;
        let mut r = rng(3);
        let mut residuals = Vec::new();
        for _ in 0..10_000 {
            let (x, y) = gen_function_trial(&task, &mut r);
            assert!((0.0..=100.0).contains(&x));
            residuals.push(y - task.value(x));
        }
        let (_, sd) = sample_mean_sd(&residuals);
        assert!((sd - 1.0).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn bandit_arm_means_have_sd_8() {
        let params = BanditTaskParams::default();
        let mut r = rng(4);
        let mut means = Vec::new();
        let mut letters_seen = HashSet::new();
        for _ in 0..10_000 {
            let t = sample_bandit_task(&mut r, &params);
            assert_ne!(t.letters[0], t.letters[1]);
            for l in t.letters {
                assert!(l != 'I' && l != 'U');
                letters_seen.insert(l);
            }
            means.extend_from_slice(&t.arm_means);
        }
        assert_eq!(letters_seen.len(), 24);
        let first: Vec<f64> = means.iter().step_by(2).copied().collect();
        let (_, sd) = sample_mean_sd(&first);
        assert!((sd / 8.0 - 1.0).abs() < 0.02, "sd {sd}");
        let d = ks_normal(first, 0.0, 8.0);
        assert!(d < ks_critical(10_000), "KS {d}");
    }

    #[test]
    fn bandit_reward_noise_and_errors() {
        let quiet = BanditTask {
            arm_means: [4.2, -1.0],
            letters: ['J', 'F'],
            params: BanditTaskParams { reward_noise_sd: 0.0, ..Default::default() },
        };
        assert_eq!(bandit_reward(&quiet, 0, &mut rng(0)).unwrap(), 4.2);
        assert_eq!(bandit_reward(&quiet, 2, &mut rng(0)), Err(TaskError::InvalidArm(2)));

        let noisy = BanditTask { arm_means: [0.0, 0.0], letters: ['J', 'F'], params: BanditTaskParams::default() };
        let mut r = rng(6);
        let draws: Vec<f64> = (0..10_000).map(|_| bandit_reward(&noisy, 0, &mut r).unwrap()).collect();
        let (_, sd) = sample_mean_sd(&draws);
        assert!((sd / 32f64.sqrt() - 1.0).abs() < 0.02, "sd {sd}");
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_small_file() {
        let f = write_tmp("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.features, vec![vec![1.0, 2.0], vec![4.0, 5.0], vec![7.0, 8.0]]);
        assert_eq!(d.targets, vec![3.0, 6.0, 9.0]);
        assert_eq!(d.column_names, vec!["a", "b"]);
        assert_eq!(d.target_name, "y");
    }

    #[test]
    fn non_numeric_rows_are_dropped() {
        let f = write_tmp("a,b,y\n1,2,3\n1,x,3\n4,,6\n7,8,9\n5,5,nan\n");
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.targets, vec![3.0, 9.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("");
        assert!(load_dataset(f.path()).is_err());
        let f = write_tmp("a,y\nq,r\n");
        assert!(matches!(load_dataset(f.path()), Err(TaskError::Ingestion { .. })));
        assert!(matches!(load_dataset(Path::new("/definitely/missing.csv")), Err(TaskError::Unreadable { .. })));
    }

    fn dataset(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Dataset {
        let k = features[0].len();
        Dataset {
            name: "toy".into(),
            features,
            targets,
            column_names: (0..k).map(|j| format!("c{j}")).collect(),
            target_name: "y".into(),
        }
    }

    #[test]
    fn f_value_hand_example() {
        // x = (1,2,3,4), y = (1,2,3,5): Sxy = 6.5, Sxx = 5, Syy = 8.75,
        // r^2 = 42.25 / 43.75 = 169/175, F = 2 * 169 / 6
        let d = dataset(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]], vec![1.0, 2.0, 3.0, 5.0]);
        let f = f_values(&d)[0];
        assert!((f - 169.0 / 3.0).abs() < 1e-9, "F {f}");
    }

    #[test]
    fn exact_column_ranks_first() {
        let mut r = rng(8);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..6).map(|_| r.random::<f64>()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|row| row[0]).collect();
        let d = dataset(rows, y);
        assert_eq!(rank_features_f_value(&d)[0], 0);
        assert!(select_features_f_value(&d, 5).unwrap().contains(&0));
    }

    #[test]
    fn five_columns_select_identity_and_fewer_reject() {
        let mut r = rng(9);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| r.random::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
        let d = dataset(rows, y);
        assert_eq!(select_features_f_value(&d, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        let small = d.project(&[0, 1, 2, 3]);
        assert!(matches!(select_features_f_value(&small, 5), Err(TaskError::TooFewFeatures { .. })));
    }

    #[test]
    fn constant_column_has_zero_f() {
        let d = dataset(
            vec![vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 5.0]],
            vec![1.0, 2.0, 3.0, 4.0],
        );
        assert_eq!(f_values(&d)[0], 0.0);
        assert!(matches!(normalize_minus1_1(&d), Err(TaskError::ConstantColumn { .. })));
    }

    #[test]
    fn normalization_maps_to_unit_interval() {
        let d = dataset(vec![vec![0.0], vec![5.0], vec![10.0]], vec![3.0, -1.0, 7.0]);
        let n = normalize_minus1_1(&d).unwrap();
        assert_eq!(n.column(0), vec![-1.0, 0.0, 1.0]);
        assert_eq!(n.targets, vec![0.0, -1.0, 1.0]);
    }

    fn prepared(name: &str, rows: usize, seed: u64) -> PreparedDataset {
        let mut r = rng(seed);
        let features: Vec<Vec<f64>> = (0..rows).map(|_| (0..5).map(|_| r.random::<f64>()).collect()).collect();
        let targets: Vec<f64> = features.iter().map(|f| f.iter().sum::<f64>() + r.random::<f64>()).collect();
        let mut d = dataset(features, targets);
        d.name = name.into();
        prepare_dataset(&d, 5).unwrap()
    }

    #[test]
    fn episode_uses_every_dataset_once() {
        let data: Vec<PreparedDataset> = (0..5).map(|i| prepared(&format!("d{i}"), 20, i)).collect();
        let ep = sample_regression_episode(&data, &mut rng(1), 5, 5).unwrap();
        let mut names: Vec<&str> = ep.tasks.iter().map(|t| t.dataset.as_str()).collect();
        names.sort();
        assert_eq!(names, vec!["d0", "d1", "d2", "d3", "d4"]);
        for t in &ep.tasks {
            let distinct: HashSet<usize> = t.rows.iter().copied().collect();
            assert_eq!(distinct.len(), 5);
            assert_eq!(t.features.len(), 5);
        }
        assert_eq!(ep, sample_regression_episode(&data, &mut rng(1), 5, 5).unwrap());
    }

    #[test]
    fn episode_with_too_few_rows_fails() {
        let mut data: Vec<PreparedDataset> = (0..4).map(|i| prepared(&format!("d{i}"), 20, i)).collect();
        data.push(prepared("tiny", 4, 99));
        assert_eq!(
            sample_regression_episode(&data, &mut rng(1), 5, 5),
            Err(TaskError::InsufficientDatasets { needed: 5, available: 4 })
        );
    }
}
