//! Local stand-ins for a language model.
//!
//! Agents read nothing but the prompt text, exactly like a model would, and
//! answer in the same surface format (a number, or ` Machine <L>`). Their
//! randomness is seeded from the agent seed and the prompt, so identical
//! requests always get identical answers.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClientError, CompletionBackend, CompletionRequest};
use crate::baselines::{
    blr_predict, blr_update, design_row, hybrid_choice_prob, kalman_update, policy_greedy, policy_ucb, ArmBelief,
    BlrPrior, KalmanParams, StrategyWeights,
};
use crate::rng::mix64;

fn default_noise() -> f64 {
    1.0
}

fn default_c() -> f64 {
    1.0
}

fn zero_weights() -> StrategyWeights {
    StrategyWeights::new(0.0, 0.0, 0.0)
}

/// Behaviour of a scripted subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    /// Same reply to every prompt.
    Constant { reply: String },
    /// Exact prompt lookup, with an optional fallback reply.
    Table {
        entries: BTreeMap<String, String>,
        #[serde(default)]
        default: Option<String>,
    },
    /// Posterior-mean prediction of a standard-normal-prior BLR fitted to the
    /// current task only.
    BlrMean {
        #[serde(default = "default_noise")]
        noise_variance: f64,
    },
    /// BLR whose prior mean is the average of the fits of all previous tasks
    /// in the prompt (standard normal prior on the first task).
    MetaBlrMean {
        #[serde(default = "default_noise")]
        noise_variance: f64,
        #[serde(default = "default_noise")]
        prior_variance: f64,
    },
    /// Fixed line `slope * x + intercept + N(0, noise_sd)` on function prompts.
    Line {
        slope: f64,
        intercept: f64,
        #[serde(default)]
        noise_sd: f64,
    },
    /// Kalman-filter beliefs with greedy choices (random tie-break).
    KalmanGreedy {
        #[serde(default)]
        kalman: KalmanParams,
    },
    /// Kalman-filter beliefs with `mean + c * sd` choices.
    KalmanUcb {
        #[serde(default)]
        kalman: KalmanParams,
        #[serde(default = "default_c")]
        c: f64,
    },
    /// Choices drawn from the probit mixture of Boltzmann, UCB and Thompson
    /// components; the weights grow by `task_slopes` per casino after the first.
    HybridProbit {
        #[serde(default)]
        kalman: KalmanParams,
        weights: StrategyWeights,
        #[serde(default = "zero_weights")]
        task_slopes: StrategyWeights,
    },
}

impl AgentSpec {
    pub fn thompson() -> Self {
        AgentSpec::HybridProbit {
            kalman: KalmanParams::default(),
            weights: StrategyWeights::THOMPSON,
            task_slopes: zero_weights(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    spec: AgentSpec,
    seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn fmt_number(v: f64) -> String {
    format!("{v}")
}

fn scripted(msg: impl Into<String>) -> ClientError {
    ClientError::Scripted(msg.into())
}

impl ScriptedAgent {
    pub fn new(spec: AgentSpec, seed: u64) -> Self {
        Self { spec, seed }
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    fn rng_for(&self, prompt: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix64(self.seed ^ fnv1a(prompt.as_bytes())))
    }

    /// Answer a prompt the way the configured agent would.
    pub fn respond(&self, prompt: &str) -> Result<String, ClientError> {
        let mut rng = self.rng_for(prompt);
        match &self.spec {
            AgentSpec::Constant { reply } => Ok(reply.clone()),
            AgentSpec::Table { entries, default } => entries
                .get(prompt)
                .or(default.as_ref())
                .cloned()
                .ok_or_else(|| scripted("prompt not in table")),
            AgentSpec::BlrMean { noise_variance } => {
                let view = SupervisedView::parse(prompt).ok_or_else(|| scripted("not a supervised prompt"))?;
                let dim = view.query.len() + 1;
                let prior = BlrPrior::standard_normal(dim, *noise_variance);
                predict_blr(&prior, view.current(), &view.query).map(fmt_number)
            }
            AgentSpec::MetaBlrMean { noise_variance, prior_variance } => {
                let view = SupervisedView::parse(prompt).ok_or_else(|| scripted("not a supervised prompt"))?;
                let dim = view.query.len() + 1;
                let previous = &view.blocks[..view.blocks.len() - 1];
                let prior = if previous.is_empty() {
                    BlrPrior::standard_normal(dim, *noise_variance)
                } else {
                    // near-flat prior so each previous task is summarised by its own data
                    let vague = BlrPrior {
                        mean: DVector::zeros(dim),
                        covariance: DMatrix::identity(dim, dim) * 1e6,
                        noise_variance: *noise_variance,
                    };
                    let mut sum = DVector::zeros(dim);
                    for block in previous {
                        let (x, y) = design(block, dim);
                        let post = blr_update(&vague, &x, &y).map_err(|e| scripted(e.to_string()))?;
                        sum += post.mean;
                    }
                    BlrPrior {
                        mean: sum / previous.len() as f64,
                        covariance: DMatrix::identity(dim, dim) * *prior_variance,
                        noise_variance: *noise_variance,
                    }
                };
                predict_blr(&prior, view.current(), &view.query).map(fmt_number)
            }
            AgentSpec::Line { slope, intercept, noise_sd } => {
                let view = SupervisedView::parse(prompt).ok_or_else(|| scripted("not a function prompt"))?;
                let x = *view.query.first().ok_or_else(|| scripted("empty query"))?;
                let noise = if *noise_sd > 0.0 { Normal::new(0.0, *noise_sd).unwrap().sample(&mut rng) } else { 0.0 };
                Ok(fmt_number(slope * x + intercept + noise))
            }
            AgentSpec::KalmanGreedy { kalman } => {
                self.bandit_choice(prompt, kalman, |belief, _, rng| Ok(policy_greedy(belief, rng)), &mut rng)
            }
            AgentSpec::KalmanUcb { kalman, c } => {
                self.bandit_choice(prompt, kalman, |belief, _, _| Ok(policy_ucb(belief, *c)), &mut rng)
            }
            AgentSpec::HybridProbit { kalman, weights, task_slopes } => self.bandit_choice(
                prompt,
                kalman,
                |belief, casino, rng| {
                    let k = casino.saturating_sub(1) as f64;
                    let w = StrategyWeights::new(
                        weights.boltzmann + k * task_slopes.boltzmann,
                        weights.ucb + k * task_slopes.ucb,
                        weights.thompson + k * task_slopes.thompson,
                    );
                    let p = hybrid_choice_prob(belief, &w).map_err(|e| scripted(e.to_string()))?;
                    Ok(if rng.random::<f64>() < p { 0 } else { 1 })
                },
                &mut rng,
            ),
        }
    }

    fn bandit_choice<F>(&self, prompt: &str, kalman: &KalmanParams, choose: F, rng: &mut ChaCha8Rng) -> Result<String, ClientError>
    where
        F: Fn(&ArmBelief, usize, &mut ChaCha8Rng) -> Result<usize, ClientError>,
    {
        let view = BanditView::parse(prompt).ok_or_else(|| scripted("not a bandit prompt"))?;
        if let Some(letter) = view.probe_letter {
            // prior probes get the prior mean of the filter
            let _ = letter;
            return Ok(fmt_number(kalman.prior_mean));
        }
        let (letters, casino) = view.question.ok_or_else(|| scripted("bandit prompt without a question"))?;
        let mut belief = ArmBelief::prior(kalman);
        for (letter, reward) in view.blocks.last().map(Vec::as_slice).unwrap_or(&[]) {
            let arm = letters
                .iter()
                .position(|l| l == letter)
                .ok_or_else(|| scripted(format!("reward line for unknown machine {letter}")))?;
            belief = kalman_update(&belief, arm, *reward, kalman.obs_variance).map_err(|e| scripted(e.to_string()))?;
        }
        let arm = choose(&belief, casino, rng)?;
        Ok(format!(" Machine {}", letters[arm]))
    }
}

impl CompletionBackend for ScriptedAgent {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, ClientError> {
        self.respond(&request.prompt)
    }
}

fn design(block: &[(Vec<f64>, f64)], dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut x = DMatrix::zeros(block.len(), dim);
    let mut y = DVector::zeros(block.len());
    for (i, (xi, yi)) in block.iter().enumerate() {
        x.set_row(i, &design_row(xi).transpose());
        y[i] = *yi;
    }
    (x, y)
}

fn predict_blr(prior: &BlrPrior, data: &[(Vec<f64>, f64)], query: &[f64]) -> Result<f64, ClientError> {
    let (x, y) = design(data, prior.dim());
    let post = blr_update(prior, &x, &y).map_err(|e| scripted(e.to_string()))?;
    blr_predict(&post, &design_row(query)).map(|(m, _)| m).map_err(|e| scripted(e.to_string()))
}

/// Observations and query read back from a function or regression prompt.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SupervisedView {
    pub blocks: Vec<Vec<(Vec<f64>, f64)>>,
    pub query: Vec<f64>,
}

impl SupervisedView {
    pub fn current(&self) -> &[(Vec<f64>, f64)] {
        self.blocks.last().map(Vec::as_slice).unwrap_or(&[])
    }

    fn parse_x(s: &str) -> Option<Vec<f64>> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            inner.split(',').map(|v| v.trim().parse().ok()).collect()
        } else {
            Some(vec![s.parse().ok()?])
        }
    }

    pub fn parse(prompt: &str) -> Option<Self> {
        let mut blocks: Vec<Vec<(Vec<f64>, f64)>> = Vec::new();
        let mut query = None;
        for line in prompt.lines() {
            if (line.starts_with("Machine ") || line.starts_with("Task ")) && line.ends_with(':') {
                blocks.push(Vec::new());
                continue;
            }
            let Some(rest) = line.strip_prefix("x=") else { continue };
            let (xs, ys) = rest.rsplit_once(", y=")?;
            let x = Self::parse_x(xs)?;
            let ys = ys.trim();
            if ys.is_empty() {
                query = Some(x);
            } else {
                let y: f64 = ys.trim_end_matches(';').trim().parse().ok()?;
                blocks.last_mut()?.push((x, y));
            }
        }
        Some(Self { blocks, query: query? })
    }
}

/// Casino blocks, the question letters and casino index, or a probe letter.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BanditView {
    pub blocks: Vec<Vec<(char, f64)>>,
    pub question: Option<([char; 2], usize)>,
    pub probe_letter: Option<char>,
}

impl BanditView {
    pub fn parse(prompt: &str) -> Option<Self> {
        if !prompt.starts_with("You are going to different casinos") {
            return None;
        }
        let mut view = BanditView { blocks: Vec::new(), question: None, probe_letter: None };
        for line in prompt.lines() {
            if line.starts_with("You have received the following points") {
                view.blocks.push(Vec::new());
            } else if let Some(rest) = line.strip_prefix("- Machine ") {
                let letter = rest.chars().next()?;
                let reward: f64 = rest.get(1..)?.trim().strip_prefix("delivered ")?.strip_suffix(" points.")?.parse().ok()?;
                view.blocks.last_mut()?.push((letter, reward));
            } else if let Some(rest) = line.strip_prefix("Q: We are now performing trial ") {
                let casino: usize = rest.split(" in casino ").nth(1)?.split('.').next()?.parse().ok()?;
                let tail = rest.split("between machine ").nth(1)?;
                let a = tail.chars().next()?;
                let b = tail.split(" and machine ").nth(1)?.chars().next()?;
                view.question = Some(([a, b], casino));
            } else if let Some(rest) = line.strip_prefix("Q: How rewarding do you expect machine ") {
                view.probe_letter = rest.chars().next();
            }
        }
        Some(view)
    }
}
