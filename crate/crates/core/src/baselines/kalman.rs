//! Gaussian beliefs over two arms and the policies that act on them.
//!
//! Policies receive an [`ArmBelief`] and nothing else, so they cannot see the
//! hidden arm means of the task they play.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::stats::normal_cdf;
use crate::tasks::{bandit_reward, BanditTask, N_ARMS};

/// Prior and observation noise of the per-arm Kalman filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams {
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub obs_variance: f64,
}

impl Default for KalmanParams {
    /// Matched to the default generative process: means ~ N(0, 8^2), noise variance 32.
    fn default() -> Self {
        Self { prior_mean: 0.0, prior_variance: 64.0, obs_variance: 32.0 }
    }
}

/// Posterior mean and variance of each arm's mean reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmBelief {
    pub means: [f64; N_ARMS],
    pub variances: [f64; N_ARMS],
}

impl ArmBelief {
    pub fn prior(params: &KalmanParams) -> Self {
        Self { means: [params.prior_mean; N_ARMS], variances: [params.prior_variance; N_ARMS] }
    }

    pub fn sd(&self, arm: usize) -> f64 {
        self.variances[arm].sqrt()
    }
}

pub fn kalman_update(belief: &ArmBelief, arm: usize, reward: f64, obs_variance: f64) -> Result<ArmBelief, BaselineError> {
    if arm >= N_ARMS {
        return Err(BaselineError::Contract(format!("arm {arm} out of range")));
    }
    if !(obs_variance > 0.0) {
        return Err(BaselineError::Contract(format!("observation variance must be > 0, got {obs_variance}")));
    }
    let mut next = *belief;
    let var = belief.variances[arm];
    let gain = var / (var + obs_variance);
    next.means[arm] += gain * (reward - belief.means[arm]);
    next.variances[arm] = (1.0 - gain) * var;
    Ok(next)
}

/// Highest posterior mean; ties broken uniformly at random.
pub fn policy_greedy<R: Rng + ?Sized>(belief: &ArmBelief, rng: &mut R) -> usize {
    let [a, b] = belief.means;
    if a > b {
        0
    } else if b > a {
        1
    } else {
        rng.random_range(0..N_ARMS)
    }
}

/// Highest `mean + c * sd`; ties go to arm 0.
pub fn policy_ucb(belief: &ArmBelief, c: f64) -> usize {
    let score = |arm: usize| belief.means[arm] + c * belief.sd(arm);
    if score(1) > score(0) {
        1
    } else {
        0
    }
}

/// Sample one mean per arm from the belief and pick the larger.
pub fn policy_thompson<R: Rng + ?Sized>(belief: &ArmBelief, rng: &mut R) -> usize {
    let draw = |arm: usize, rng: &mut R| {
        let sd = belief.sd(arm);
        if sd == 0.0 {
            belief.means[arm]
        } else {
            Normal::new(belief.means[arm], sd).expect("finite sd").sample(rng)
        }
    };
    let a = draw(0, rng);
    let b = draw(1, rng);
    if b > a {
        1
    } else {
        0
    }
}

pub fn policy_random<R: Rng + ?Sized>(rng: &mut R) -> usize {
    rng.random_range(0..N_ARMS)
}

/// Value difference, relative uncertainty and total uncertainty of a belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefRegressors {
    pub v: f64,
    pub ru: f64,
    pub tu: f64,
}

impl BeliefRegressors {
    pub fn of(belief: &ArmBelief) -> Self {
        Self {
            v: belief.means[0] - belief.means[1],
            ru: belief.sd(0) - belief.sd(1),
            tu: (belief.variances[0] + belief.variances[1]).sqrt(),
        }
    }

    pub fn v_over_tu(&self) -> Result<f64, BaselineError> {
        if self.tu > 0.0 {
            Ok(self.v / self.tu)
        } else {
            Err(BaselineError::ZeroTotalUncertainty)
        }
    }
}

/// Weights of the Boltzmann, UCB and Thompson components of the probit choice rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyWeights {
    pub boltzmann: f64,
    pub ucb: f64,
    pub thompson: f64,
}

impl StrategyWeights {
    pub const fn new(boltzmann: f64, ucb: f64, thompson: f64) -> Self {
        Self { boltzmann, ucb, thompson }
    }

    pub const THOMPSON: Self = Self::new(0.0, 0.0, 1.0);
}

/// Probability of choosing arm 0: `Phi(wB*V + wU*RU + wT*V/TU)`.
pub fn hybrid_choice_prob(belief: &ArmBelief, w: &StrategyWeights) -> Result<f64, BaselineError> {
    let r = BeliefRegressors::of(belief);
    let v_tu = r.v_over_tu()?;
    Ok(normal_cdf(w.boltzmann * r.v + w.ucb * r.ru + w.thompson * v_tu))
}

/// Policies the runner co-simulates next to the subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BanditPolicy {
    Greedy,
    Ucb { c: f64 },
    Thompson,
    Random,
}

impl BanditPolicy {
    pub fn choose<R: Rng + ?Sized>(&self, belief: &ArmBelief, rng: &mut R) -> usize {
        match self {
            BanditPolicy::Greedy => policy_greedy(belief, rng),
            BanditPolicy::Ucb { c } => policy_ucb(belief, *c),
            BanditPolicy::Thompson => policy_thompson(belief, rng),
            BanditPolicy::Random => policy_random(rng),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BanditPolicy::Greedy => "greedy",
            BanditPolicy::Ucb { .. } => "ucb",
            BanditPolicy::Thompson => "thompson",
            BanditPolicy::Random => "random",
        }
    }
}

/// Play one task with a policy; returns the chosen arms and the raw rewards.
pub fn simulate_policy<R: Rng + ?Sized>(
    task: &BanditTask,
    policy: BanditPolicy,
    kalman: &KalmanParams,
    trials: usize,
    rng: &mut R,
) -> Vec<(usize, f64)> {
    let mut belief = ArmBelief::prior(kalman);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let arm = policy.choose(&belief, rng);
        let reward = bandit_reward(task, arm, rng).expect("policy returns a valid arm");
        belief = kalman_update(&belief, arm, reward, kalman.obs_variance).expect("valid arm and variance");
        out.push((arm, reward));
    }
    out
}
