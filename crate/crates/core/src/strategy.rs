//! Point selection and feedback-query policies.
//!
//! An agent picks the UCB maximizer every round and then decides whether to
//! pay for the observation. The confidence rule skips the query when the
//! chosen point beats every rival mode with probability at least `kappa`
//! under independent Gaussian predictive draws.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::kernel::{CompositeKernel, SpatialFamily};
use crate::tvgp::{OnlineTvGp, PosteriorSummary};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exploration schedule for the UCB width `sqrt(beta_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BetaSchedule {
    Constant { beta0: f64 },
    /// `beta_t = c1 * ln(c2 * t)`
    LogGrowth { c1: f64, c2: f64 },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::Constant { beta0: 1.0 }
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaSchedule::Constant { beta0 } if beta0 > 0.0 && beta0.is_finite() => Ok(()),
            BetaSchedule::LogGrowth { c1, c2 } if c1 > 0.0 && c2 > 1.0 && c1.is_finite() && c2.is_finite() => {
                Ok(())
            }
            other => Err(Error::InvalidSpec(format!(
                "beta schedule must be positive for every round: {other:?}"
            ))),
        }
    }

    pub fn beta(&self, t: u64) -> f64 {
        match *self {
            BetaSchedule::Constant { beta0 } => beta0,
            BetaSchedule::LogGrowth { c1, c2 } => c1 * (c2 * t.max(1) as f64).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Acquisition {
    #[default]
    Ucb,
    /// Probability of improvement over the best posterior mean.
    Pi {
        #[serde(default)]
        xi: f64,
    },
    /// Expected improvement over the best posterior mean.
    Ei {
        #[serde(default)]
        xi: f64,
    },
}

pub fn ucb_values(post: &PosteriorSummary, beta: f64) -> Vec<f64> {
    let w = beta.sqrt();
    post.means
        .iter()
        .zip(&post.stddevs)
        .map(|(m, s)| m + w * s)
        .collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// UCB maximizer together with the UCB curve.
pub fn select_point(post: &PosteriorSummary, beta: f64) -> (usize, Vec<f64>) {
    let ucb = ucb_values(post, beta);
    (argmax(&ucb), ucb)
}

pub fn acquisition(post: &PosteriorSummary, kind: Acquisition, beta: f64) -> Vec<f64> {
    match kind {
        Acquisition::Ucb => ucb_values(post, beta),
        Acquisition::Pi { xi } => {
            let inc = incumbent(post);
            post.means
                .iter()
                .zip(&post.stddevs)
                .map(|(&m, &s)| {
                    let gain = m - inc - xi;
                    if s > 0.0 {
                        normal_cdf(gain / s)
                    } else if gain > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        Acquisition::Ei { xi } => {
            let inc = incumbent(post);
            post.means
                .iter()
                .zip(&post.stddevs)
                .map(|(&m, &s)| {
                    let gain = m - inc - xi;
                    if s > 0.0 {
                        let z = gain / s;
                        gain * normal_cdf(z) + s * normal_pdf(z)
                    } else {
                        gain.max(0.0)
                    }
                })
                .collect()
        }
    }
}

fn incumbent(post: &PosteriorSummary) -> f64 {
    post.means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `P(y_a > y_b)` for independent `y_a ~ N(mean_a, var_a)`, `y_b ~ N(mean_b, var_b)`.
pub fn superiority_probability(mean_a: f64, var_a: f64, mean_b: f64, var_b: f64) -> f64 {
    let total = var_a.max(0.0) + var_b.max(0.0);
    let gap = mean_a - mean_b;
    if total > 0.0 {
        normal_cdf(gap / total.sqrt())
    } else if gap > 0.0 {
        1.0
    } else if gap < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Local maxima of `scores` over the domain's neighbourhood graph (plateaus
/// included), greedily thinned so that no two kept candidates lie within
/// `bandwidth` of each other. Higher scores are kept first; the global argmax
/// is always the first entry.
pub fn local_optima_candidates(scores: &[f64], domain: &Domain, bandwidth: f64) -> Vec<usize> {
    // every member of a flat component counts when no neighbour of the
    // component is strictly higher; suppression then thins the plateau
    let mut seen = vec![false; scores.len()];
    let mut peaks: Vec<usize> = Vec::new();
    for start in 0..scores.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let level = scores[start];
        let mut stack = vec![start];
        let mut members = Vec::new();
        let mut is_peak = true;
        while let Some(i) = stack.pop() {
            members.push(i);
            for &j in domain.neighbors(i) {
                if scores[j] == level {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                } else if scores[j] > level {
                    is_peak = false;
                }
            }
        }
        if is_peak {
            peaks.extend(members);
        }
    }
    peaks.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        if kept.iter().all(|&k| domain.distance(k, p) > bandwidth) {
            kept.push(p);
        }
    }
    kept
}

/// [`local_optima_candidates`] followed by the best remaining candidate of
/// every region farther than `bandwidth` from all kept points. Regions where
/// the score is monotone or numerically flat contain no local optimum but may
/// still hold a plausible maximizer; the fill keeps them in the comparison.
pub fn covering_candidates(scores: &[f64], domain: &Domain, bandwidth: f64) -> Vec<usize> {
    let mut kept = local_optima_candidates(scores, domain, bandwidth);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    for p in order {
        if kept.iter().all(|&k| domain.distance(k, p) > bandwidth) {
            kept.push(p);
        }
    }
    kept
}

/// Competitors of `chosen`: every other arm for independent kernels,
/// otherwise the suppressed local optima of the score curve, optionally
/// extended to cover the whole domain.
pub fn rival_candidates(
    scores: &[f64],
    domain: &Domain,
    chosen: usize,
    bandwidth: f64,
    independent: bool,
    fill_uncovered: bool,
) -> Vec<usize> {
    let pool = if independent {
        (0..scores.len()).collect()
    } else if fill_uncovered {
        covering_candidates(scores, domain, bandwidth)
    } else {
        local_optima_candidates(scores, domain, bandwidth)
    };
    pool.into_iter().filter(|&i| i != chosen).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QueryRule {
    Always,
    /// Query with probability `budget / horizon` each round.
    Bernoulli { budget: f64, horizon: u64 },
    ConfidenceRule { kappa: f64 },
    LcbUcbRule,
}

impl QueryRule {
    pub fn bernoulli_rate(rate: f64, horizon: u64) -> Self {
        QueryRule::Bernoulli {
            budget: rate * horizon as f64,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            QueryRule::Bernoulli { budget, horizon } => {
                if horizon == 0 || !(budget >= 0.0 && budget <= horizon as f64) {
                    return Err(Error::InvalidSpec(format!(
                        "Bernoulli budget {budget} must lie in [0, {horizon}]"
                    )));
                }
            }
            QueryRule::ConfidenceRule { kappa } => {
                if !(kappa > 0.0 && kappa < 1.0) {
                    return Err(Error::InvalidSpec(format!("kappa must lie in (0, 1), got {kappa}")));
                }
            }
            QueryRule::Always | QueryRule::LcbUcbRule => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryPolicySpec {
    #[serde(flatten)]
    pub rule: QueryRule,
    #[serde(default = "default_bandwidth")]
    pub suppression_bandwidth: f64,
    /// Extend the rival set beyond local optima to every uncovered region.
    #[serde(default = "default_fill")]
    pub fill_uncovered: bool,
}

fn default_fill() -> bool {
    true
}

pub fn default_bandwidth() -> f64 {
    0.2
}

impl QueryPolicySpec {
    pub fn new(rule: QueryRule) -> Self {
        Self {
            rule,
            suppression_bandwidth: default_bandwidth(),
            fill_uncovered: default_fill(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        if !(self.suppression_bandwidth > 0.0 && self.suppression_bandwidth.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "suppression bandwidth must be positive, got {}",
                self.suppression_bandwidth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryDecision {
    pub round: u64,
    pub chosen: usize,
    pub queried: bool,
    /// Smallest `P(y(chosen) > y(rival))` over rivals; 1 when there are none.
    pub min_superiority: f64,
    pub rivals_considered: usize,
}

/// Decides whether the feedback for `chosen` is worth paying for.
pub fn should_query<R: Rng + ?Sized>(
    rule: &QueryRule,
    post: &PosteriorSummary,
    chosen: usize,
    rivals: &[usize],
    beta: f64,
    rng: &mut R,
) -> QueryDecision {
    let rivals: Vec<usize> = rivals.iter().copied().filter(|&r| r != chosen).collect();
    let mc = post.means[chosen];
    let vc = post.variance(chosen);
    let min_superiority = rivals
        .iter()
        .map(|&r| superiority_probability(mc, vc, post.means[r], post.variance(r)))
        .fold(1.0, f64::min);
    let queried = match *rule {
        QueryRule::Always => true,
        QueryRule::Bernoulli { budget, horizon } => {
            let p = (budget / horizon as f64).clamp(0.0, 1.0);
            rng.random::<f64>() < p
        }
        QueryRule::ConfidenceRule { kappa } => !rivals.is_empty() && min_superiority < kappa,
        QueryRule::LcbUcbRule => {
            let w = beta.sqrt();
            let lcb = mc - w * post.stddevs[chosen];
            !rivals
                .iter()
                .all(|&r| post.means[r] + w * post.stddevs[r] <= lcb)
        }
    };
    QueryDecision {
        round: post.round + 1,
        chosen,
        queried,
        min_superiority,
        rivals_considered: rivals.len(),
    }
}

/// Full configuration of a GP-based agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpAgentConfig {
    pub kernel: CompositeKernel,
    pub noise_variance: f64,
    #[serde(default)]
    pub beta: BetaSchedule,
    #[serde(default)]
    pub acquisition: Acquisition,
    pub policy: QueryPolicySpec,
    /// Clear all observations every this many rounds (R-GP-UCB).
    #[serde(default)]
    pub reset_period: Option<u64>,
    #[serde(default)]
    pub max_history: Option<usize>,
}

impl GpAgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.beta.validate()?;
        self.policy.validate()?;
        if self.reset_period == Some(0) {
            return Err(Error::InvalidSpec("reset period must be positive".into()));
        }
        if !(self.noise_variance > 0.0) {
            return Err(Error::InvalidSpec("noise variance must be positive".into()));
        }
        Ok(())
    }
}

/// CE-GP-UCB and its variants (full feedback, Bernoulli, LCB-UCB, resetting).
///
/// Each round is split into [`CeGpUcb::decide`], which advances the round
/// counter and returns the decision, and [`CeGpUcb::feedback`], which must
/// follow a queried decision. Skipped rounds leave the observations untouched.
#[derive(Debug, Clone)]
pub struct CeGpUcb {
    config: GpAgentConfig,
    model: OnlineTvGp,
    rng: ChaCha8Rng,
    round: u64,
    pending: Option<usize>,
}

impl CeGpUcb {
    pub fn new(config: GpAgentConfig, domain: Arc<Domain>, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = OnlineTvGp::new(config.kernel, config.noise_variance, domain, config.max_history)?;
        Ok(Self {
            config,
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            round: 0,
            pending: None,
        })
    }

    pub fn config(&self) -> &GpAgentConfig {
        &self.config
    }

    pub fn model(&self) -> &OnlineTvGp {
        &self.model
    }

    /// The last completed round (0 before the first decision).
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn pending(&self) -> Option<usize> {
        self.pending
    }

    /// Posterior for acting at the next round.
    pub fn posterior(&self) -> Result<PosteriorSummary> {
        self.model.predict(self.round)
    }

    pub fn decide(&mut self) -> Result<QueryDecision> {
        self.pending = None;
        let t = self.round + 1;
        if let Some(period) = self.config.reset_period {
            if t > 1 && (t - 1).is_multiple_of(period) {
                self.model.clear();
            }
        }
        let post = self.model.predict(t - 1)?;
        let beta = self.config.beta.beta(t);
        let scores = acquisition(&post, self.config.acquisition, beta);
        let chosen = argmax(&scores);
        let independent = self.config.kernel.spatial.family == SpatialFamily::Independent;
        let rivals = rival_candidates(
            &scores,
            self.model.domain(),
            chosen,
            self.config.policy.suppression_bandwidth,
            independent,
            self.config.policy.fill_uncovered,
        );
        let decision = should_query(&self.config.policy.rule, &post, chosen, &rivals, beta, &mut self.rng);
        self.round = t;
        if decision.queried {
            self.pending = Some(chosen);
        }
        Ok(decision)
    }

    /// Records the reward for the pending query of the current round.
    pub fn feedback(&mut self, reward: f64) -> Result<()> {
        let Some(index) = self.pending else {
            return Err(Error::InvalidInput(format!(
                "no feedback was requested for round {}",
                self.round
            )));
        };
        if !reward.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite reward {reward}")));
        }
        self.model.observe(index, reward, self.round)?;
        self.pending = None;
        Ok(())
    }

    /// One complete round: decide, and on a query obtain `y_t` from
    /// `respond(candidate, round)` and fold it into the posterior.
    pub fn step<F>(&mut self, respond: F) -> Result<QueryDecision>
    where
        F: FnOnce(usize, u64) -> f64,
    {
        let d = self.decide()?;
        if d.queried {
            self.feedback(respond(d.chosen, d.round))?;
        }
        Ok(d)
    }
}
