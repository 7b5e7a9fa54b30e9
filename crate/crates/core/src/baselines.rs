//! Bandit baselines with a Bernoulli feedback schedule.
//!
//! The classic algorithms (EXP3.S, epsilon-greedy, softmax, UCB1) only learn on
//! rounds where the Bernoulli coin requests feedback. The GP variants reuse
//! [`CeGpUcb`] with an independent-arm kernel.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::environment::TrialRng;
use crate::error::{Error, Result};
use crate::kernel::{CompositeKernel, SpatialKernel, TemporalKernel};
use crate::strategy::{
    argmax, Acquisition, BetaSchedule, CeGpUcb, GpAgentConfig, QueryDecision, QueryPolicySpec, QueryRule,
};

/// Anything that can play the costly-feedback game round by round.
pub trait Agent: Send {
    /// Picks this round's candidate and whether to pay for its feedback.
    fn decide(&mut self) -> Result<QueryDecision>;

    /// Delivers the reward for the latest queried decision.
    fn feedback(&mut self, reward: f64) -> Result<()>;
}

impl Agent for CeGpUcb {
    fn decide(&mut self) -> Result<QueryDecision> {
        CeGpUcb::decide(self)
    }

    fn feedback(&mut self, reward: f64) -> Result<()> {
        CeGpUcb::feedback(self, reward)
    }
}

/// A bandit algorithm that learns only from the rounds it receives feedback on.
pub trait BanditAlgorithm: Send {
    fn num_arms(&self) -> usize;

    fn select(&mut self, rng: &mut TrialRng) -> usize;

    /// `None` marks a skipped round; only counters may change.
    fn update(&mut self, arm: usize, reward: Option<f64>) -> Result<()>;
}

fn check_update(arm: usize, k: usize, reward: Option<f64>) -> Result<()> {
    if arm >= k {
        return Err(Error::InvalidInput(format!("arm {arm} out of range for {k} arms")));
    }
    if let Some(r) = reward {
        if !r.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite reward {r}")));
        }
    }
    Ok(())
}

/// Running sample means shared by the value-based baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmStats {
    pub counts: Vec<u64>,
    pub means: Vec<f64>,
    pub rounds: u64,
}

impl ArmStats {
    fn new(k: usize) -> Self {
        Self {
            counts: vec![0; k],
            means: vec![0.0; k],
            rounds: 0,
        }
    }

    fn record(&mut self, arm: usize, reward: Option<f64>) {
        self.rounds += 1;
        if let Some(r) = reward {
            self.counts[arm] += 1;
            self.means[arm] += (r - self.means[arm]) / self.counts[arm] as f64;
        }
    }

    fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// EXP3 with fixed-share weight mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp3S {
    weights: Vec<f64>,
    gamma: f64,
    alpha: f64,
    reward_bounds: (f64, f64),
    pub rounds: u64,
}

impl Exp3S {
    pub fn new(k: usize, gamma: f64, alpha: f64, reward_bounds: (f64, f64)) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidSpec("EXP3.S needs at least 2 arms".into()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) || !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "EXP3.S needs gamma in (0, 1] and alpha >= 0, got {gamma}, {alpha}"
            )));
        }
        if !(reward_bounds.1 > reward_bounds.0) {
            return Err(Error::InvalidSpec("reward bounds must be increasing".into()));
        }
        Ok(Self {
            weights: vec![1.0 / k as f64; k],
            gamma,
            alpha,
            reward_bounds,
            rounds: 0,
        })
    }

    /// Horizon-tuned parameters for `updates` expected feedback rounds and
    /// `switches` changes of the best arm: `alpha = 1/T`,
    /// `gamma = min(1, sqrt(K (S ln(K T) + e) / ((e - 1) T)))`.
    pub fn tuned(k: usize, updates: u64, switches: f64, reward_bounds: (f64, f64)) -> Result<Self> {
        let t = updates.max(1) as f64;
        let kf = k as f64;
        let e = std::f64::consts::E;
        let gamma = (kf * (switches * (kf * t).ln() + e) / ((e - 1.0) * t)).sqrt().min(1.0);
        Self::new(k, gamma, 1.0 / t, reward_bounds)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Normalized weights (sum to one).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.weights.len() as f64;
        let total: f64 = self.weights.iter().sum();
        self.weights
            .iter()
            .map(|w| (1.0 - self.gamma) * w / total + self.gamma / k)
            .collect()
    }
}

impl BanditAlgorithm for Exp3S {
    fn num_arms(&self) -> usize {
        self.weights.len()
    }

    fn select(&mut self, rng: &mut TrialRng) -> usize {
        sample_index(&self.probabilities(), rng)
    }

    fn update(&mut self, arm: usize, reward: Option<f64>) -> Result<()> {
        check_update(arm, self.weights.len(), reward)?;
        self.rounds += 1;
        let Some(r) = reward else {
            return Ok(());
        };
        let (lo, hi) = self.reward_bounds;
        let scaled = ((r - lo) / (hi - lo)).clamp(0.0, 1.0);
        let p = self.probabilities()[arm];
        let k = self.weights.len() as f64;
        let total: f64 = self.weights.iter().sum();
        let share = std::f64::consts::E * self.alpha / k * total;
        let estimate = scaled / p;
        for (i, w) in self.weights.iter_mut().enumerate() {
            let gain = if i == arm { estimate } else { 0.0 };
            *w = *w * (self.gamma * gain / k).exp() + share;
        }
        let total: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= total);
        Ok(())
    }
}

fn sample_index(probs: &[f64], rng: &mut TrialRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGreedy {
    pub stats: ArmStats,
    epsilon: f64,
}

impl EpsilonGreedy {
    pub fn new(k: usize, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) || k == 0 {
            return Err(Error::InvalidSpec(format!("epsilon-greedy needs epsilon in [0, 1], got {epsilon}")));
        }
        Ok(Self {
            stats: ArmStats::new(k),
            epsilon,
        })
    }
}

impl BanditAlgorithm for EpsilonGreedy {
    fn num_arms(&self) -> usize {
        self.stats.means.len()
    }

    fn select(&mut self, rng: &mut TrialRng) -> usize {
        if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon {
            rng.random_range(0..self.num_arms())
        } else {
            argmax(&self.stats.means)
        }
    }

    fn update(&mut self, arm: usize, reward: Option<f64>) -> Result<()> {
        check_update(arm, self.num_arms(), reward)?;
        self.stats.record(arm, reward);
        Ok(())
    }
}

/// Boltzmann exploration over sample means.
#[derive(Debug, Clone, PartialEq)]
pub struct Softmax {
    pub stats: ArmStats,
    temperature: f64,
}

impl Softmax {
    pub fn new(k: usize, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) || k == 0 {
            return Err(Error::InvalidSpec(format!("softmax temperature must be positive, got {temperature}")));
        }
        Ok(Self {
            stats: ArmStats::new(k),
            temperature,
        })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let top = self.stats.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self
            .stats
            .means
            .iter()
            .map(|m| ((m - top) / self.temperature).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

impl BanditAlgorithm for Softmax {
    fn num_arms(&self) -> usize {
        self.stats.means.len()
    }

    fn select(&mut self, rng: &mut TrialRng) -> usize {
        sample_index(&self.probabilities(), rng)
    }

    fn update(&mut self, arm: usize, reward: Option<f64>) -> Result<()> {
        check_update(arm, self.num_arms(), reward)?;
        self.stats.record(arm, reward);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ucb1 {
    pub stats: ArmStats,
}

impl Ucb1 {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSpec("UCB1 needs at least one arm".into()));
        }
        Ok(Self { stats: ArmStats::new(k) })
    }

    pub fn index(&self, arm: usize) -> f64 {
        let n = self.stats.counts[arm];
        if n == 0 {
            return f64::INFINITY;
        }
        let total = self.stats.total() as f64;
        self.stats.means[arm] + (2.0 * total.ln() / n as f64).sqrt()
    }
}

impl BanditAlgorithm for Ucb1 {
    fn num_arms(&self) -> usize {
        self.stats.means.len()
    }

    fn select(&mut self, _rng: &mut TrialRng) -> usize {
        let idx: Vec<f64> = (0..self.num_arms()).map(|a| self.index(a)).collect();
        argmax(&idx)
    }

    fn update(&mut self, arm: usize, reward: Option<f64>) -> Result<()> {
        check_update(arm, self.num_arms(), reward)?;
        self.stats.record(arm, reward);
        Ok(())
    }
}

/// A [`BanditAlgorithm`] that asks for feedback with a fixed probability.
pub struct BernoulliFeedback<A> {
    pub algorithm: A,
    rate: f64,
    rng: TrialRng,
    round: u64,
    pending: Option<usize>,
}

impl<A: BanditAlgorithm> BernoulliFeedback<A> {
    pub fn new(algorithm: A, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidSpec(format!("query rate must lie in [0, 1], got {rate}")));
        }
        Ok(Self {
            algorithm,
            rate,
            rng: TrialRng::seed_from_u64(seed),
            round: 0,
            pending: None,
        })
    }
}

impl<A: BanditAlgorithm> Agent for BernoulliFeedback<A> {
    fn decide(&mut self) -> Result<QueryDecision> {
        if let Some(arm) = self.pending.take() {
            self.algorithm.update(arm, None)?;
        }
        self.round += 1;
        let arm = self.algorithm.select(&mut self.rng);
        let queried = self.rng.random::<f64>() < self.rate;
        if queried {
            self.pending = Some(arm);
        } else {
            self.algorithm.update(arm, None)?;
        }
        Ok(QueryDecision {
            round: self.round,
            chosen: arm,
            queried,
            min_superiority: 1.0,
            rivals_considered: 0,
        })
    }

    fn feedback(&mut self, reward: f64) -> Result<()> {
        let Some(arm) = self.pending else {
            return Err(Error::InvalidInput(format!("no feedback was requested for round {}", self.round)));
        };
        self.algorithm.update(arm, Some(reward))?;
        self.pending = None;
        Ok(())
    }
}

/// Settings shared by the GP-based bandit agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditGpSettings {
    pub amplitude: f64,
    pub noise_variance: f64,
    #[serde(default)]
    pub beta: BetaSchedule,
    /// Constant prior mean; rewards are shifted by it before reaching the GP.
    #[serde(default)]
    pub prior_mean: f64,
}

// Chosen by a sweep on a tuning seed. The small model noise makes a single
// observation decisive, which keeps the confidence rule from re-querying an
// arm whose value it already knows to within the arm gaps.
impl Default for BanditGpSettings {
    fn default() -> Self {
        Self {
            amplitude: 0.07,
            noise_variance: 0.001,
            beta: BetaSchedule::Constant { beta0: 8.0 },
            prior_mean: 0.0,
        }
    }
}

/// GP agent with a constant prior mean `offset`.
struct Centered {
    inner: CeGpUcb,
    offset: f64,
}

impl Agent for Centered {
    fn decide(&mut self) -> Result<QueryDecision> {
        self.inner.decide()
    }

    fn feedback(&mut self, reward: f64) -> Result<()> {
        self.inner.feedback(reward - self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BanditAgentSpec {
    Exp3S {
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default = "one")]
        switches: f64,
    },
    EpsilonGreedy {
        epsilon: f64,
    },
    Softmax {
        temperature: f64,
    },
    Ucb1,
    StationaryGpUcb,
    ResettingGpUcb {
        /// Defaults to a fifth of the horizon.
        #[serde(default)]
        period: Option<u64>,
    },
    CeGpUcb {
        kappa: f64,
        epsilon: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl BanditAgentSpec {
    pub fn label(&self) -> &'static str {
        match self {
            BanditAgentSpec::Exp3S { .. } => "EXP3.S",
            BanditAgentSpec::EpsilonGreedy { .. } => "eps-greedy",
            BanditAgentSpec::Softmax { .. } => "Softmax",
            BanditAgentSpec::Ucb1 => "UCB",
            BanditAgentSpec::StationaryGpUcb => "GP-UCB",
            BanditAgentSpec::ResettingGpUcb { .. } => "R-GP-UCB",
            BanditAgentSpec::CeGpUcb { .. } => "CE-GP-UCB",
        }
    }

    /// Value reported in the `param` column.
    pub fn param(&self) -> Option<f64> {
        match *self {
            BanditAgentSpec::EpsilonGreedy { epsilon } => Some(epsilon),
            BanditAgentSpec::Softmax { temperature } => Some(temperature),
            BanditAgentSpec::CeGpUcb { kappa, .. } => Some(kappa),
            _ => None,
        }
    }

    /// Builds a playable agent for `k` arms.
    pub fn build(
        &self,
        k: usize,
        horizon: u64,
        query_rate: f64,
        reward_bounds: (f64, f64),
        gp: &BanditGpSettings,
        seed: u64,
    ) -> Result<Box<dyn Agent>> {
        let gp_agent = |epsilon: f64, rule: QueryRule, reset_period: Option<u64>| -> Result<Box<dyn Agent>> {
            let config = GpAgentConfig {
                kernel: CompositeKernel::new(SpatialKernel::independent(gp.amplitude)?, TemporalKernel::new(epsilon)?)?,
                noise_variance: gp.noise_variance,
                beta: gp.beta,
                acquisition: Acquisition::Ucb,
                policy: QueryPolicySpec::new(rule),
                reset_period,
                max_history: None,
            };
            let inner = CeGpUcb::new(config, Arc::new(Domain::arms(k)?), seed)?;
            Ok(Box::new(Centered { inner, offset: gp.prior_mean }))
        };
        let bernoulli = QueryRule::bernoulli_rate(query_rate, horizon);
        Ok(match *self {
            BanditAgentSpec::Exp3S { gamma, alpha, switches } => {
                let updates = (query_rate * horizon as f64).round().max(1.0) as u64;
                let tuned = Exp3S::tuned(k, updates, switches, reward_bounds)?;
                let algo = Exp3S::new(
                    k,
                    gamma.unwrap_or(tuned.gamma()),
                    alpha.unwrap_or(tuned.alpha()),
                    reward_bounds,
                )?;
                Box::new(BernoulliFeedback::new(algo, query_rate, seed)?)
            }
            BanditAgentSpec::EpsilonGreedy { epsilon } => {
                Box::new(BernoulliFeedback::new(EpsilonGreedy::new(k, epsilon)?, query_rate, seed)?)
            }
            BanditAgentSpec::Softmax { temperature } => {
                Box::new(BernoulliFeedback::new(Softmax::new(k, temperature)?, query_rate, seed)?)
            }
            BanditAgentSpec::Ucb1 => Box::new(BernoulliFeedback::new(Ucb1::new(k)?, query_rate, seed)?),
            BanditAgentSpec::StationaryGpUcb => gp_agent(0.0, bernoulli, None)?,
            BanditAgentSpec::ResettingGpUcb { period } => {
                let period = period.unwrap_or((horizon / 5).max(1));
                gp_agent(0.0, bernoulli, Some(period))?
            }
            BanditAgentSpec::CeGpUcb { kappa, epsilon } => {
                gp_agent(epsilon, QueryRule::ConfidenceRule { kappa }, None)?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{ArmCurve, BanditEnvironment, BanditEnvironmentSpec, Environment};
    use proptest::prelude::*;

    fn rng(seed: u64) -> TrialRng {
        TrialRng::seed_from_u64(seed)
    }

    #[test]
    fn exp3s_starts_uniform() {
        let e = Exp3S::tuned(3, 200, 1.0, (0.0, 1.0)).unwrap();
        for p in e.probabilities() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn exp3s_zero_reward_only_mixes() {
        let mut e = Exp3S::new(3, 0.1, 0.05, (0.0, 1.0)).unwrap();
        e.update(0, Some(1.0)).unwrap();
        let before = e.weights().to_vec();
        let total: f64 = before.iter().sum();
        e.update(1, Some(0.0)).unwrap();
        let share = std::f64::consts::E * 0.05 / 3.0 * total;
        let raw: Vec<f64> = before.iter().map(|w| w + share).collect();
        let raw_total: f64 = raw.iter().sum();
        for (w, r) in e.weights().iter().zip(&raw) {
            assert!((w - r / raw_total).abs() < 1e-15);
        }
    }

    #[test]
    fn exp3s_hand_evaluated_gain() {
        // gamma 0.3, alpha 0: p = 0.7/3 + 0.1 = 1/3 for each arm initially
        let mut e = Exp3S::new(3, 0.3, 0.0, (0.0, 2.0)).unwrap();
        e.update(2, Some(1.0)).unwrap();
        // scaled reward 0.5, estimate 1.5, factor exp(0.3 * 1.5 / 3)
        let f = (0.15f64).exp();
        let expect = [1.0 / (2.0 + f), 1.0 / (2.0 + f), f / (2.0 + f)];
        for (w, x) in e.weights().iter().zip(expect) {
            assert!((w - x).abs() < 1e-15);
        }
    }

    #[test]
    fn skipped_rounds_leave_state_alone() {
        let mut e = Exp3S::tuned(3, 100, 1.0, (0.0, 1.0)).unwrap();
        e.update(1, Some(0.7)).unwrap();
        let w = e.weights().to_vec();
        e.update(2, None).unwrap();
        assert_eq!(e.weights(), w.as_slice());

        let mut g = EpsilonGreedy::new(3, 0.1).unwrap();
        g.update(0, Some(1.0)).unwrap();
        let before = g.stats.clone();
        g.update(1, None).unwrap();
        assert_eq!(g.stats.means, before.means);
        assert_eq!(g.stats.counts, before.counts);
        assert_eq!(g.stats.rounds, before.rounds + 1);
    }

    #[test]
    fn greedy_mean_and_exploitation() {
        let mut g = EpsilonGreedy::new(3, 0.0).unwrap();
        g.update(0, Some(1.0)).unwrap();
        g.update(0, Some(0.0)).unwrap();
        assert_eq!(g.stats.means[0], 0.5);
        g.stats.means = vec![0.1, 0.9, 0.2];
        assert_eq!(g.select(&mut rng(0)), 1);
        assert!(g.update(0, Some(f64::NAN)).is_err());
        assert!(g.update(5, Some(1.0)).is_err());
    }

    #[test]
    fn ucb1_tries_unplayed_arms_first() {
        let mut u = Ucb1::new(3).unwrap();
        u.update(0, Some(0.9)).unwrap();
        u.update(2, Some(0.9)).unwrap();
        assert_eq!(u.select(&mut rng(0)), 1);
    }

    #[test]
    fn ucb1_finds_best_arm_with_full_feedback() {
        let spec = BanditEnvironmentSpec {
            arms: [0.2, 0.7, 0.1]
                .into_iter()
                .map(|l| ArmCurve::Piecewise { breakpoints: vec![], levels: vec![l] })
                .collect(),
            noise_variance: 0.01,
            horizon: 1000,
        };
        let env = BanditEnvironment::new(spec).unwrap();
        let mut good = 0usize;
        let mut total = 0usize;
        for trial in 0..100 {
            let mut agent = BernoulliFeedback::new(Ucb1::new(3).unwrap(), 1.0, trial).unwrap();
            let mut noise = rng(1000 + trial);
            for t in 1..=1000 {
                let d = agent.decide().unwrap();
                assert!(d.queried);
                agent.feedback(env.evaluate(d.chosen, t, &mut noise).unwrap()).unwrap();
                if t > 900 {
                    total += 1;
                    good += (d.chosen == 1) as usize;
                }
            }
        }
        assert!(good as f64 >= 0.9 * total as f64, "{good}/{total}");
    }

    #[test]
    fn resetting_with_long_period_equals_stationary() {
        let gp = BanditGpSettings::default();
        let env = BanditEnvironment::new(BanditEnvironmentSpec::scenario(
            crate::environment::BanditScenario::Sine,
            0.01,
            300,
        ))
        .unwrap();
        let run = |spec: BanditAgentSpec| {
            let mut agent = spec.build(3, 300, 0.3, (0.0, 1.0), &gp, 42).unwrap();
            let mut noise = rng(4);
            (1..=300u64)
                .map(|t| {
                    let d = agent.decide().unwrap();
                    if d.queried {
                        agent.feedback(env.evaluate(d.chosen, t, &mut noise).unwrap()).unwrap();
                    }
                    d
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(
            run(BanditAgentSpec::ResettingGpUcb { period: Some(301) }),
            run(BanditAgentSpec::StationaryGpUcb)
        );
    }

    proptest! {
        #[test]
        fn probability_vectors_normalized(
            rewards in prop::collection::vec((0usize..4, prop::option::of(-0.5f64..1.5)), 0..200),
            temperature in 0.01f64..2.0,
        ) {
            let mut e = Exp3S::tuned(4, 50, 2.0, (0.0, 1.0)).unwrap();
            let mut s = Softmax::new(4, temperature).unwrap();
            for (arm, r) in rewards {
                e.update(arm, r).unwrap();
                s.update(arm, r).unwrap();
                for probs in [e.probabilities(), s.probabilities()] {
                    prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    prop_assert!(probs.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }
}
