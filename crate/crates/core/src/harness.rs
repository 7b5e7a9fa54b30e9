//! Seeded multi-trial experiments, metric aggregation and CSV/JSON output.
//!
//! Every trial owns its environment, agent and noise stream, so trials run in
//! parallel and the emitted files do not depend on completion order. Within a
//! trial all policies face the same hidden trajectory and the same noise seed.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::baselines::{Agent, BanditAgentSpec, BanditGpSettings};
use crate::domain::Domain;
use crate::environment::{
    ArmCurve, BanditEnvironment, BanditEnvironmentSpec, BanditScenario, Environment, GridSampler, TrialRng,
    TvGpEnvironment, TvGpEnvironmentSpec,
};
use crate::error::{Error, Result};
use crate::kernel::{CompositeKernel, SpatialKernel, TemporalKernel};
use crate::strategy::{default_bandwidth, Acquisition, BetaSchedule, CeGpUcb, GpAgentConfig, QueryPolicySpec, QueryRule};
use crate::tvgp::PosteriorSummary;

pub const ENV_STREAM: u64 = 1;
pub const AGENT_STREAM: u64 = 2;
pub const NOISE_STREAM: u64 = 3;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `index` on `stream`, derived from `base` by splitmix64 hops.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}

/// Seeds used by one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub environment: u64,
    pub agent: u64,
    pub noise: u64,
}

impl TrialSeeds {
    pub fn derive(base: u64, trial: usize) -> Self {
        let i = trial as u64;
        Self {
            environment: derive_seed(base, ENV_STREAM, i),
            agent: derive_seed(base, AGENT_STREAM, i),
            noise: derive_seed(base, NOISE_STREAM, i),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub t: u64,
    pub index: usize,
    /// Coordinate of the chosen candidate (arm index for bandits).
    pub x: f64,
    pub queried: bool,
    pub y: Option<f64>,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub policy: String,
    pub param: Option<f64>,
    pub epsilon: Option<f64>,
    pub trial: usize,
    pub rows: Vec<RoundRow>,
    /// `R_T`
    pub regret: f64,
    /// `C_T`
    pub cost: u64,
    /// `L_T = R_T + C_T`
    pub loss: f64,
    pub failure: Option<String>,
}

impl TrialRecord {
    fn from_rows(cell: &CellKey, trial: usize, rows: Vec<RoundRow>) -> Self {
        let regret: f64 = rows.iter().map(|r| r.regret).sum();
        let cost = rows.iter().filter(|r| r.queried).count() as u64;
        Self {
            policy: cell.policy.clone(),
            param: cell.param,
            epsilon: cell.epsilon,
            trial,
            rows,
            regret,
            cost,
            loss: regret + cost as f64,
            failure: None,
        }
    }

    fn failed(cell: &CellKey, trial: usize, err: &Error) -> Self {
        Self {
            policy: cell.policy.clone(),
            param: cell.param,
            epsilon: cell.epsilon,
            trial,
            rows: Vec::new(),
            regret: 0.0,
            cost: 0,
            loss: 0.0,
            failure: Some(err.to_string()),
        }
    }

    pub fn horizon(&self) -> u64 {
        self.rows.len() as u64
    }

    /// `R_T / T`
    pub fn avg_regret(&self) -> f64 {
        self.regret / self.rows.len().max(1) as f64
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Checks `L_T = R_T + C_T`, `C_T = #queried rows`, `C_T <= T` and `r_t >= 0`.
    pub fn check_accounting(&self) -> Result<()> {
        if self.is_failed() {
            return Ok(());
        }
        let queried = self.rows.iter().filter(|r| r.queried).count() as u64;
        let regret: f64 = self.rows.iter().map(|r| r.regret).sum();
        let ok = self.cost == queried
            && self.cost <= self.horizon()
            && self.regret == regret
            && self.loss == self.regret + self.cost as f64
            && self.rows.iter().all(|r| r.regret >= 0.0 && r.queried == r.y.is_some());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "accounting mismatch for {} trial {}",
                self.policy, self.trial
            )))
        }
    }
}

/// Identity of one aggregation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub policy: String,
    pub param: Option<f64>,
    pub epsilon: Option<f64>,
}

impl CellKey {
    fn of(r: &TrialRecord) -> Self {
        Self {
            policy: r.policy.clone(),
            param: r.param,
            epsilon: r.epsilon,
        }
    }

    fn slug(&self) -> String {
        let mut s = self.policy.replace(['/', ' '], "_");
        if let Some(p) = self.param {
            s.push_str(&format!("_p{p}"));
        }
        if let Some(e) = self.epsilon {
            s.push_str(&format!("_eps{e}"));
        }
        s
    }
}

/// Plays `agent` against `env` for the full horizon. Noise is drawn from a
/// stream seeded by `noise_seed`, consumed only on queried rounds.
pub fn run_episode(env: &dyn Environment, agent: &mut dyn Agent, noise_seed: u64) -> Result<Vec<RoundRow>> {
    let mut noise = TrialRng::seed_from_u64(noise_seed);
    let horizon = env.horizon();
    let mut rows = Vec::with_capacity(horizon as usize);
    for t in 1..=horizon {
        let d = agent.decide()?;
        if d.round != t {
            return Err(Error::InvalidInput(format!("agent reported round {} at round {t}", d.round)));
        }
        let regret = env.instantaneous_regret(d.chosen, t)?;
        let y = if d.queried {
            let y = env.evaluate(d.chosen, t, &mut noise)?;
            agent.feedback(y)?;
            Some(y)
        } else {
            None
        };
        rows.push(RoundRow {
            t,
            index: d.chosen,
            x: env.domain().point(d.chosen)[0],
            queried: d.queried,
            y,
            regret,
        });
    }
    Ok(rows)
}

fn default_trials() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
    /// Write one per-round CSV per cell.
    pub rounds: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
            rounds: true,
        }
    }
}

/// Policy families of the synthetic BO benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoPolicy {
    /// TV-GP-UCB observing every round.
    Full,
    /// Stationary GP-UCB that forgets everything every `period` rounds.
    Resetting {
        #[serde(default)]
        period: Option<u64>,
    },
    /// TV-GP-UCB with Bernoulli feedback, one cell per rate.
    Bernoulli { rates: Vec<f64> },
    /// CE-GP-UCB, one cell per threshold.
    Confidence { kappas: Vec<f64> },
    LcbUcb,
}

pub const FULL_LABEL: &str = "TV-GP-UCB";
pub const RESET_LABEL: &str = "R-GP-UCB";
pub const BERNOULLI_LABEL: &str = "TV-GP-UCB-Ber";
pub const CONFIDENCE_LABEL: &str = "CE-GP-UCB";
pub const LCB_UCB_LABEL: &str = "CE-GP-UCB-LCB";

/// Surrogate model settings shared by all BO policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoModelConfig {
    pub kernel: SpatialKernel,
    /// Defaults to the environment noise variance.
    pub noise_variance: Option<f64>,
    pub beta: BetaSchedule,
    pub acquisition: Acquisition,
    pub suppression_bandwidth: f64,
    /// Add uncovered regions to the rival set (see [`crate::strategy::covering_candidates`]).
    pub fill_uncovered: bool,
    pub max_history: Option<usize>,
}

/// Exploration weight of the benchmark. A no-query verdict of the LCB-UCB
/// rule implies a superiority of at least `Phi(sqrt(beta)) ~ 0.977`, and of
/// `Phi(sqrt(2 * beta)) ~ 0.998` when the two stddevs are equal. Smaller
/// weights let the LCB-UCB rule query less than the top kappa of the sweep.
pub const BENCHMARK_BETA: f64 = 4.0;

impl Default for BoModelConfig {
    fn default() -> Self {
        Self {
            kernel: SpatialKernel::default(),
            noise_variance: None,
            beta: BetaSchedule::Constant { beta0: BENCHMARK_BETA },
            acquisition: Acquisition::Ucb,
            suppression_bandwidth: default_bandwidth(),
            fill_uncovered: true,
            max_history: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoExperimentConfig {
    pub trials: usize,
    pub horizon: u64,
    pub base_seed: u64,
    pub grid_size: usize,
    pub noise_variance: f64,
    pub epsilons: Vec<f64>,
    pub generator: SpatialKernel,
    pub model: BoModelConfig,
    pub policies: Vec<BoPolicy>,
    pub output: OutputConfig,
}

impl Default for BoExperimentConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            horizon: 500,
            base_seed: 2023,
            grid_size: 1000,
            noise_variance: 0.01,
            epsilons: vec![0.003, 0.005, 0.01, 0.03, 0.05],
            generator: SpatialKernel::default(),
            model: BoModelConfig::default(),
            policies: vec![
                BoPolicy::Resetting { period: None },
                BoPolicy::Full,
                BoPolicy::Bernoulli {
                    rates: (1..=9).map(|i| i as f64 / 10.0).collect(),
                },
                BoPolicy::Confidence {
                    kappas: vec![0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99],
                },
                BoPolicy::LcbUcb,
            ],
            output: OutputConfig::default(),
        }
    }
}

/// One expanded policy setting of a BO experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoCell {
    pub rule: QueryRule,
    pub param: Option<f64>,
    pub reset_period: Option<u64>,
    label: &'static str,
}

impl BoCell {
    pub fn label(&self) -> &'static str {
        self.label
    }

    fn key(&self, epsilon: f64) -> CellKey {
        CellKey {
            policy: self.label.to_string(),
            param: self.param,
            epsilon: Some(epsilon),
        }
    }
}

impl BoExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.epsilons.is_empty() || self.policies.is_empty() {
            return Err(Error::Config("need at least one epsilon and one policy".into()));
        }
        for &eps in &self.epsilons {
            self.env_spec(eps, 0).validate()?;
        }
        for cell in self.cells() {
            self.agent_config(&cell, self.epsilons[0])?.validate()?;
        }
        Ok(())
    }

    /// All policy settings in output order.
    pub fn cells(&self) -> Vec<BoCell> {
        let cell = |label, rule, param, reset_period| BoCell {
            rule,
            param,
            reset_period,
            label,
        };
        let mut out = Vec::new();
        for p in &self.policies {
            match p {
                BoPolicy::Full => out.push(cell(FULL_LABEL, QueryRule::Always, None, None)),
                BoPolicy::Resetting { period } => out.push(cell(
                    RESET_LABEL,
                    QueryRule::Always,
                    None,
                    Some(period.unwrap_or((self.horizon / 5).max(1))),
                )),
                BoPolicy::Bernoulli { rates } => out.extend(rates.iter().map(|&r| {
                    cell(BERNOULLI_LABEL, QueryRule::bernoulli_rate(r, self.horizon), Some(r), None)
                })),
                BoPolicy::Confidence { kappas } => out.extend(
                    kappas
                        .iter()
                        .map(|&k| cell(CONFIDENCE_LABEL, QueryRule::ConfidenceRule { kappa: k }, Some(k), None)),
                ),
                BoPolicy::LcbUcb => out.push(cell(LCB_UCB_LABEL, QueryRule::LcbUcbRule, None, None)),
            }
        }
        out
    }

    pub fn env_spec(&self, epsilon: f64, seed: u64) -> TvGpEnvironmentSpec {
        TvGpEnvironmentSpec {
            grid_size: self.grid_size,
            generator: self.generator,
            epsilon,
            noise_variance: self.noise_variance,
            horizon: self.horizon,
            seed,
        }
    }

    /// Agent configuration of `cell` facing forgetting rate `epsilon`. The
    /// resetting baseline models a stationary objective.
    pub fn agent_config(&self, cell: &BoCell, epsilon: f64) -> Result<GpAgentConfig> {
        let model_eps = if cell.reset_period.is_some() { 0.0 } else { epsilon };
        Ok(GpAgentConfig {
            kernel: CompositeKernel::new(self.model.kernel, TemporalKernel::new(model_eps)?)?,
            noise_variance: self.model.noise_variance.unwrap_or(self.noise_variance),
            beta: self.model.beta,
            acquisition: self.model.acquisition,
            policy: QueryPolicySpec {
                rule: cell.rule,
                suppression_bandwidth: self.model.suppression_bandwidth,
                fill_uncovered: self.model.fill_uncovered,
            },
            reset_period: cell.reset_period,
            max_history: self.model.max_history,
        })
    }

    pub fn sampler(&self) -> Result<GridSampler> {
        GridSampler::new(self.generator, self.grid_size)
    }

    pub fn environment(&self, epsilon: f64, trial: usize, sampler: &GridSampler) -> Result<TvGpEnvironment> {
        let seeds = TrialSeeds::derive(self.base_seed, trial);
        TvGpEnvironment::with_sampler(self.env_spec(epsilon, seeds.environment), sampler)
    }

    pub fn agent(&self, cell: &BoCell, epsilon: f64, trial: usize, domain: Arc<Domain>) -> Result<CeGpUcb> {
        let seeds = TrialSeeds::derive(self.base_seed, trial);
        CeGpUcb::new(self.agent_config(cell, epsilon)?, domain, seeds.agent)
    }

    fn play(&self, env: &TvGpEnvironment, cell: &BoCell, epsilon: f64, trial: usize) -> TrialRecord {
        let key = cell.key(epsilon);
        let seeds = TrialSeeds::derive(self.base_seed, trial);
        let outcome = self
            .agent(cell, epsilon, trial, Arc::clone(env.domain()))
            .and_then(|mut agent| run_episode(env, &mut agent, seeds.noise));
        match outcome {
            Ok(rows) => TrialRecord::from_rows(&key, trial, rows),
            Err(e) => TrialRecord::failed(&key, trial, &e),
        }
    }

    /// Runs a single `(epsilon, cell, trial)` combination.
    pub fn run_trial(&self, epsilon: f64, cell: &BoCell, trial: usize) -> Result<TrialRecord> {
        let sampler = self.sampler()?;
        let env = self.environment(epsilon, trial, &sampler)?;
        Ok(self.play(&env, cell, epsilon, trial))
    }

    /// Runs every `(epsilon, cell, trial)` combination. Records come back
    /// ordered by epsilon, then cell, then trial.
    pub fn run(&self) -> Result<Vec<TrialRecord>> {
        self.validate()?;
        let cells = self.cells();
        let sampler = self.sampler()?;
        let jobs: Vec<(usize, usize)> = (0..self.epsilons.len())
            .flat_map(|e| (0..self.trials).map(move |t| (e, t)))
            .collect();
        let results: Vec<Vec<TrialRecord>> = jobs
            .par_iter()
            .map(|&(e, trial)| {
                let eps = self.epsilons[e];
                match self.environment(eps, trial, &sampler) {
                    Ok(env) => cells.iter().map(|c| self.play(&env, c, eps, trial)).collect(),
                    Err(err) => cells.iter().map(|c| TrialRecord::failed(&c.key(eps), trial, &err)).collect(),
                }
            })
            .collect();
        let mut out = Vec::with_capacity(jobs.len() * cells.len());
        for e in 0..self.epsilons.len() {
            for c in 0..cells.len() {
                for trial in 0..self.trials {
                    out.push(results[e * self.trials + trial][c].clone());
                }
            }
        }
        Ok(out)
    }
}

/// A named set of arm curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub arms: Vec<ArmCurve>,
}

impl From<BanditScenario> for ScenarioConfig {
    fn from(s: BanditScenario) -> Self {
        Self {
            name: s.name().to_string(),
            arms: s.arms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditExperimentConfig {
    pub trials: usize,
    pub horizon: u64,
    pub base_seed: u64,
    pub noise_variance: f64,
    /// Feedback probability of the Bernoulli-scheduled baselines.
    pub query_rate: f64,
    pub reward_bounds: [f64; 2],
    pub gp: BanditGpSettings,
    pub scenarios: Vec<ScenarioConfig>,
    pub agents: Vec<BanditAgentSpec>,
    pub output: OutputConfig,
}

impl Default for BanditExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            horizon: 2000,
            base_seed: 2023,
            noise_variance: 0.01,
            query_rate: 0.1,
            reward_bounds: [0.0, 1.0],
            gp: BanditGpSettings::default(),
            scenarios: BanditScenario::ALL.into_iter().map(Into::into).collect(),
            agents: vec![
                BanditAgentSpec::Exp3S {
                    gamma: None,
                    alpha: None,
                    switches: 1.0,
                },
                BanditAgentSpec::EpsilonGreedy { epsilon: 0.1 },
                BanditAgentSpec::Softmax { temperature: 0.1 },
                BanditAgentSpec::Ucb1,
                BanditAgentSpec::StationaryGpUcb,
                BanditAgentSpec::CeGpUcb {
                    kappa: 0.95,
                    epsilon: 0.006,
                },
            ],
            output: OutputConfig::default(),
        }
    }
}

impl BanditExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.scenarios.is_empty() || self.agents.is_empty() {
            return Err(Error::Config("need at least one scenario and one agent".into()));
        }
        let names: BTreeSet<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        if names.len() != self.scenarios.len() {
            return Err(Error::Config("scenario names must be unique".into()));
        }
        for s in &self.scenarios {
            self.env_spec(s).validate()?;
            for a in &self.agents {
                self.agent(a, s.arms.len(), 0)?;
            }
        }
        Ok(())
    }

    pub fn env_spec(&self, scenario: &ScenarioConfig) -> BanditEnvironmentSpec {
        BanditEnvironmentSpec {
            arms: scenario.arms.clone(),
            noise_variance: self.noise_variance,
            horizon: self.horizon,
        }
    }

    pub fn agent(&self, spec: &BanditAgentSpec, arms: usize, trial: usize) -> Result<Box<dyn Agent>> {
        let seeds = TrialSeeds::derive(self.base_seed, trial);
        spec.build(
            arms,
            self.horizon,
            self.query_rate,
            (self.reward_bounds[0], self.reward_bounds[1]),
            &self.gp,
            seeds.agent,
        )
    }

    fn key(spec: &BanditAgentSpec) -> CellKey {
        let epsilon = match spec {
            BanditAgentSpec::CeGpUcb { epsilon, .. } => Some(*epsilon),
            _ => None,
        };
        CellKey {
            policy: spec.label().to_string(),
            param: spec.param(),
            epsilon,
        }
    }

    pub fn run_trial(&self, env: &BanditEnvironment, spec: &BanditAgentSpec, trial: usize) -> TrialRecord {
        let key = Self::key(spec);
        let seeds = TrialSeeds::derive(self.base_seed, trial);
        let outcome = self
            .agent(spec, env.num_arms(), trial)
            .and_then(|mut agent| run_episode(env, agent.as_mut(), seeds.noise));
        match outcome {
            Ok(rows) => TrialRecord::from_rows(&key, trial, rows),
            Err(e) => TrialRecord::failed(&key, trial, &e),
        }
    }

    /// Records per scenario, ordered by agent then trial.
    pub fn run(&self) -> Result<Vec<(String, Vec<TrialRecord>)>> {
        self.validate()?;
        let mut out = Vec::new();
        for scenario in &self.scenarios {
            let env = BanditEnvironment::new(self.env_spec(scenario))?;
            let jobs: Vec<(usize, usize)> = (0..self.agents.len())
                .flat_map(|a| (0..self.trials).map(move |t| (a, t)))
                .collect();
            let records = jobs
                .par_iter()
                .map(|&(a, trial)| self.run_trial(&env, &self.agents[a], trial))
                .collect();
            out.push((scenario.name.clone(), records));
        }
        Ok(out)
    }
}

fn nan_if_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub param: Option<f64>,
    pub epsilon: Option<f64>,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_avg_regret: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub std_avg_regret: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_cost: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub std_cost: f64,
    /// Successful trials; with one trial the standard deviations are 0.
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub policy: String,
    pub param: Option<f64>,
    pub epsilon: Option<f64>,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_cost: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_avg_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub policy: String,
    pub param: Option<f64>,
    pub epsilon: Option<f64>,
    pub trial: usize,
    pub avg_regret: f64,
    pub regret: f64,
    pub cost: u64,
    pub loss: f64,
    pub failure: Option<String>,
}

impl From<&TrialRecord> for TrialSummary {
    fn from(r: &TrialRecord) -> Self {
        Self {
            policy: r.policy.clone(),
            param: r.param,
            epsilon: r.epsilon,
            trial: r.trial,
            avg_regret: r.avg_regret(),
            regret: r.regret,
            cost: r.cost,
            loss: r.loss,
            failure: r.failure.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    pub tradeoff: Vec<TradeoffPoint>,
    pub trials: Vec<TrialSummary>,
}

impl AggregateReport {
    pub fn row(&self, policy: &str, param: Option<f64>, epsilon: Option<f64>) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.policy == policy && r.param == param && r.epsilon == epsilon)
    }
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for `n = 1`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Groups records by `(policy, param, epsilon)` in order of first appearance.
/// Failed trials are excluded from the statistics and counted.
pub fn aggregate(records: &[TrialRecord]) -> AggregateReport {
    let mut keys: Vec<CellKey> = Vec::new();
    for r in records {
        let k = CellKey::of(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut report = AggregateReport::default();
    for key in keys {
        let mut group: Vec<&TrialRecord> = records.iter().filter(|r| CellKey::of(r) == key).collect();
        group.sort_by_key(|r| r.trial);
        let ok: Vec<&TrialRecord> = group.iter().copied().filter(|r| !r.is_failed()).collect();
        let regrets: Vec<f64> = ok.iter().map(|r| r.avg_regret()).collect();
        let costs: Vec<f64> = ok.iter().map(|r| r.cost as f64).collect();
        let (mean_avg_regret, std_avg_regret) = mean_std(&regrets);
        let (mean_cost, std_cost) = mean_std(&costs);
        report.rows.push(AggregateRow {
            policy: key.policy.clone(),
            param: key.param,
            epsilon: key.epsilon,
            mean_avg_regret,
            std_avg_regret,
            mean_cost,
            std_cost,
            trials: ok.len(),
            failures: group.len() - ok.len(),
        });
        report.tradeoff.push(TradeoffPoint {
            policy: key.policy,
            param: key.param,
            epsilon: key.epsilon,
            mean_cost,
            mean_avg_regret,
        });
        report.trials.extend(group.into_iter().map(TrialSummary::from));
    }
    report
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, e.into())
}

pub const AGGREGATE_HEADER: [&str; 9] = [
    "policy",
    "param",
    "epsilon",
    "mean_avg_regret",
    "std_avg_regret",
    "mean_cost",
    "std_cost",
    "trials",
    "failures",
];
pub const ROUNDS_HEADER: [&str; 6] = ["trial", "t", "x", "queried", "y", "regret"];
pub const TRIALS_HEADER: [&str; 9] = [
    "policy", "param", "epsilon", "trial", "avg_regret", "regret", "cost", "loss", "failure",
];
pub const TRADEOFF_HEADER: [&str; 5] = ["policy", "param", "epsilon", "mean_cost", "mean_avg_regret"];

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    w.write_record(AGGREGATE_HEADER).map_err(&err)?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            opt(r.param),
            opt(r.epsilon),
            r.mean_avg_regret.to_string(),
            r.std_avg_regret.to_string(),
            r.mean_cost.to_string(),
            r.std_cost.to_string(),
            r.trials.to_string(),
            r.failures.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_tradeoff_csv(points: &[TradeoffPoint], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    w.write_record(TRADEOFF_HEADER).map_err(&err)?;
    for p in points {
        w.write_record([
            p.policy.clone(),
            opt(p.param),
            opt(p.epsilon),
            p.mean_cost.to_string(),
            p.mean_avg_regret.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trials_csv(trials: &[TrialSummary], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    w.write_record(TRIALS_HEADER).map_err(&err)?;
    for s in trials {
        w.write_record([
            s.policy.clone(),
            opt(s.param),
            opt(s.epsilon),
            s.trial.to_string(),
            s.avg_regret.to_string(),
            s.regret.to_string(),
            s.cost.to_string(),
            s.loss.to_string(),
            s.failure.clone().unwrap_or_default(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-round rows of several trials of one cell.
pub fn write_rounds_csv<'a>(records: impl IntoIterator<Item = &'a TrialRecord>, path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv_writer(path)?;
    w.write_record(ROUNDS_HEADER).map_err(&err)?;
    for r in records {
        for row in &r.rows {
            w.write_record([
                r.trial.to_string(),
                row.t.to_string(),
                row.x.to_string(),
                u8::from(row.queried).to_string(),
                opt(row.y),
                row.regret.to_string(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_report_json(report: &AggregateReport, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: &Path) -> Result<AggregateReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes the aggregate, trade-off and per-trial tables into `dir`, plus
/// per-round CSVs under `dir/rounds` when `rounds` is set.
pub fn emit(records: &[TrialRecord], report: &AggregateReport, dir: &Path, format: OutputFormat, rounds: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        write_aggregate_csv(&report.rows, &dir.join("aggregate.csv"))?;
        write_tradeoff_csv(&report.tradeoff, &dir.join("tradeoff.csv"))?;
        write_trials_csv(&report.trials, &dir.join("trials.csv"))?;
    }
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        write_report_json(report, &dir.join("report.json"))?;
    }
    if rounds {
        let rdir = dir.join("rounds");
        fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
        let mut keys: Vec<CellKey> = Vec::new();
        for r in records {
            let k = CellKey::of(r);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for key in keys {
            let path = rdir.join(format!("{}.csv", key.slug()));
            write_rounds_csv(records.iter().filter(|r| CellKey::of(r) == key), &path)?;
        }
    }
    Ok(())
}

/// Reads a TOML experiment file; missing keys take their defaults.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

/// Posterior snapshots of one BO trial at selected rounds.
#[derive(Debug, Clone)]
pub struct PosteriorDump {
    /// `(round, posterior used to act at that round, f_round on the grid)`
    pub snapshots: Vec<(u64, PosteriorSummary, Vec<f64>)>,
    pub record: TrialRecord,
}

/// Replays one trial of `cell` and captures the posterior the agent acts on
/// at each round in `rounds`.
pub fn posterior_dump(
    config: &BoExperimentConfig,
    cell: &BoCell,
    epsilon: f64,
    trial: usize,
    rounds: &[u64],
) -> Result<PosteriorDump> {
    let sampler = config.sampler()?;
    let env = config.environment(epsilon, trial, &sampler)?;
    let mut agent = config.agent(cell, epsilon, trial, Arc::clone(env.domain()))?;
    let seeds = TrialSeeds::derive(config.base_seed, trial);
    let mut noise = TrialRng::seed_from_u64(seeds.noise);
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    for t in 1..=config.horizon {
        if rounds.contains(&t) {
            let truth = env.trajectory().round(t).to_vec();
            snapshots.push((t, agent.posterior()?, truth));
        }
        let d = agent.decide()?;
        let y = if d.queried {
            let y = env.evaluate(d.chosen, t, &mut noise)?;
            agent.feedback(y)?;
            Some(y)
        } else {
            None
        };
        rows.push(RoundRow {
            t,
            index: d.chosen,
            x: env.domain().point(d.chosen)[0],
            queried: d.queried,
            y,
            regret: env.instantaneous_regret(d.chosen, t)?,
        });
    }
    Ok(PosteriorDump {
        snapshots,
        record: TrialRecord::from_rows(&cell.key(epsilon), trial, rows),
    })
}

pub fn write_posterior_dump(dump: &PosteriorDump, domain: &Domain, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, post, truth) in &dump.snapshots {
        let path = dir.join(format!("posterior_t{t}.csv"));
        let err = csv_err(&path);
        let mut w = csv_writer(&path)?;
        w.write_record(["x", "mean", "stddev", "truth"]).map_err(&err)?;
        for i in 0..post.len() {
            w.write_record([
                domain.point(i)[0].to_string(),
                post.means[i].to_string(),
                post.stddevs[i].to_string(),
                truth[i].to_string(),
            ])
            .map_err(&err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    write_rounds_csv([&dump.record], &dir.join("rounds.csv"))
}
