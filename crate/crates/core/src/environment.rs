//! Synthetic time-varying objectives with a ground-truth regret oracle.
//!
//! Two families: a Markov-drifting GP sample path on a quantized unit
//! interval, where `f_{t+1} = sqrt(1 - eps) f_t + sqrt(eps) g_{t+1}` with
//! `f_1, g_t ~ GP(0, k_space)`, and finite-arm bandits whose mean rewards
//! follow fixed curves over rounds.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::kernel::SpatialKernel;
use crate::tvgp::factorize_with;

pub type TrialRng = ChaCha8Rng;

/// Jitter ladder for the grid Gram factorization used to draw sample paths.
pub const SAMPLER_JITTER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// A time-varying objective over a finite candidate set.
pub trait Environment: Send + Sync {
    fn horizon(&self) -> u64;

    fn domain(&self) -> &Arc<Domain>;

    fn noise_variance(&self) -> f64;

    /// Noise-free `f_t(x)` for candidate `index`; `t` is 1-based.
    fn value(&self, index: usize, t: u64) -> f64;

    /// `max_x f_t(x)`.
    fn best_value(&self, t: u64) -> f64;

    /// Noisy reward `f_t(x) + z`, `z ~ N(0, noise_variance)`.
    fn evaluate(&self, index: usize, t: u64, rng: &mut TrialRng) -> Result<f64> {
        self.check(index, t)?;
        let z: f64 = StandardNormal.sample(rng);
        Ok(self.value(index, t) + self.noise_variance().sqrt() * z)
    }

    /// `max_x f_t(x) - f_t(x_index)`.
    fn instantaneous_regret(&self, index: usize, t: u64) -> Result<f64> {
        self.check(index, t)?;
        Ok(self.best_value(t) - self.value(index, t))
    }

    fn check(&self, index: usize, t: u64) -> Result<()> {
        if index >= self.domain().len() {
            return Err(Error::InvalidInput(format!(
                "candidate {index} outside domain of {} points",
                self.domain().len()
            )));
        }
        if t == 0 || t > self.horizon() {
            return Err(Error::InvalidInput(format!(
                "round {t} outside 1..={}",
                self.horizon()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvGpEnvironmentSpec {
    pub grid_size: usize,
    pub generator: SpatialKernel,
    pub epsilon: f64,
    pub noise_variance: f64,
    pub horizon: u64,
    pub seed: u64,
}

impl Default for TvGpEnvironmentSpec {
    fn default() -> Self {
        Self {
            grid_size: 1000,
            generator: SpatialKernel::default(),
            epsilon: 0.05,
            noise_variance: 0.01,
            horizon: 500,
            seed: 0,
        }
    }
}

impl TvGpEnvironmentSpec {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.grid_size < 2 {
            return Err(Error::InvalidSpec("grid needs at least 2 points".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidSpec(format!(
                "forgetting rate must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidSpec("noise variance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Lower Cholesky factor of the grid Gram matrix, shared across trajectories
/// that use the same generator kernel and grid.
#[derive(Debug)]
pub struct GridSampler {
    kernel: SpatialKernel,
    domain: Arc<Domain>,
    lower: DMatrix<f64>,
    pub jitter: f64,
}

impl GridSampler {
    pub fn new(kernel: SpatialKernel, grid_size: usize) -> Result<Self> {
        kernel.validate()?;
        let domain = Arc::new(Domain::unit_grid(grid_size)?);
        let points: Vec<&[f64]> = domain.points().collect();
        let gram = kernel.gram(&points)?;
        let factor = factorize_with(&gram, &SAMPLER_JITTER, "trajectory generator")?;
        Ok(Self {
            kernel,
            domain,
            lower: factor.l(),
            jitter: factor.jitter,
        })
    }

    pub fn kernel(&self) -> &SpatialKernel {
        &self.kernel
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    /// `count` independent GP draws, one per column.
    pub fn draw(&self, count: usize, rng: &mut TrialRng) -> DMatrix<f64> {
        let g = self.domain.len();
        let z = DMatrix::from_fn(g, count, |_, _| StandardNormal.sample(rng));
        &self.lower * z
    }
}

/// Hidden sample path `f_t(x)` for `t = 1..=T` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TvTrajectory {
    grid_size: usize,
    horizon: u64,
    // row t-1 holds f_t over the grid
    values: Vec<f64>,
    maxima: Vec<f64>,
}

impl TvTrajectory {
    pub fn value(&self, index: usize, t: u64) -> f64 {
        self.values[(t as usize - 1) * self.grid_size + index]
    }

    pub fn round(&self, t: u64) -> &[f64] {
        let start = (t as usize - 1) * self.grid_size;
        &self.values[start..start + self.grid_size]
    }

    pub fn best_value(&self, t: u64) -> f64 {
        self.maxima[t as usize - 1]
    }

    pub fn argmax(&self, t: u64) -> usize {
        crate::strategy::argmax(self.round(t))
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }
}

/// Draws the hidden trajectory for `spec` using a prepared sampler.
pub fn generate_tv_function(spec: &TvGpEnvironmentSpec, sampler: &GridSampler) -> Result<TvTrajectory> {
    spec.validate()?;
    if sampler.domain().len() != spec.grid_size || *sampler.kernel() != spec.generator {
        return Err(Error::InvalidInput(
            "sampler does not match the environment's grid and kernel".into(),
        ));
    }
    let g = spec.grid_size;
    let horizon = spec.horizon as usize;
    let mut rng = TrialRng::seed_from_u64(spec.seed);
    let eps = spec.epsilon;
    let draws = if eps == 0.0 { 1 } else { horizon };
    let fresh = sampler.draw(draws, &mut rng);

    let mut values = Vec::with_capacity(g * horizon);
    values.extend_from_slice(fresh.column(0).as_slice());
    let keep = (1.0 - eps).sqrt();
    let inject = eps.sqrt();
    for t in 1..horizon {
        let prev = (t - 1) * g;
        if eps == 0.0 {
            values.extend_from_within(prev..prev + g);
        } else {
            let col = fresh.column(t);
            for i in 0..g {
                let v = keep * values[prev + i] + inject * col[i];
                values.push(v);
            }
        }
    }
    let maxima = values
        .chunks_exact(g)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(TvTrajectory {
        grid_size: g,
        horizon: spec.horizon,
        values,
        maxima,
    })
}

/// Markov-drifting GP objective on the unit grid.
#[derive(Debug, Clone)]
pub struct TvGpEnvironment {
    spec: TvGpEnvironmentSpec,
    domain: Arc<Domain>,
    trajectory: Arc<TvTrajectory>,
}

impl TvGpEnvironment {
    pub fn new(spec: TvGpEnvironmentSpec) -> Result<Self> {
        spec.validate()?;
        let sampler = GridSampler::new(spec.generator, spec.grid_size)?;
        Self::with_sampler(spec, &sampler)
    }

    pub fn with_sampler(spec: TvGpEnvironmentSpec, sampler: &GridSampler) -> Result<Self> {
        let trajectory = Arc::new(generate_tv_function(&spec, sampler)?);
        Ok(Self {
            spec,
            domain: sampler.domain().clone(),
            trajectory,
        })
    }

    pub fn spec(&self) -> &TvGpEnvironmentSpec {
        &self.spec
    }

    pub fn trajectory(&self) -> &Arc<TvTrajectory> {
        &self.trajectory
    }

    /// Writes `t,x,f` rows for every round and grid point.
    pub fn write_trajectory_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "f"])?;
        for t in 1..=self.spec.horizon {
            for (i, p) in self.domain.points().enumerate() {
                w.write_record([
                    t.to_string(),
                    p[0].to_string(),
                    self.trajectory.value(i, t).to_string(),
                ])?;
            }
        }
        w.flush()
    }
}

impl Environment for TvGpEnvironment {
    fn horizon(&self) -> u64 {
        self.spec.horizon
    }

    fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    fn noise_variance(&self) -> f64 {
        self.spec.noise_variance
    }

    fn value(&self, index: usize, t: u64) -> f64 {
        self.trajectory.value(index, t)
    }

    fn best_value(&self, t: u64) -> f64 {
        self.trajectory.best_value(t)
    }
}

/// Mean-reward curve of one bandit arm over rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum ArmCurve {
    /// `offset + amplitude * sin(2 pi t / period + phase)`
    Sine {
        offset: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `base + height * exp(-(t - center)^2 / (2 width^2))`
    Gaussian {
        center: f64,
        width: f64,
        height: f64,
        #[serde(default)]
        base: f64,
    },
    /// `levels[k]` on `(breakpoints[k-1], breakpoints[k]]`.
    Piecewise { breakpoints: Vec<u64>, levels: Vec<f64> },
}

impl ArmCurve {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ArmCurve::Sine {
                offset,
                amplitude,
                period,
                phase,
            } => *period > 0.0 && [offset, amplitude, period, phase].iter().all(|v| v.is_finite()),
            ArmCurve::Gaussian {
                center,
                width,
                height,
                base,
            } => *width > 0.0 && [center, width, height, base].iter().all(|v| v.is_finite()),
            ArmCurve::Piecewise { breakpoints, levels } => {
                levels.len() == breakpoints.len() + 1
                    && breakpoints.windows(2).all(|w| w[0] < w[1])
                    && levels.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("malformed arm curve {self:?}")))
        }
    }

    pub fn eval(&self, t: u64) -> f64 {
        let tf = t as f64;
        match self {
            ArmCurve::Sine {
                offset,
                amplitude,
                period,
                phase,
            } => offset + amplitude * (2.0 * std::f64::consts::PI * tf / period + phase).sin(),
            ArmCurve::Gaussian {
                center,
                width,
                height,
                base,
            } => base + height * (-(tf - center).powi(2) / (2.0 * width * width)).exp(),
            ArmCurve::Piecewise { breakpoints, levels } => {
                let k = breakpoints.partition_point(|&b| b < t);
                levels[k]
            }
        }
    }
}

/// Named three-arm scenarios whose first arm follows the reference curve of
/// each family and whose other arms are shifted copies that cross it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BanditScenario {
    Sine,
    Gaussian,
    Piecewise,
}

impl BanditScenario {
    pub const ALL: [BanditScenario; 3] = [BanditScenario::Sine, BanditScenario::Gaussian, BanditScenario::Piecewise];

    pub fn name(&self) -> &'static str {
        match self {
            BanditScenario::Sine => "sine",
            BanditScenario::Gaussian => "gaussian",
            BanditScenario::Piecewise => "piecewise",
        }
    }

    pub fn arms(&self) -> Vec<ArmCurve> {
        use std::f64::consts::PI;
        match self {
            BanditScenario::Sine => (0..3)
                .map(|k| ArmCurve::Sine {
                    offset: 0.5,
                    amplitude: 0.4,
                    period: 500.0,
                    phase: 2.0 * PI * k as f64 / 3.0,
                })
                .collect(),
            BanditScenario::Gaussian => [1000.0, 500.0, 1500.0]
                .into_iter()
                .map(|center| ArmCurve::Gaussian {
                    center,
                    width: 250.0,
                    height: 0.9,
                    base: 0.0,
                })
                .collect(),
            BanditScenario::Piecewise => [[0.2, 0.8, 0.4], [0.8, 0.4, 0.2], [0.4, 0.2, 0.8]]
                .into_iter()
                .map(|levels| ArmCurve::Piecewise {
                    breakpoints: vec![700, 1400],
                    levels: levels.to_vec(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditEnvironmentSpec {
    pub arms: Vec<ArmCurve>,
    pub noise_variance: f64,
    pub horizon: u64,
}

impl BanditEnvironmentSpec {
    pub fn scenario(scenario: BanditScenario, noise_variance: f64, horizon: u64) -> Self {
        Self {
            arms: scenario.arms(),
            noise_variance,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.len() < 2 {
            return Err(Error::InvalidSpec("a bandit needs at least 2 arms".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be at least 1".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidSpec("noise variance must be non-negative".into()));
        }
        self.arms.iter().try_for_each(ArmCurve::validate)
    }
}

/// Finite-arm bandit with curve-valued mean rewards, tabulated for `1..=T`.
#[derive(Debug, Clone)]
pub struct BanditEnvironment {
    spec: BanditEnvironmentSpec,
    domain: Arc<Domain>,
    table: Vec<f64>,
    maxima: Vec<f64>,
}

impl BanditEnvironment {
    pub fn new(spec: BanditEnvironmentSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.arms.len();
        let mut table = Vec::with_capacity(k * spec.horizon as usize);
        let mut maxima = Vec::with_capacity(spec.horizon as usize);
        for t in 1..=spec.horizon {
            let row: Vec<f64> = spec.arms.iter().map(|a| a.eval(t)).collect();
            maxima.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            table.extend(row);
        }
        Ok(Self {
            domain: Arc::new(Domain::arms(k)?),
            spec,
            table,
            maxima,
        })
    }

    pub fn spec(&self) -> &BanditEnvironmentSpec {
        &self.spec
    }

    pub fn num_arms(&self) -> usize {
        self.spec.arms.len()
    }

    pub fn write_curves_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "arm", "mean"])?;
        for t in 1..=self.spec.horizon {
            for a in 0..self.num_arms() {
                w.write_record([t.to_string(), a.to_string(), self.value(a, t).to_string()])?;
            }
        }
        w.flush()
    }
}

impl Environment for BanditEnvironment {
    fn horizon(&self) -> u64 {
        self.spec.horizon
    }

    fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    fn noise_variance(&self) -> f64 {
        self.spec.noise_variance
    }

    fn value(&self, index: usize, t: u64) -> f64 {
        self.table[(t as usize - 1) * self.spec.arms.len() + index]
    }

    fn best_value(&self, t: u64) -> f64 {
        self.maxima[t as usize - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SpatialFamily;
    use rand::Rng;

    fn spec(eps: f64, grid: usize, horizon: u64) -> TvGpEnvironmentSpec {
        TvGpEnvironmentSpec {
            grid_size: grid,
            generator: SpatialKernel::new(SpatialFamily::Matern32, 0.2, 1.0).unwrap(),
            epsilon: eps,
            noise_variance: 0.01,
            horizon,
            seed: 9,
        }
    }

    #[test]
    fn zero_drift_is_constant() {
        let env = TvGpEnvironment::new(spec(0.0, 50, 20)).unwrap();
        let tr = env.trajectory();
        for t in 2..=20 {
            assert_eq!(tr.round(t), tr.round(1));
        }
    }

    #[test]
    fn full_forgetting_redraws_from_fresh_samples() {
        let s = spec(1.0, 30, 5);
        let sampler = GridSampler::new(s.generator, 30).unwrap();
        let tr = generate_tv_function(&s, &sampler).unwrap();
        let mut rng = TrialRng::seed_from_u64(s.seed);
        let draws = sampler.draw(5, &mut rng);
        for t in 1..=5u64 {
            for i in 0..30 {
                assert_eq!(tr.value(i, t), draws[(i, t as usize - 1)]);
            }
        }
    }

    #[test]
    fn recursion_applied_exactly() {
        let s = spec(0.3, 20, 6);
        let sampler = GridSampler::new(s.generator, 20).unwrap();
        let tr = generate_tv_function(&s, &sampler).unwrap();
        let mut rng = TrialRng::seed_from_u64(s.seed);
        let draws = sampler.draw(6, &mut rng);
        for t in 2..=6u64 {
            for i in 0..20 {
                let expect = 0.7f64.sqrt() * tr.value(i, t - 1) + 0.3f64.sqrt() * draws[(i, t as usize - 1)];
                assert_eq!(tr.value(i, t), expect);
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let a = TvGpEnvironment::new(spec(0.05, 40, 30)).unwrap();
        let b = TvGpEnvironment::new(spec(0.05, 40, 30)).unwrap();
        assert_eq!(a.trajectory(), b.trajectory());
        let mut other = spec(0.05, 40, 30);
        other.seed = 10;
        let c = TvGpEnvironment::new(other).unwrap();
        assert_ne!(a.trajectory(), c.trajectory());
    }

    #[test]
    fn noiseless_and_repeatable_evaluation() {
        let mut s = spec(0.05, 40, 10);
        s.noise_variance = 0.0;
        let env = TvGpEnvironment::new(s).unwrap();
        let mut rng = TrialRng::seed_from_u64(1);
        assert_eq!(env.evaluate(7, 3, &mut rng).unwrap(), env.value(7, 3));

        let noisy = TvGpEnvironment::new(spec(0.05, 40, 10)).unwrap();
        let mut r1 = TrialRng::seed_from_u64(5);
        let mut r2 = TrialRng::seed_from_u64(5);
        assert_eq!(noisy.evaluate(3, 2, &mut r1).unwrap(), noisy.evaluate(3, 2, &mut r2).unwrap());
        assert!(noisy.evaluate(40, 2, &mut r1).is_err());
        assert!(noisy.evaluate(0, 11, &mut r1).is_err());
    }

    #[test]
    fn noisy_mean_concentrates() {
        let env = TvGpEnvironment::new(spec(0.05, 40, 10)).unwrap();
        let mut rng = TrialRng::seed_from_u64(77);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| env.evaluate(11, 4, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - env.value(11, 4)).abs() <= 3.0 * 0.1 / 100.0);
    }

    #[test]
    fn regret_against_grid_scan() {
        let env = TvGpEnvironment::new(spec(0.1, 60, 25)).unwrap();
        let mut rng = TrialRng::seed_from_u64(3);
        for t in 1..=25 {
            let x = rng.random_range(0..60);
            let scan = (0..60).map(|i| env.value(i, t)).fold(f64::NEG_INFINITY, f64::max);
            let r = env.instantaneous_regret(x, t).unwrap();
            assert_eq!(r, scan - env.value(x, t));
            assert!(r >= 0.0);
            let best = env.trajectory().argmax(t);
            assert_eq!(env.instantaneous_regret(best, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_arm_regret() {
        let env = BanditEnvironment::new(BanditEnvironmentSpec {
            arms: vec![
                ArmCurve::Piecewise { breakpoints: vec![], levels: vec![1.0] },
                ArmCurve::Piecewise { breakpoints: vec![], levels: vec![0.3] },
            ],
            noise_variance: 0.01,
            horizon: 5,
        })
        .unwrap();
        assert!((env.instantaneous_regret(1, 2).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(env.instantaneous_regret(0, 2).unwrap(), 0.0);
    }

    #[test]
    fn bandit_curve_shapes() {
        let sine = &BanditScenario::Sine.arms()[0];
        for t in 1..1500 {
            assert!((sine.eval(t) - sine.eval(t + 500)).abs() < 1e-12);
        }
        assert!((sine.eval(125) - 0.9).abs() < 1e-12);
        let gauss = &BanditScenario::Gaussian.arms()[0];
        assert!((gauss.eval(1000) - 0.9).abs() < 1e-15);
        assert!((gauss.eval(1250) - 0.9 * (-0.5f64).exp()).abs() < 1e-15);
        let pw = &BanditScenario::Piecewise.arms()[0];
        assert!((1..=700).all(|t| pw.eval(t) == 0.2));
        assert!((701..=1400).all(|t| pw.eval(t) == 0.8));
        assert!((1401..=2000).all(|t| pw.eval(t) == 0.4));
        assert!(ArmCurve::Piecewise { breakpoints: vec![5], levels: vec![1.0] }.validate().is_err());
    }

    #[test]
    fn bandit_needs_two_arms() {
        let spec = BanditEnvironmentSpec {
            arms: vec![ArmCurve::Piecewise { breakpoints: vec![], levels: vec![1.0] }],
            noise_variance: 0.01,
            horizon: 5,
        };
        assert!(BanditEnvironment::new(spec).is_err());
    }
}
