#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Kernel families re-derived here so the oracle shares no code with the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    SquaredExponential,
    Matern32,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleKernel {
    pub family: Family,
    pub lengthscale: f64,
    pub amplitude: f64,
    pub epsilon: f64,
}

impl OracleKernel {
    pub fn space(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / self.lengthscale;
        match self.family {
            Family::SquaredExponential => self.amplitude * (-r * r / 2.0).exp(),
            Family::Matern32 => {
                let s = 3f64.sqrt() * r;
                self.amplitude * (1.0 + s) * (-s).exp()
            }
        }
    }

    pub fn time(&self, t: u64, u: u64) -> f64 {
        let gap = (t as f64 - u as f64).abs();
        (1.0 - self.epsilon).powf(gap / 2.0)
    }

    pub fn joint(&self, a: &(Vec<f64>, u64), b: &(Vec<f64>, u64)) -> f64 {
        self.space(&a.0, &b.0) * self.time(a.1, b.1)
    }
}

/// Plain GP regression over space-time points `(x, t)`; solved by LU so it
/// does not share a factorization path with the crate.
pub fn brute_force(
    k: &OracleKernel,
    noise: f64,
    train: &[(Vec<f64>, u64)],
    y: &[f64],
    test: &[(Vec<f64>, u64)],
) -> (Vec<f64>, Vec<f64>) {
    let n = train.len();
    if n == 0 {
        return (vec![0.0; test.len()], test.iter().map(|p| k.joint(p, p)).collect());
    }
    let gram = DMatrix::from_fn(n, n, |i, j| k.joint(&train[i], &train[j]) + if i == j { noise } else { 0.0 });
    let lu = gram.lu();
    let yv = DVector::from_column_slice(y);
    let alpha = lu.solve(&yv).expect("noisy gram is invertible");
    let mut means = Vec::with_capacity(test.len());
    let mut vars = Vec::with_capacity(test.len());
    for p in test {
        let ks = DVector::from_fn(n, |i, _| k.joint(&train[i], p));
        means.push(ks.dot(&alpha));
        let w = lu.solve(&ks).expect("noisy gram is invertible");
        vars.push(k.joint(p, p) - ks.dot(&w));
    }
    (means, vars)
}

/// Standard (time-blind) GP posterior.
pub fn stationary_gp(k: &OracleKernel, noise: f64, xs: &[Vec<f64>], y: &[f64], test: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let gram = DMatrix::from_fn(n, n, |i, j| k.space(&xs[i], &xs[j]) + if i == j { noise } else { 0.0 });
    let chol = gram.cholesky().expect("noisy gram is positive definite");
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for x in test {
        let ks = DVector::from_fn(n, |i, _| k.space(&xs[i], x));
        means.push(ks.dot(&alpha));
        let w = chol.solve(&ks);
        vars.push(k.space(x, x) - ks.dot(&w));
    }
    (means, vars)
}

/// A random observation history on the unit grid of `grid` points.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub kernel: OracleKernel,
    pub noise: f64,
    pub grid: usize,
    /// `(grid index, value, round)` with strictly increasing rounds.
    pub obs: Vec<(usize, f64, u64)>,
    /// Prediction is for acting at round `now + 1`.
    pub now: u64,
}

impl RandomCase {
    pub fn generate(rng: &mut ChaCha8Rng, epsilons: &[f64]) -> Self {
        let family = if rng.random_bool(0.5) {
            Family::Matern32
        } else {
            Family::SquaredExponential
        };
        let kernel = OracleKernel {
            family,
            lengthscale: rng.random_range(0.05..0.5),
            amplitude: rng.random_range(0.5..2.0),
            epsilon: epsilons[rng.random_range(0..epsilons.len())],
        };
        let grid = rng.random_range(5..60);
        let n = rng.random_range(0..=20);
        let mut round = 0u64;
        let obs = (0..n)
            .map(|_| {
                round += rng.random_range(1..6);
                (rng.random_range(0..grid), rng.random_range(-2.0..2.0), round)
            })
            .collect();
        let now = round + rng.random_range(0..10);
        Self {
            kernel,
            noise: rng.random_range(0.005..0.2),
            grid,
            obs,
            now,
        }
    }

    pub fn grid_point(&self, i: usize) -> Vec<f64> {
        vec![i as f64 / (self.grid - 1) as f64]
    }

    pub fn oracle(&self) -> (Vec<f64>, Vec<f64>) {
        let train: Vec<(Vec<f64>, u64)> = self.obs.iter().map(|&(i, _, t)| (self.grid_point(i), t)).collect();
        let y: Vec<f64> = self.obs.iter().map(|o| o.1).collect();
        let test: Vec<(Vec<f64>, u64)> = (0..self.grid).map(|i| (self.grid_point(i), self.now + 1)).collect();
        brute_force(&self.kernel, self.noise, &train, &y, &test)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn crate_kernel(k: &OracleKernel) -> tvbo_core::CompositeKernel {
    use tvbo_core::kernel::{SpatialFamily, SpatialKernel, TemporalKernel};
    let family = match k.family {
        Family::SquaredExponential => SpatialFamily::SquaredExponential,
        Family::Matern32 => SpatialFamily::Matern32,
    };
    tvbo_core::CompositeKernel::new(
        SpatialKernel::new(family, k.lengthscale, k.amplitude).unwrap(),
        TemporalKernel::new(k.epsilon).unwrap(),
    )
    .unwrap()
}
