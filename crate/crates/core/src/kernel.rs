//! Covariance functions over space, time, and their product.
//!
//! Points are coordinate slices (`&[f64]`); rounds are 1-based integers.
//! The composite kernel is `k((x, t), (x', t')) = k_space(x, x') * k_time(t, t')`
//! with the exponential forgetting kernel `k_time(t, t') = (1 - eps)^(|t - t'| / 2)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialFamily {
    SquaredExponential,
    Matern32,
    Matern52,
    /// `k(x, x') = amplitude * [x == x']`; used for independent bandit arms.
    Independent,
}

/// Stationary spatial kernel with a single shared lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernel {
    pub family: SpatialFamily,
    #[serde(default = "default_lengthscale")]
    pub lengthscale: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_lengthscale() -> f64 {
    0.2
}

fn default_amplitude() -> f64 {
    1.0
}

impl Default for SpatialKernel {
    fn default() -> Self {
        Self {
            family: SpatialFamily::Matern32,
            lengthscale: default_lengthscale(),
            amplitude: default_amplitude(),
        }
    }
}

impl SpatialKernel {
    pub fn new(family: SpatialFamily, lengthscale: f64, amplitude: f64) -> Result<Self> {
        let k = Self {
            family,
            lengthscale,
            amplitude,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn independent(amplitude: f64) -> Result<Self> {
        Self::new(SpatialFamily::Independent, 1.0, amplitude)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "kernel amplitude must be positive and finite, got {}",
                self.amplitude
            )));
        }
        if self.family != SpatialFamily::Independent
            && !(self.lengthscale > 0.0 && self.lengthscale.is_finite())
        {
            return Err(Error::InvalidSpec(format!(
                "kernel lengthscale must be positive and finite, got {}",
                self.lengthscale
            )));
        }
        Ok(())
    }

    /// Checked evaluation of `k_space(x, x2)`.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        if x.len() != x2.len() {
            return Err(Error::InvalidInput(format!(
                "point dimensions differ: {} vs {}",
                x.len(),
                x2.len()
            )));
        }
        if x.iter().chain(x2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite point coordinate".into()));
        }
        Ok(self.k(x, x2))
    }

    /// Unchecked evaluation; callers guarantee matching, finite coordinates.
    #[inline]
    pub(crate) fn k(&self, x: &[f64], x2: &[f64]) -> f64 {
        let a = self.amplitude;
        match self.family {
            SpatialFamily::Independent => {
                if x == x2 {
                    a
                } else {
                    0.0
                }
            }
            SpatialFamily::SquaredExponential => {
                let r2 = sq_dist(x, x2) / (self.lengthscale * self.lengthscale);
                a * (-0.5 * r2).exp()
            }
            SpatialFamily::Matern32 => {
                let s = 3f64.sqrt() * sq_dist(x, x2).sqrt() / self.lengthscale;
                a * (1.0 + s) * (-s).exp()
            }
            SpatialFamily::Matern52 => {
                let r = sq_dist(x, x2).sqrt() / self.lengthscale;
                let s = 5f64.sqrt() * r;
                a * (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
            }
        }
    }

    /// Prior variance `k(x, x)`, identical for every point.
    #[inline]
    pub fn prior_variance(&self) -> f64 {
        self.amplitude
    }

    pub fn gram(&self, points: &[&[f64]]) -> Result<DMatrix<f64>> {
        check_points(points)?;
        let n = points.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.k(points[i], points[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_points(points: &[&[f64]]) -> Result<()> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidInput("empty point list".into()));
    };
    let dim = first.len();
    for p in points {
        if p.len() != dim {
            return Err(Error::InvalidInput("points have mixed dimensions".into()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite point coordinate".into()));
        }
    }
    Ok(())
}

/// Exponential forgetting kernel over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalKernel {
    pub epsilon: f64,
}

impl TemporalKernel {
    pub fn new(epsilon: f64) -> Result<Self> {
        let k = Self { epsilon };
        k.validate()?;
        Ok(k)
    }

    pub fn stationary() -> Self {
        Self { epsilon: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidSpec(format!(
                "forgetting rate must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn eval(&self, t: u64, t2: u64) -> Result<f64> {
        self.validate()?;
        if t == 0 || t2 == 0 {
            return Err(Error::InvalidInput("rounds are 1-based".into()));
        }
        Ok(self.decay(t.abs_diff(t2)))
    }

    /// `(1 - eps)^(gap / 2)`.
    #[inline]
    pub fn decay(&self, gap: u64) -> f64 {
        (1.0 - self.epsilon).powf(gap as f64 / 2.0)
    }
}

/// A point in the joint space-time domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: u64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: u64) -> Self {
        Self { x, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeKernel {
    pub spatial: SpatialKernel,
    pub temporal: TemporalKernel,
}

impl CompositeKernel {
    pub fn new(spatial: SpatialKernel, temporal: TemporalKernel) -> Result<Self> {
        spatial.validate()?;
        temporal.validate()?;
        Ok(Self { spatial, temporal })
    }

    pub fn validate(&self) -> Result<()> {
        self.spatial.validate()?;
        self.temporal.validate()
    }

    pub fn eval(&self, a: &SpaceTimePoint, b: &SpaceTimePoint) -> Result<f64> {
        Ok(self.spatial.eval(&a.x, &b.x)? * self.temporal.eval(a.t, b.t)?)
    }

    pub fn gram(&self, points: &[SpaceTimePoint]) -> Result<DMatrix<f64>> {
        self.validate()?;
        let xs: Vec<&[f64]> = points.iter().map(|p| p.x.as_slice()).collect();
        check_points(&xs)?;
        if points.iter().any(|p| p.t == 0) {
            return Err(Error::InvalidInput("rounds are 1-based".into()));
        }
        let n = points.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.spatial.k(xs[i], xs[j])
                    * self.temporal.decay(points[i].t.abs_diff(points[j].t));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn st(x: f64, t: u64) -> SpaceTimePoint {
        SpaceTimePoint::new(vec![x], t)
    }

    fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn zero_distance_gives_amplitude() {
        let k = SpatialKernel::new(SpatialFamily::Matern32, 0.2, 1.0).unwrap();
        assert_eq!(k.eval(&[0.4], &[0.4]).unwrap(), 1.0);
    }

    #[test]
    fn squared_exponential_unit_distance() {
        let k = SpatialKernel::new(SpatialFamily::SquaredExponential, 1.0, 1.0).unwrap();
        assert_relative_eq!(k.eval(&[0.0], &[1.0]).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.6065, epsilon = 1e-4);
    }

    #[test]
    fn matern_closed_forms() {
        let r: f64 = 0.3;
        let l = 0.2;
        let m32 = SpatialKernel::new(SpatialFamily::Matern32, l, 2.0).unwrap();
        let s = 3f64.sqrt() * r / l;
        assert_relative_eq!(
            m32.eval(&[0.1], &[0.4]).unwrap(),
            2.0 * (1.0 + s) * (-s).exp(),
            epsilon = 1e-14
        );
        let m52 = SpatialKernel::new(SpatialFamily::Matern52, l, 1.0).unwrap();
        let s = 5f64.sqrt() * r / l;
        assert_relative_eq!(
            m52.eval(&[0.1], &[0.4]).unwrap(),
            (1.0 + s + s * s / 3.0) * (-s).exp(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn independent_arms_uncorrelated() {
        let k = SpatialKernel::independent(1.0).unwrap();
        assert_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(k.eval(&[2.0], &[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            SpatialKernel::new(SpatialFamily::Matern52, 0.0, 1.0),
            Err(Error::InvalidSpec(_))
        ));
        assert!(SpatialKernel::new(SpatialFamily::Independent, 0.0, 1.0).is_ok());
        let k = SpatialKernel::default();
        assert!(matches!(k.eval(&[f64::NAN], &[0.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            TemporalKernel { epsilon: 1.5 }.eval(1, 2),
            Err(Error::InvalidSpec(_))
        ));
        assert!(TemporalKernel::new(-0.1).is_err());
    }

    #[test]
    fn temporal_examples() {
        let k = TemporalKernel::new(0.03).unwrap();
        assert_eq!(k.eval(5, 5).unwrap(), 1.0);
        assert_eq!(k.eval(3, 5).unwrap(), 0.97);
        assert_eq!(k.eval(5, 3).unwrap(), 0.97);
        let flat = TemporalKernel::new(0.0).unwrap();
        assert_eq!(flat.eval(1, 400).unwrap(), 1.0);
        let full = TemporalKernel::new(1.0).unwrap();
        assert_eq!(full.eval(4, 4).unwrap(), 1.0);
        assert_eq!(full.eval(4, 5).unwrap(), 0.0);
    }

    #[test]
    fn gram_single_and_duplicate() {
        let k = CompositeKernel::new(
            SpatialKernel::new(SpatialFamily::Matern32, 0.2, 1.7).unwrap(),
            TemporalKernel::new(0.1).unwrap(),
        )
        .unwrap();
        let g = k.gram(&[st(0.3, 2)]).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], 1.7);

        let g = k.gram(&[st(0.3, 2), st(0.3, 2)]).unwrap();
        assert!(g.iter().all(|&v| v == 1.7));
        assert_eq!(g.rank(1e-12), 1);
        assert!(k.gram(&[]).is_err());
    }

    #[test]
    fn gram_is_hadamard_of_parts() {
        let spatial = SpatialKernel::new(SpatialFamily::Matern32, 0.2, 1.0).unwrap();
        let temporal = TemporalKernel::new(0.05).unwrap();
        let k = CompositeKernel::new(spatial, temporal).unwrap();
        let pts = [st(0.12, 3), st(0.58, 7), st(0.91, 4)];
        let g = k.gram(&pts).unwrap();
        // Independent oracle: build each factor by direct formula.
        for i in 0..3 {
            for j in 0..3 {
                let r = (pts[i].x[0] - pts[j].x[0]).abs();
                let s = 3f64.sqrt() * r / 0.2;
                let ks = (1.0 + s) * (-s).exp();
                let kt = 0.95f64.powf(pts[i].t.abs_diff(pts[j].t) as f64 / 2.0);
                assert!((g[(i, j)] - ks * kt).abs() <= 1e-12);
            }
        }
    }

    fn family() -> impl Strategy<Value = SpatialFamily> {
        prop_oneof![
            Just(SpatialFamily::SquaredExponential),
            Just(SpatialFamily::Matern32),
            Just(SpatialFamily::Matern52),
            Just(SpatialFamily::Independent),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn composite_gram_symmetric_psd_and_factorized(
            fam in family(),
            ls in 0.05f64..1.0,
            amp in 0.1f64..3.0,
            eps in 0.0f64..=1.0,
            pts in prop::collection::vec((0.0f64..1.0, 1u64..60), 1..50),
        ) {
            let spatial = SpatialKernel::new(fam, ls, amp).unwrap();
            let temporal = TemporalKernel::new(eps).unwrap();
            let k = CompositeKernel::new(spatial, temporal).unwrap();
            let points: Vec<SpaceTimePoint> = pts.iter().map(|&(x, t)| st(x, t)).collect();
            let g = k.gram(&points).unwrap();
            prop_assert_eq!(&g, &g.transpose());
            prop_assert!(min_eigenvalue(&g) >= -1e-9);

            let xs: Vec<&[f64]> = points.iter().map(|p| p.x.as_slice()).collect();
            let gs = spatial.gram(&xs).unwrap();
            for i in 0..points.len() {
                for j in 0..points.len() {
                    let kt = temporal.eval(points[i].t, points[j].t).unwrap();
                    prop_assert!((g[(i, j)] - gs[(i, j)] * kt).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn temporal_decay_monotone(eps in 0.0001f64..=1.0, gap in 0u64..500) {
            let k = TemporalKernel::new(eps).unwrap();
            let a = k.eval(1, 1 + gap).unwrap();
            let b = k.eval(1, 2 + gap).unwrap();
            prop_assert!(b <= a);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn spatial_symmetric(fam in family(), x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let k = SpatialKernel::new(fam, 0.3, 1.3).unwrap();
            prop_assert_eq!(k.eval(&[x], &[y]).unwrap(), k.eval(&[y], &[x]).unwrap());
        }
    }
}
