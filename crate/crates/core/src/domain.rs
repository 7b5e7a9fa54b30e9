//! Finite candidate sets.
//!
//! A [`Domain`] stores its points in a flat coordinate buffer together with a
//! neighbourhood graph used for local-optimum detection on acquisition curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::sq_dist;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    dim: usize,
    coords: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl Domain {
    /// `size` evenly spaced points covering `[0, 1]`, endpoints included.
    pub fn unit_grid(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidSpec(format!(
                "grid needs at least 2 points, got {size}"
            )));
        }
        let step = 1.0 / (size - 1) as f64;
        let coords = (0..size).map(|i| i as f64 * step).collect();
        Ok(Self {
            dim: 1,
            coords,
            neighbors: chain_neighbors(size),
        })
    }

    /// `count` arms at coordinates `0, 1, ..., count - 1` with no neighbourhood
    /// structure (every arm is its own mode).
    pub fn arms(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidSpec("need at least one arm".into()));
        }
        Ok(Self {
            dim: 1,
            coords: (0..count).map(|i| i as f64).collect(),
            neighbors: vec![Vec::new(); count],
        })
    }

    /// Arbitrary point set. Neighbours are all pairs within the largest
    /// nearest-neighbour distance, which reduces to axis neighbours on a
    /// regular grid and to adjacent points on a sorted 1-D set.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidInput("empty candidate list".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidInput("zero-dimensional candidates".into()));
        }
        for p in points {
            if p.len() != dim {
                return Err(Error::InvalidInput("candidates have mixed dimensions".into()));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite candidate coordinate".into()));
            }
        }
        let n = points.len();
        let coords: Vec<f64> = points.iter().flatten().copied().collect();
        let mut domain = Self {
            dim,
            coords,
            neighbors: vec![Vec::new(); n],
        };
        if n > 1 {
            let mut radius2: f64 = 0.0;
            for i in 0..n {
                let nn = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| sq_dist(domain.point(i), domain.point(j)))
                    .fold(f64::INFINITY, f64::min);
                radius2 = radius2.max(nn);
            }
            let cutoff = radius2 * (1.0 + 1e-9);
            for i in 0..n {
                for j in 0..n {
                    if i != j && sq_dist(domain.point(i), domain.point(j)) <= cutoff {
                        domain.neighbors[i].push(j);
                    }
                }
            }
        }
        Ok(domain)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.point(i), self.point(j)).sqrt()
    }
}

fn chain_neighbors(n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let mut v = Vec::with_capacity(2);
            if i > 0 {
                v.push(i - 1);
            }
            if i + 1 < n {
                v.push(i + 1);
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_grid_spans_interval() {
        let d = Domain::unit_grid(1000).unwrap();
        assert_eq!(d.len(), 1000);
        assert_eq!(d.point(0), &[0.0]);
        assert!((d.point(999)[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.neighbors(0), &[1]);
        assert_eq!(d.neighbors(5), &[4, 6]);
        assert!(Domain::unit_grid(1).is_err());
    }

    #[test]
    fn regular_2d_grid_uses_axis_neighbors() {
        let mut pts = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                pts.push(vec![i as f64 * 0.5, j as f64 * 0.5]);
            }
        }
        let d = Domain::from_points(&pts).unwrap();
        assert_eq!(d.dim(), 2);
        // centre point has four axis neighbours
        let mut n = d.neighbors(4).to_vec();
        n.sort();
        assert_eq!(n, vec![1, 3, 5, 7]);
        assert_eq!(d.neighbors(0).len(), 2);
    }

    #[test]
    fn arms_have_no_neighbors() {
        let d = Domain::arms(3).unwrap();
        assert!(d.neighbors(1).is_empty());
        assert_eq!(d.point(2), &[2.0]);
    }

    #[test]
    fn rejects_mixed_dimensions() {
        assert!(Domain::from_points(&[vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(Domain::from_points(&[]).is_err());
    }
}
