//! Time-varying GP posterior from sparse observations.
//!
//! With observations `(x_i, y_i, h(i))` and a forgetting rate `eps`, the
//! posterior used to act at round `now + 1` is
//!
//! ```text
//! mean(x) = k~(x)^T (K o D + s2 I)^-1 y
//! var(x)  = k(x, x) - k~(x)^T (K o D + s2 I)^-1 k~(x)
//! D[i][j] = (1 - eps)^(|h(i) - h(j)| / 2)
//! k~(x)_i = k(x_i, x) * (1 - eps)^((now + 1 - h(i)) / 2)
//! ```
//!
//! [`posterior`] evaluates this directly with a full factorization.
//! [`OnlineTvGp`] maintains the same quantities incrementally over a fixed
//! candidate domain, which is what the agents use every round.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::kernel::CompositeKernel;

/// Jitter values tried in order when a factorization fails.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: Vec<f64>,
    pub value: f64,
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    observations: Vec<Observation>,
    noise_variance: f64,
}

impl ObservationSet {
    pub fn new(noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        Ok(Self {
            observations: Vec::new(),
            noise_variance,
        })
    }

    /// Appends an observation; rounds must be strictly increasing.
    pub fn push(&mut self, point: Vec<f64>, value: f64, round: u64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite observation {value}")));
        }
        if round == 0 {
            return Err(Error::InvalidInput("rounds are 1-based".into()));
        }
        if let Some(last) = self.observations.last() {
            if round <= last.round {
                return Err(Error::InvalidInput(format!(
                    "observation round {round} not after previous round {}",
                    last.round
                )));
            }
            if point.len() != last.point.len() {
                return Err(Error::InvalidInput("observation dimension changed".into()));
            }
        }
        self.observations.push(Observation { point, value, round });
        Ok(())
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn last_round(&self) -> Option<u64> {
        self.observations.last().map(|o| o.round)
    }
}

/// Per-candidate posterior mean and standard deviation for acting at `round + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub round: u64,
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl PosteriorSummary {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.stddevs[i] * self.stddevs[i]
    }

    /// Writes `candidate,mean,stddev` rows for the first coordinate of each point.
    pub fn write_csv<W: Write>(&self, domain: &Domain, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["candidate", "mean", "stddev"])?;
        for (i, p) in domain.points().enumerate() {
            w.write_record([
                format_point(p),
                self.means[i].to_string(),
                self.stddevs[i].to_string(),
            ])?;
        }
        w.flush()
    }
}

pub(crate) fn format_point(p: &[f64]) -> String {
    p.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// A Cholesky factor together with the jitter that was needed to obtain it.
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Factorizes a symmetric positive definite matrix, escalating diagonal jitter
/// through [`JITTER_LADDER`] until every pivot is safely positive.
pub fn factorize(matrix: &DMatrix<f64>, context: &'static str) -> Result<Factor> {
    factorize_with(matrix, &JITTER_LADDER, context)
}

/// Like [`factorize`] with a caller-supplied jitter ladder.
pub fn factorize_with(matrix: &DMatrix<f64>, ladder: &[f64], context: &'static str) -> Result<Factor> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix is {}x{}, expected square",
            n,
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let diag = matrix.diagonal();
    let max_diag = diag.max();
    let min_diag = diag.min();
    let floor = f64::EPSILON * max_diag.abs().max(f64::MIN_POSITIVE);
    let mut last_pivot = f64::NAN;
    for &jitter in ladder {
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            let l = chol.l_dirty();
            let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot.is_finite() && min_pivot > floor {
                return Ok(Factor { chol, jitter });
            }
            last_pivot = min_pivot;
        }
    }
    Err(Error::NumericalFailure {
        context,
        size: n,
        pivot: last_pivot,
        jitter: ladder.last().copied().unwrap_or(0.0),
        min_diag,
        max_diag,
    })
}

/// Solves `matrix * x = rhs` through a Cholesky factorization.
pub fn cholesky_solve(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if rhs.len() != matrix.nrows() {
        return Err(Error::InvalidInput(format!(
            "rhs length {} does not match matrix size {}",
            rhs.len(),
            matrix.nrows()
        )));
    }
    Ok(factorize(matrix, "cholesky_solve")?.solve(rhs))
}

/// Direct posterior over `candidates` for acting at round `now + 1`.
pub fn posterior(
    kernel: &CompositeKernel,
    obs: &ObservationSet,
    candidates: &Domain,
    now: u64,
) -> Result<PosteriorSummary> {
    kernel.validate()?;
    let prior = kernel.spatial.prior_variance();
    let g = candidates.len();
    if obs.is_empty() {
        return Ok(PosteriorSummary {
            round: now,
            means: vec![0.0; g],
            stddevs: vec![prior.sqrt(); g],
        });
    }
    if let Some(last) = obs.last_round() {
        if now < last {
            return Err(Error::InvalidInput(format!(
                "prediction round {now} precedes observation round {last}"
            )));
        }
    }
    let data = obs.observations();
    if data[0].point.len() != candidates.dim() {
        return Err(Error::InvalidInput("observation and candidate dimensions differ".into()));
    }
    let n = data.len();
    let temporal = kernel.temporal;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.spatial.k(&data[i].point, &data[j].point)
                * temporal.decay(data[i].round.abs_diff(data[j].round));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += obs.noise_variance();
    }
    let factor = factorize(&k, "posterior")?;
    let y = DVector::from_iterator(n, data.iter().map(|o| o.value));
    let alpha = factor.solve(&y);
    let l = factor.l();
    let d: Vec<f64> = data.iter().map(|o| temporal.decay(now + 1 - o.round)).collect();

    let mut means = Vec::with_capacity(g);
    let mut stddevs = Vec::with_capacity(g);
    let mut cross = DVector::zeros(n);
    for x in candidates.points() {
        for (i, o) in data.iter().enumerate() {
            cross[i] = kernel.spatial.k(&o.point, x) * d[i];
        }
        means.push(cross.dot(&alpha));
        let v = l
            .solve_lower_triangular(&cross)
            .expect("cholesky factor has a positive diagonal");
        let var = kernel.spatial.k(x, x) - v.dot(&v);
        stddevs.push(var.max(0.0).sqrt());
    }
    Ok(PosteriorSummary {
        round: now,
        means,
        stddevs,
    })
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    index: usize,
    value: f64,
    round: u64,
}

/// Incrementally updated TV-GP posterior over a fixed candidate domain.
///
/// Holds the growing Cholesky factor `L` of `K o D + s2 I`, the whitened targets
/// `a = L^-1 y`, and the whitened cross-covariances `V = L^-1 k~(x)` for every
/// candidate referenced at the last observation round. Later prediction rounds
/// only rescale `V` by a common decay factor, so each observation costs
/// `O(n^2 + n * |domain|)` and each prediction `O(|domain|)`.
#[derive(Debug, Clone)]
pub struct OnlineTvGp {
    kernel: CompositeKernel,
    noise_variance: f64,
    domain: Arc<Domain>,
    max_history: Option<usize>,
    entries: Vec<Entry>,
    l_rows: Vec<Vec<f64>>,
    whitened_y: Vec<f64>,
    // raw rows; true V = scale * raw
    v_raw: Vec<Vec<f64>>,
    scale: f64,
    mean_acc: Vec<f64>,
    sq_acc: Vec<f64>,
    jitter_level: usize,
}

impl OnlineTvGp {
    pub fn new(
        kernel: CompositeKernel,
        noise_variance: f64,
        domain: Arc<Domain>,
        max_history: Option<usize>,
    ) -> Result<Self> {
        kernel.validate()?;
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        if max_history == Some(0) {
            return Err(Error::InvalidSpec("max_history must be at least 1".into()));
        }
        let g = domain.len();
        Ok(Self {
            kernel,
            noise_variance,
            domain,
            max_history,
            entries: Vec::new(),
            l_rows: Vec::new(),
            whitened_y: Vec::new(),
            v_raw: Vec::new(),
            scale: 1.0,
            mean_acc: vec![0.0; g],
            sq_acc: vec![0.0; g],
            jitter_level: 0,
        })
    }

    pub fn kernel(&self) -> &CompositeKernel {
        &self.kernel
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        JITTER_LADDER[self.jitter_level]
    }

    pub fn last_round(&self) -> Option<u64> {
        self.entries.last().map(|e| e.round)
    }

    /// The observations as an [`ObservationSet`] with explicit points.
    pub fn observation_set(&self) -> ObservationSet {
        let mut set = ObservationSet::new(self.noise_variance).expect("validated noise");
        for e in &self.entries {
            set.push(self.domain.point(e.index).to_vec(), e.value, e.round)
                .expect("entries are validated on insertion");
        }
        set
    }

    /// `(candidate index, value, round)` for every observation, oldest first.
    pub fn history(&self) -> impl Iterator<Item = (usize, f64, u64)> + '_ {
        self.entries.iter().map(|e| (e.index, e.value, e.round))
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.reset_factor();
        self.jitter_level = 0;
    }

    fn reset_factor(&mut self) {
        self.l_rows.clear();
        self.whitened_y.clear();
        self.v_raw.clear();
        self.scale = 1.0;
        self.mean_acc.iter_mut().for_each(|v| *v = 0.0);
        self.sq_acc.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `(domain[index], value)` observed at `round`.
    pub fn observe(&mut self, index: usize, value: f64, round: u64) -> Result<()> {
        if index >= self.domain.len() {
            return Err(Error::InvalidInput(format!(
                "candidate index {index} out of range (domain has {})",
                self.domain.len()
            )));
        }
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite observation {value}")));
        }
        if round == 0 {
            return Err(Error::InvalidInput("rounds are 1-based".into()));
        }
        if let Some(last) = self.last_round() {
            if round <= last {
                return Err(Error::InvalidInput(format!(
                    "observation round {round} not after previous round {last}"
                )));
            }
        }
        let entry = Entry { index, value, round };
        self.entries.push(entry);
        let over_cap = self.max_history.is_some_and(|cap| self.entries.len() > cap);
        if over_cap {
            let cap = self.max_history.unwrap_or(usize::MAX);
            let excess = self.entries.len() - cap;
            self.entries.drain(..excess);
            return self.rebuild();
        }
        if self.append(entry).is_err() {
            self.escalate()?;
        }
        Ok(())
    }

    fn escalate(&mut self) -> Result<()> {
        loop {
            if self.jitter_level + 1 >= JITTER_LADDER.len() {
                let size = self.entries.len();
                let diag = self.kernel.spatial.prior_variance() + self.noise_variance;
                // leave the model usable without the offending observation
                self.entries.pop();
                let _ = self.rebuild_at_current();
                return Err(Error::NumericalFailure {
                    context: "online posterior update",
                    size,
                    pivot: f64::NAN,
                    jitter: self.jitter(),
                    min_diag: diag,
                    max_diag: diag,
                });
            }
            self.jitter_level += 1;
            if self.rebuild_at_current().is_ok() {
                return Ok(());
            }
        }
    }

    fn rebuild(&mut self) -> Result<()> {
        if self.rebuild_at_current().is_err() {
            self.escalate()?;
        }
        Ok(())
    }

    fn rebuild_at_current(&mut self) -> std::result::Result<(), ()> {
        self.reset_factor();
        let entries = self.entries.clone();
        for e in entries {
            self.append(e)?;
        }
        Ok(())
    }

    /// Extends the factorization by the last entry; `Err` on a non-positive pivot.
    fn append(&mut self, e: Entry) -> std::result::Result<(), ()> {
        let n = self.l_rows.len();
        let spatial = self.kernel.spatial;
        let temporal = self.kernel.temporal;
        let domain = Arc::clone(&self.domain);
        let xn = domain.point(e.index);

        if let Some(prev) = n.checked_sub(1).map(|i| self.entries[i].round) {
            self.scale *= temporal.decay(e.round - prev);
            if self.scale < 1e-60 {
                self.fold_scale();
            }
        }

        // new row of L by forward substitution
        let mut row = Vec::with_capacity(n + 1);
        for i in 0..n {
            let ei = self.entries[i];
            let kij = spatial.k(xn, domain.point(ei.index)) * temporal.decay(e.round - ei.round);
            let li = &self.l_rows[i];
            let s: f64 = li[..i].iter().zip(&row).map(|(a, b)| a * b).sum();
            row.push((kij - s) / li[i]);
        }
        let diag = spatial.k(xn, xn) + self.noise_variance + self.jitter();
        let pivot2 = diag - row.iter().map(|v| v * v).sum::<f64>();
        if !(pivot2.is_finite() && pivot2 > f64::EPSILON * diag) {
            return Err(());
        }
        let lnn = pivot2.sqrt();
        let a_n = (e.value - row.iter().zip(&self.whitened_y).map(|(a, b)| a * b).sum::<f64>()) / lnn;

        // new whitened cross-covariance row, referenced at this round
        let lead = temporal.decay(1) / self.scale;
        let g = domain.len();
        let mut v_new: Vec<f64> = (0..g)
            .map(|j| spatial.k(xn, domain.point(j)) * lead)
            .collect();
        for (lij, vi) in row.iter().zip(&self.v_raw) {
            if *lij != 0.0 {
                for (vn, v) in v_new.iter_mut().zip(vi) {
                    *vn -= lij * v;
                }
            }
        }
        let inv = 1.0 / lnn;
        for j in 0..g {
            let v = v_new[j] * inv;
            v_new[j] = v;
            self.mean_acc[j] += v * a_n;
            self.sq_acc[j] += v * v;
        }

        row.push(lnn);
        self.l_rows.push(row);
        self.whitened_y.push(a_n);
        self.v_raw.push(v_new);
        Ok(())
    }

    fn fold_scale(&mut self) {
        let s = self.scale;
        for row in &mut self.v_raw {
            row.iter_mut().for_each(|v| *v *= s);
        }
        self.mean_acc.iter_mut().for_each(|v| *v *= s);
        self.sq_acc.iter_mut().for_each(|v| *v *= s * s);
        self.scale = 1.0;
    }

    /// Posterior for acting at round `now + 1`.
    pub fn predict(&self, now: u64) -> Result<PosteriorSummary> {
        let prior = self.kernel.spatial.prior_variance();
        let g = self.domain.len();
        let Some(last) = self.last_round() else {
            return Ok(PosteriorSummary {
                round: now,
                means: vec![0.0; g],
                stddevs: vec![prior.sqrt(); g],
            });
        };
        if now < last {
            return Err(Error::InvalidInput(format!(
                "prediction round {now} precedes observation round {last}"
            )));
        }
        let c = self.scale * self.kernel.temporal.decay(now - last);
        let means = self.mean_acc.iter().map(|m| c * m).collect();
        let stddevs = self
            .sq_acc
            .iter()
            .map(|q| (prior - c * c * q).max(0.0).sqrt())
            .collect();
        Ok(PosteriorSummary {
            round: now,
            means,
            stddevs,
        })
    }
}
