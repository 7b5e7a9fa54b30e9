//! Suggest/observe tuner over newline-delimited JSON.
//!
//! A client opens a session with `init`, then alternates `suggest` (which
//! returns the UCB choice and whether its evaluation is worth paying for) with
//! `observe` on rounds where feedback was requested. `snapshot` dumps the
//! posterior and query history; `close` ends the session. Every request carries
//! a session id and a strictly increasing sequence number, and every malformed
//! or out-of-order request is answered with an `error` message.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::kernel::{CompositeKernel, SpatialKernel, TemporalKernel};
use crate::strategy::{Acquisition, BetaSchedule, CeGpUcb, GpAgentConfig, QueryPolicySpec, QueryRule};

pub const DEFAULT_CLIP: [f64; 2] = [-2.0, 2.0];

/// One hyperparameter quantized into `steps` evenly spaced values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionRange {
    #[serde(default)]
    pub name: Option<String>,
    pub low: f64,
    pub high: f64,
    pub steps: usize,
    /// Values below the floor are excluded from the range.
    #[serde(default)]
    pub floor: Option<f64>,
}

impl DimensionRange {
    fn effective(&self) -> Result<(f64, f64)> {
        if !(self.low.is_finite() && self.high.is_finite() && self.high > self.low) {
            return Err(Error::InvalidSpec(format!(
                "range [{}, {}] must be finite and increasing",
                self.low, self.high
            )));
        }
        if self.steps < 2 {
            return Err(Error::InvalidSpec("a range needs at least 2 steps".into()));
        }
        let low = match self.floor {
            Some(f) if f >= self.high => {
                return Err(Error::InvalidSpec(format!("floor {f} leaves an empty range")));
            }
            Some(f) => self.low.max(f),
            None => self.low,
        };
        Ok((low, self.high))
    }
}

/// Session configuration carried by `init`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerInit {
    /// Explicit candidate configurations; mutually exclusive with `dimensions`.
    pub candidates: Option<Vec<Vec<f64>>>,
    /// Quantized ranges. When neither this nor `candidates` is given the
    /// grid is 101 points on [0, 1].
    pub dimensions: Option<Vec<DimensionRange>>,
    /// Per-dimension floors applied to explicit candidates.
    pub floors: Option<Vec<Option<f64>>>,
    pub kernel: SpatialKernel,
    pub epsilon: f64,
    pub noise_variance: f64,
    pub beta: BetaSchedule,
    pub acquisition: Acquisition,
    pub policy: QueryPolicySpec,
    pub clip_rewards: bool,
    pub clip_bounds: [f64; 2],
    pub max_history: Option<usize>,
    pub seed: u64,
}

impl Default for TunerInit {
    fn default() -> Self {
        Self {
            candidates: None,
            dimensions: None,
            floors: None,
            kernel: SpatialKernel::default(),
            epsilon: 0.01,
            noise_variance: 0.01,
            beta: BetaSchedule::default(),
            acquisition: Acquisition::Ucb,
            policy: QueryPolicySpec::new(QueryRule::ConfidenceRule { kappa: 0.9 }),
            clip_rewards: false,
            clip_bounds: DEFAULT_CLIP,
            max_history: None,
            seed: 0,
        }
    }
}

/// The candidate set in client units and normalized coordinates.
#[derive(Debug, Clone)]
pub struct CandidateGrid {
    pub configs: Vec<Vec<f64>>,
    pub domain: Arc<Domain>,
}

impl CandidateGrid {
    pub fn build(init: &TunerInit) -> Result<Self> {
        match (&init.candidates, &init.dimensions) {
            (Some(c), None) => Self::explicit(c, init.floors.as_deref()),
            (None, Some(d)) => Self::ranges(d),
            (None, None) => Self::ranges(&[DimensionRange {
                name: Some("x".into()),
                low: 0.0,
                high: 1.0,
                steps: 101,
                floor: None,
            }]),
            (Some(_), Some(_)) => Err(Error::InvalidSpec(
                "give exactly one of `candidates` or `dimensions`".into(),
            )),
        }
    }

    fn explicit(candidates: &[Vec<f64>], floors: Option<&[Option<f64>]>) -> Result<Self> {
        let dim = candidates.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidSpec("empty candidate list".into()));
        }
        if candidates.iter().any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidSpec("candidates must be finite with a common dimension".into()));
        }
        if floors.is_some_and(|f| f.len() != dim) {
            return Err(Error::InvalidSpec(format!("expected {dim} floors")));
        }
        let configs: Vec<Vec<f64>> = candidates
            .iter()
            .filter(|c| {
                floors.is_none_or(|f| c.iter().zip(f).all(|(v, fl)| fl.is_none_or(|fl| *v >= fl)))
            })
            .cloned()
            .collect();
        if configs.is_empty() {
            return Err(Error::InvalidSpec("floors exclude every candidate".into()));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for c in &configs {
            for d in 0..dim {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
        }
        let points: Vec<Vec<f64>> = configs
            .iter()
            .map(|c| {
                (0..dim)
                    .map(|d| if hi[d] > lo[d] { (c[d] - lo[d]) / (hi[d] - lo[d]) } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(Self {
            configs,
            domain: Arc::new(Domain::from_points(&points)?),
        })
    }

    fn ranges(dims: &[DimensionRange]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpec("no dimensions".into()));
        }
        let bounds: Vec<(f64, f64)> = dims.iter().map(DimensionRange::effective).collect::<Result<_>>()?;
        let total = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(d.steps));
        if total.is_none_or(|n| n > 200_000) {
            return Err(Error::InvalidSpec("candidate grid exceeds 200000 points".into()));
        }
        // first dimension varies slowest
        let mut units: Vec<Vec<f64>> = vec![Vec::new()];
        for d in dims {
            let step = 1.0 / (d.steps - 1) as f64;
            units = units
                .into_iter()
                .flat_map(|prefix| {
                    (0..d.steps).map(move |i| {
                        let mut p = prefix.clone();
                        p.push(i as f64 * step);
                        p
                    })
                })
                .collect();
        }
        let configs = units
            .iter()
            .map(|u| u.iter().zip(&bounds).map(|(v, (lo, hi))| lo + (hi - lo) * v).collect())
            .collect();
        let domain = if dims.len() == 1 {
            Domain::unit_grid(dims[0].steps)?
        } else {
            Domain::from_points(&units)?
        };
        Ok(Self {
            configs,
            domain: Arc::new(domain),
        })
    }
}

/// An open tuning session.
#[derive(Debug, Clone)]
pub struct TunerSession {
    init: TunerInit,
    grid: CandidateGrid,
    agent: CeGpUcb,
    /// Round of the latest suggest that asked for feedback and is still open.
    awaiting: Option<u64>,
    cost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub round: u64,
    pub index: usize,
    pub config: Vec<f64>,
    pub wants_feedback: bool,
    pub min_superiority: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub index: usize,
    pub config: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub round: u64,
    pub index: usize,
    pub config: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub round: u64,
    pub cost: u64,
    pub candidates: Vec<CandidateRow>,
    pub history: Vec<HistoryRow>,
}

/// Failure of a protocol operation with its wire error code.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolError {
    pub code: &'static str,
    pub message: String,
}

impl ProtocolError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for ProtocolError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidSpec(_) | Error::Config(_) => "invalid-config",
            Error::NumericalFailure { .. } => "numerical-failure",
            Error::Io { .. } => "io",
        };
        Self::new(code, e.to_string())
    }
}

impl TunerSession {
    pub fn new(init: TunerInit) -> Result<Self> {
        let grid = CandidateGrid::build(&init)?;
        if init.clip_rewards && !(init.clip_bounds[0] < init.clip_bounds[1]) {
            return Err(Error::InvalidSpec("clip bounds must be increasing".into()));
        }
        let config = GpAgentConfig {
            kernel: CompositeKernel::new(init.kernel, TemporalKernel::new(init.epsilon)?)?,
            noise_variance: init.noise_variance,
            beta: init.beta,
            acquisition: init.acquisition,
            policy: init.policy,
            reset_period: None,
            max_history: init.max_history,
        };
        let agent = CeGpUcb::new(config, Arc::clone(&grid.domain), init.seed)?;
        Ok(Self {
            init,
            grid,
            agent,
            awaiting: None,
            cost: 0,
        })
    }

    pub fn init(&self) -> &TunerInit {
        &self.init
    }

    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.grid.configs
    }

    pub fn round(&self) -> u64 {
        self.agent.round()
    }

    /// Accepted observations so far.
    pub fn cost(&self) -> u64 {
        self.cost
    }

    pub fn suggest(&mut self) -> Result<Suggestion> {
        let d = self.agent.decide()?;
        self.awaiting = d.queried.then_some(d.round);
        Ok(Suggestion {
            round: d.round,
            index: d.chosen,
            config: self.grid.configs[d.chosen].clone(),
            wants_feedback: d.queried,
            min_superiority: d.min_superiority,
        })
    }

    /// Returns the stored (possibly clipped) reward.
    pub fn observe(&mut self, round: u64, reward: f64) -> std::result::Result<f64, ProtocolError> {
        if !reward.is_finite() {
            return Err(ProtocolError::new("invalid-input", format!("reward must be finite, got {reward}")));
        }
        if round != self.agent.round() {
            return Err(ProtocolError::new(
                "stale-round",
                format!("observe for round {round} but the current round is {}", self.agent.round()),
            ));
        }
        if self.awaiting != Some(round) {
            return Err(ProtocolError::new(
                "feedback-not-requested",
                format!("round {round} did not request feedback or was already observed"),
            ));
        }
        let stored = if self.init.clip_rewards {
            reward.clamp(self.init.clip_bounds[0], self.init.clip_bounds[1])
        } else {
            reward
        };
        self.agent.feedback(stored)?;
        self.awaiting = None;
        self.cost += 1;
        Ok(stored)
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        let post = self.agent.posterior()?;
        let candidates = (0..post.len())
            .map(|i| CandidateRow {
                index: i,
                config: self.grid.configs[i].clone(),
                mean: post.means[i],
                stddev: post.stddevs[i],
            })
            .collect();
        let history = self
            .agent
            .model()
            .history()
            .map(|(index, reward, round)| HistoryRow {
                round,
                index,
                config: self.grid.configs[index].clone(),
                reward,
            })
            .collect();
        Ok(Snapshot {
            round: self.agent.round(),
            cost: self.cost,
            candidates,
            history,
        })
    }
}

/// A parsed client message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Init {
        session: String,
        seq: u64,
        #[serde(default)]
        config: TunerInit,
    },
    Suggest {
        session: String,
        seq: u64,
    },
    Observe {
        session: String,
        seq: u64,
        round: u64,
        reward: f64,
    },
    Snapshot {
        session: String,
        seq: u64,
    },
    Close {
        session: String,
        seq: u64,
    },
}

impl Request {
    pub fn session(&self) -> &str {
        match self {
            Request::Init { session, .. }
            | Request::Suggest { session, .. }
            | Request::Observe { session, .. }
            | Request::Snapshot { session, .. }
            | Request::Close { session, .. } => session,
        }
    }

    pub fn seq(&self) -> u64 {
        match self {
            Request::Init { seq, .. }
            | Request::Suggest { seq, .. }
            | Request::Observe { seq, .. }
            | Request::Snapshot { seq, .. }
            | Request::Close { seq, .. } => *seq,
        }
    }
}

/// A server message. Every response echoes the request's session and seq.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Response {
    Init {
        session: String,
        seq: u64,
        candidates: usize,
        dim: usize,
    },
    Suggest {
        session: String,
        seq: u64,
        #[serde(flatten)]
        suggestion: Suggestion,
    },
    Observe {
        session: String,
        seq: u64,
        round: u64,
        stored: f64,
        cost: u64,
    },
    Snapshot {
        session: String,
        seq: u64,
        #[serde(flatten)]
        snapshot: Snapshot,
    },
    Close {
        session: String,
        seq: u64,
        rounds: u64,
        cost: u64,
    },
    Error {
        session: Option<String>,
        seq: Option<u64>,
        code: String,
        message: String,
    },
}

struct Slot {
    last_seq: u64,
    session: TunerSession,
}

/// Routes requests to sessions. Requests within a session are handled
/// strictly in order.
#[derive(Default)]
pub struct TunerServer {
    sessions: BTreeMap<String, Slot>,
}

impl TunerServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session(&self, id: &str) -> Option<&TunerSession> {
        self.sessions.get(id).map(|s| &s.session)
    }

    pub fn handle(&mut self, req: Request) -> Response {
        let session = req.session().to_string();
        let seq = req.seq();
        let fail = |e: ProtocolError| Response::Error {
            session: Some(session.clone()),
            seq: Some(seq),
            code: e.code.to_string(),
            message: e.message,
        };
        match self.dispatch(req) {
            Ok(r) => r,
            Err(e) => fail(e),
        }
    }

    fn dispatch(&mut self, req: Request) -> std::result::Result<Response, ProtocolError> {
        if let Request::Init { session, seq, config } = req {
            if self.sessions.contains_key(&session) {
                return Err(ProtocolError::new(
                    "already-initialized",
                    format!("session {session:?} is already open"),
                ));
            }
            let s = TunerSession::new(config)?;
            let response = Response::Init {
                session: session.clone(),
                seq,
                candidates: s.candidates().len(),
                dim: s.candidates()[0].len(),
            };
            self.sessions.insert(session, Slot { last_seq: seq, session: s });
            return Ok(response);
        }
        let id = req.session().to_string();
        let seq = req.seq();
        let slot = self.sessions.get_mut(&id).ok_or_else(|| {
            ProtocolError::new("not-initialized", format!("session {id:?} has not been initialized"))
        })?;
        if seq <= slot.last_seq {
            return Err(ProtocolError::new(
                "sequence",
                format!("sequence number {seq} not above previous {}", slot.last_seq),
            ));
        }
        slot.last_seq = seq;
        let s = &mut slot.session;
        Ok(match req {
            Request::Init { .. } => unreachable!("handled above"),
            Request::Suggest { session, seq } => Response::Suggest {
                session,
                seq,
                suggestion: s.suggest()?,
            },
            Request::Observe {
                session,
                seq,
                round,
                reward,
            } => {
                let stored = s.observe(round, reward)?;
                Response::Observe {
                    session,
                    seq,
                    round,
                    stored,
                    cost: s.cost(),
                }
            }
            Request::Snapshot { session, seq } => Response::Snapshot {
                session,
                seq,
                snapshot: s.snapshot()?,
            },
            Request::Close { session, seq } => {
                let slot = self.sessions.remove(&session).expect("looked up above");
                Response::Close {
                    session,
                    seq,
                    rounds: slot.session.round(),
                    cost: slot.session.cost(),
                }
            }
        })
    }

    /// Handles one JSON line and returns the JSON response line (no newline).
    pub fn handle_line(&mut self, line: &str) -> String {
        let response = match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => {
                // recover identifiers where possible so the client can correlate
                let v: Option<Value> = serde_json::from_str(line).ok();
                let field = |k: &str| v.as_ref().and_then(|v| v.get(k)).cloned();
                Response::Error {
                    session: field("session").and_then(|s| s.as_str().map(str::to_string)),
                    seq: field("seq").and_then(|s| s.as_u64()),
                    code: "malformed".into(),
                    message: e.to_string(),
                }
            }
        };
        serde_json::to_string(&response).expect("responses always serialize")
    }
}

/// Serves requests line by line until end of input. Blank lines are ignored.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W) -> io::Result<()> {
    let mut server = TunerServer::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = server.handle_line(&line);
        output.write_all(reply.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SpatialFamily;

    fn two_arm(policy: QueryRule) -> TunerInit {
        TunerInit {
            candidates: Some(vec![vec![0.0], vec![1.0]]),
            dimensions: None,
            kernel: SpatialKernel::independent(1.0).unwrap(),
            policy: QueryPolicySpec::new(policy),
            ..TunerInit::default()
        }
    }

    #[test]
    fn first_round_requests_feedback() {
        let mut s = TunerSession::new(two_arm(QueryRule::ConfidenceRule { kappa: 0.6 })).unwrap();
        let g = s.suggest().unwrap();
        assert_eq!((g.round, g.index, g.wants_feedback), (1, 0, true));
        assert_eq!(g.min_superiority, 0.5);
    }

    #[test]
    fn single_candidate_never_asks() {
        let init = TunerInit {
            candidates: Some(vec![vec![3.0]]),
            dimensions: None,
            ..TunerInit::default()
        };
        let mut s = TunerSession::new(init).unwrap();
        for _ in 0..20 {
            assert!(!s.suggest().unwrap().wants_feedback);
        }
    }

    #[test]
    fn always_policy_asks_every_round() {
        let mut s = TunerSession::new(two_arm(QueryRule::Always)).unwrap();
        for t in 1..=10 {
            let g = s.suggest().unwrap();
            assert!(g.wants_feedback);
            s.observe(t, 0.1 * t as f64).unwrap();
        }
        assert_eq!(s.cost(), 10);
        assert_eq!(s.snapshot().unwrap().history.len(), 10);
    }

    #[test]
    fn observe_contract() {
        let mut s = TunerSession::new(two_arm(QueryRule::Always)).unwrap();
        s.suggest().unwrap();
        assert_eq!(s.observe(2, 1.0).unwrap_err().code, "stale-round");
        assert_eq!(s.observe(1, f64::NAN).unwrap_err().code, "invalid-input");
        s.observe(1, 1.0).unwrap();
        assert_eq!(s.observe(1, 1.0).unwrap_err().code, "feedback-not-requested");

        let mut never = TunerSession::new(two_arm(QueryRule::bernoulli_rate(0.0, 10))).unwrap();
        assert!(!never.suggest().unwrap().wants_feedback);
        assert_eq!(never.observe(1, 0.0).unwrap_err().code, "feedback-not-requested");
    }

    #[test]
    fn clipping() {
        let mut init = two_arm(QueryRule::Always);
        init.clip_rewards = true;
        let mut s = TunerSession::new(init).unwrap();
        s.suggest().unwrap();
        assert_eq!(s.observe(1, 5.0).unwrap(), 2.0);
        assert_eq!(s.snapshot().unwrap().history[0].reward, 2.0);
    }

    #[test]
    fn observation_moves_mean_toward_reward() {
        let mut s = TunerSession::new(two_arm(QueryRule::Always)).unwrap();
        let fresh = s.snapshot().unwrap();
        assert!(fresh.candidates.iter().all(|c| c.mean == 0.0));
        assert_eq!(fresh, s.snapshot().unwrap());
        let g = s.suggest().unwrap();
        s.observe(g.round, 1.0).unwrap();
        let snap = s.snapshot().unwrap();
        // one observation, independent kernel, eps = 0.01, sigma^2 = 0.01:
        // mean = d k / (k + s2) * y with d = (1 - eps)^(1/2) for the next round
        let d = 0.99f64.sqrt();
        let expect = d * 1.0 / 1.01;
        assert!((snap.candidates[g.index].mean - expect).abs() < 1e-12);
        assert_eq!(snap.candidates[1 - g.index].mean, 0.0);
    }

    #[test]
    fn grid_ranges_and_floors() {
        let init = TunerInit {
            dimensions: Some(vec![
                DimensionRange {
                    name: None,
                    low: 0.0,
                    high: 1.0,
                    steps: 3,
                    floor: Some(0.5),
                },
                DimensionRange {
                    name: None,
                    low: 10.0,
                    high: 20.0,
                    steps: 2,
                    floor: None,
                },
            ]),
            ..TunerInit::default()
        };
        let g = CandidateGrid::build(&init).unwrap();
        assert_eq!(
            g.configs,
            vec![
                vec![0.5, 10.0],
                vec![0.5, 20.0],
                vec![0.75, 10.0],
                vec![0.75, 20.0],
                vec![1.0, 10.0],
                vec![1.0, 20.0]
            ]
        );
        assert_eq!(g.domain.dim(), 2);
        assert_eq!(g.domain.point(5), &[1.0, 1.0]);

        let explicit = TunerInit {
            candidates: Some(vec![vec![0.1, 5.0], vec![0.6, 7.0], vec![0.9, 5.0]]),
            dimensions: None,
            floors: Some(vec![Some(0.5), None]),
            ..TunerInit::default()
        };
        let g = CandidateGrid::build(&explicit).unwrap();
        assert_eq!(g.configs.len(), 2);
        assert_eq!(g.domain.point(0), &[0.0, 1.0]);
    }

    #[test]
    fn one_dimensional_range_matches_unit_grid() {
        let init = TunerInit {
            dimensions: Some(vec![DimensionRange {
                name: None,
                low: 0.0,
                high: 1.0,
                steps: 1000,
                floor: None,
            }]),
            ..TunerInit::default()
        };
        let g = CandidateGrid::build(&init).unwrap();
        assert_eq!(*g.domain, Domain::unit_grid(1000).unwrap());
    }

    #[test]
    fn server_errors_are_structured() {
        let mut srv = TunerServer::new();
        let r: Value = serde_json::from_str(&srv.handle_line("{not json")).unwrap();
        assert_eq!(r["type"], "error");
        assert_eq!(r["code"], "malformed");

        let r: Value = serde_json::from_str(&srv.handle_line(r#"{"type":"suggest","session":"a","seq":1}"#)).unwrap();
        assert_eq!(r["code"], "not-initialized");
        assert_eq!(r["seq"], 1);

        let r: Value = serde_json::from_str(&srv.handle_line(r#"{"type":"fly","session":"a","seq":1}"#)).unwrap();
        assert_eq!(r["code"], "malformed");
        assert_eq!(r["session"], "a");

        let ok = srv.handle_line(r#"{"type":"init","session":"a","seq":1}"#);
        assert!(ok.contains(r#""type":"init""#), "{ok}");
        let r: Value = serde_json::from_str(&srv.handle_line(r#"{"type":"init","session":"a","seq":2}"#)).unwrap();
        assert_eq!(r["code"], "already-initialized");
        let r: Value = serde_json::from_str(&srv.handle_line(r#"{"type":"suggest","session":"a","seq":1}"#)).unwrap();
        assert_eq!(r["code"], "sequence");
        let r: Value = serde_json::from_str(
            &srv.handle_line(r#"{"type":"init","session":"b","seq":1,"config":{"kernel":{"family":"matern32","lengthscale":-1}}}"#),
        )
        .unwrap();
        assert_eq!(r["code"], "invalid-config");
        let r: Value = serde_json::from_str(&srv.handle_line(r#"{"type":"close","session":"a","seq":5}"#)).unwrap();
        assert_eq!(r["type"], "close");
        assert!(srv.session("a").is_none());
    }

    #[test]
    fn replayed_transcript_is_identical() {
        let script = [
            r#"{"type":"init","session":"s","seq":1,"config":{"epsilon":0.05,"seed":9}}"#,
            r#"{"type":"suggest","session":"s","seq":2}"#,
            r#"{"type":"observe","session":"s","seq":3,"round":1,"reward":0.25}"#,
            r#"{"type":"suggest","session":"s","seq":4}"#,
            r#"{"type":"snapshot","session":"s","seq":5}"#,
        ];
        let run = || {
            let mut srv = TunerServer::new();
            script.iter().map(|l| srv.handle_line(l)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kernel_family_names_parse() {
        let init: TunerInit = serde_json::from_str(
            r#"{"kernel":{"family":"squared-exponential","lengthscale":0.3,"amplitude":2.0}}"#,
        )
        .unwrap();
        assert_eq!(init.kernel.family, SpatialFamily::SquaredExponential);
    }
}
