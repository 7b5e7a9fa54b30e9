//! Time-varying Bayesian optimization with costly feedback.
//!
//! The crate provides a space-time Gaussian-process posterior that works from
//! sparse observations, the CE-GP-UCB agent with its query rules, bandit
//! baselines, synthetic environments, an experiment harness and a line-based
//! tuner protocol.

pub mod baselines;
pub mod domain;
pub mod environment;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod strategy;
pub mod tuner;
pub mod tvgp;

pub use domain::Domain;
pub use error::{Error, Result};
pub use kernel::{CompositeKernel, SpaceTimePoint, SpatialFamily, SpatialKernel, TemporalKernel};
pub use strategy::{CeGpUcb, GpAgentConfig, QueryDecision, QueryRule};
pub use tvgp::{posterior, Observation, ObservationSet, OnlineTvGp, PosteriorSummary};
