//! Differentially private belief exchange over agent networks.
//!
//! Agents hold private datasets and a shared finite set of candidate states.
//! They perturb their log-likelihoods with Laplace noise once and then only
//! exchange beliefs, so every message is a post-processing of an ε-DP
//! release. The crate provides
//!
//! - [`graph`]: doubly stochastic weight matrices and their spectra,
//! - [`privacy`]: Laplace and randomized-response mechanisms, sensitivities,
//! - [`models`]: Bernoulli, categorical, Gaussian and Cox likelihoods,
//! - [`mle`]: AM/GM and two-threshold private estimation and their schedules,
//! - [`online`]: learning from intermittent signal streams,
//! - [`testing`]: distributed hypothesis tests, power analysis, lower bounds,
//! - [`baselines`]: a noisy first-order optimisation baseline,
//! - [`harness`]: configs, data loading, Monte Carlo runs and reports.

// `!(x > 0.0)` style checks deliberately reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod graph;
pub mod harness;
pub mod mle;
pub mod models;
pub mod numeric;
pub mod online;
pub mod privacy;
pub mod rng;
pub mod testing;

pub use error::{Error, Result};
