//! Noisy distributed first-order optimisation, for comparison with belief
//! exchange.
//!
//! Each agent keeps a scalar parameter, averages it with its neighbours,
//! takes a clipped gradient-ascent step on its local log-likelihood and adds
//! Laplace noise calibrated so the whole T-step trajectory is ε-DP:
//! θ_i,t = Σ_j a_ij θ_j,t−1 + η·Clip(∇ℓ_i(θ_i,t−1)) + Lap(2·B_x·B_θ·T·η/ε).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::graph::Network;
use crate::models::CoxData;
use crate::privacy::laplace;
use crate::rng::{Purpose, StreamKey, Streams};

/// A smooth one-dimensional log-likelihood.
pub trait ScalarObjective: Sync {
    fn value(&self, theta: f64) -> f64;
    fn gradient(&self, theta: f64) -> f64;
    /// Second derivative.
    fn curvature(&self, theta: f64) -> f64;
}

impl ScalarObjective for CoxData {
    fn value(&self, theta: f64) -> f64 {
        self.log_likelihood(theta)
    }

    fn gradient(&self, theta: f64) -> f64 {
        self.derivatives(theta).0
    }

    fn curvature(&self, theta: f64) -> f64 {
        self.derivatives(theta).1
    }
}

/// Settings of the first-order baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub epsilon: f64,
    pub b_theta: f64,
    pub b_x: f64,
    /// Ridge added to each local objective (0 for the plain likelihood).
    pub ridge: f64,
}

impl FirstOrderConfig {
    /// Defaults: learning rate 0.001, B_θ = B_x = 1, no ridge.
    pub fn new(iterations: usize, epsilon: f64) -> Self {
        FirstOrderConfig { learning_rate: 0.001, iterations, epsilon, b_theta: 1.0, b_x: 1.0, ridge: 0.0 }
    }

    pub fn clip_bound(&self) -> f64 {
        2.0 * self.b_theta * self.b_x
    }

    /// 2·B_x·B_θ·T·η/ε; zero when ε is infinite.
    pub fn noise_scale(&self) -> f64 {
        if self.epsilon.is_infinite() {
            return 0.0;
        }
        2.0 * self.b_x * self.b_theta * self.iterations as f64 * self.learning_rate / self.epsilon
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.b_theta > 0.0) || !(self.b_x > 0.0) {
            return Err(Error::Config("parameter and covariate bounds must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output of the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderResult {
    /// Final parameter per agent.
    pub thetas: Vec<f64>,
    /// Parameters per step, [t][agent], including the zero start.
    pub trajectory: Vec<Vec<f64>>,
    /// 1 − F_χ²₁(2[ℓ_i(θ_i,T) − ℓ_i(0)]) per agent.
    pub p_values: Vec<f64>,
    /// Some agent left |θ| ≤ 10·B_θ.
    pub diverged: bool,
    pub noise_scale: f64,
}

/// Clip to [−bound, bound] (the ℓ1 ball in one dimension).
pub fn clip(g: f64, bound: f64) -> f64 {
    g.clamp(-bound, bound)
}

/// Run the baseline from θ = 0 on every agent.
pub fn run_first_order<O: ScalarObjective>(
    objectives: &[O],
    net: &Network,
    config: &FirstOrderConfig,
    streams: &Streams,
) -> Result<FirstOrderResult> {
    config.validate()?;
    let n = net.n();
    if objectives.len() != n {
        return Err(invalid(format!("{} objectives for {n} agents", objectives.len())));
    }
    let scale = config.noise_scale();
    let bound = config.clip_bound();
    let mut theta = vec![0.0; n];
    let mut trajectory = vec![theta.clone()];
    let mut diverged = false;
    for t in 1..=config.iterations {
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let mixed: f64 = net.row(i).iter().zip(&theta).map(|(w, th)| w * th).sum();
                let g = objectives[i].gradient(theta[i]) - 2.0 * config.ridge * theta[i];
                let mut rng = streams.rng(Purpose::Noise, StreamKey::agent(i).with_time(t));
                mixed + config.learning_rate * clip(g, bound) + laplace(scale, &mut rng)
            })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            // The objective overflowed: stop at the last finite iterate.
            diverged = true;
            break;
        }
        diverged |= next.iter().any(|v| v.abs() > 10.0 * config.b_theta);
        theta = next;
        trajectory.push(theta.clone());
    }
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    let p_values = objectives
        .iter()
        .zip(&theta)
        .map(|(o, &th)| chi.sf((2.0 * (o.value(th) - o.value(0.0))).max(0.0)))
        .collect();
    Ok(FirstOrderResult { thetas: theta, trajectory, p_values, diverged, noise_scale: scale })
}

/// Belief over candidate values induced by a point estimate through a
/// Gaussian approximation of the likelihood: ∝ exp(−½·info·(c − estimate)²),
/// with `info` the observed information at the estimate.
pub fn induced_belief(candidates: &[f64], estimate: f64, info: f64) -> Vec<f64> {
    let info = info.max(0.0);
    let logs: Vec<f64> = candidates.iter().map(|c| -0.5 * info * (c - estimate).powi(2)).collect();
    let z = crate::numeric::logsumexp(&logs);
    logs.iter().map(|l| (l - z).exp()).collect()
}
