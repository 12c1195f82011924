//! Private distributed learning from intermittent signal streams.
//!
//! At every step each agent receives a random number of fresh signals,
//! perturbs their log-likelihoods with new Laplace noise and folds them into
//! the weighted geometric average of its neighbours' beliefs:
//! log ν_i,t = log σ_i,t + Σ_j a_ij log ν_j,t−1 − normaliser.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Network;
use crate::models::{Constants, SignalModel};
use crate::numeric::normalize_log;
use crate::privacy::laplace;
use crate::rng::{Purpose, StreamKey, Streams};

/// How many signals each agent receives per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "per_agent")]
pub enum Arrivals {
    /// Exactly this many signals every step.
    Fixed(Vec<usize>),
    /// Poisson counts with these means.
    Poisson(Vec<f64>),
}

/// Signal streams of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub arrivals: Arrivals,
    /// Index of the state generating the signals.
    pub true_state: usize,
}

impl StreamConfig {
    pub fn agents(&self) -> usize {
        match &self.arrivals {
            Arrivals::Fixed(v) => v.len(),
            Arrivals::Poisson(v) => v.len(),
        }
    }

    /// Mean arrivals ξ_i.
    pub fn means(&self) -> Vec<f64> {
        match &self.arrivals {
            Arrivals::Fixed(v) => v.iter().map(|&c| c as f64).collect(),
            Arrivals::Poisson(v) => v.clone(),
        }
    }

    /// Sum of arrival variances.
    pub fn variance_sum(&self) -> f64 {
        match &self.arrivals {
            Arrivals::Fixed(_) => 0.0,
            Arrivals::Poisson(v) => v.iter().sum(),
        }
    }

    fn validate(&self, agents: usize, states: usize) -> Result<()> {
        if self.agents() != agents {
            return Err(invalid(format!(
                "arrival spec covers {} agents, network has {agents}",
                self.agents()
            )));
        }
        if self.true_state >= states {
            return Err(invalid("true state out of range"));
        }
        if let Arrivals::Poisson(v) = &self.arrivals {
            if v.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
                return Err(invalid("Poisson means must be nonnegative"));
            }
        }
        Ok(())
    }

    fn count<R: Rng + ?Sized>(&self, agent: usize, rng: &mut R) -> usize {
        match &self.arrivals {
            Arrivals::Fixed(v) => v[agent],
            Arrivals::Poisson(v) if v[agent] == 0.0 => 0,
            Arrivals::Poisson(v) => Poisson::new(v[agent]).expect("validated mean").sample(rng) as usize,
        }
    }
}

/// Targets of the online schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineTargets {
    pub epsilon: f64,
    /// Allowed probability of a wrong final estimate.
    pub eta: f64,
    /// Scales the explicit iteration formula, whose constant is only proved
    /// up to the derivation.
    pub multiplier: f64,
}

/// Resolved online schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineSchedule {
    pub iterations: usize,
    /// Laplace scale per (agent, state, step).
    pub noise_scale: f64,
}

/// Iterations and noise for online learning:
///
/// T = m·[ln|Θ| + |Θ|(√2/n)(nQ + V)(max ξ + √(Ξ/η)) / (2η(1 − b))] / (l/n)
///
/// with V = n√2·Δ|Θ|/ε, b the slem of the weights and m the multiplier.
/// Γ plays no part here.
pub fn compute_online_schedule(
    targets: &OnlineTargets,
    constants: &Constants,
    net: &Network,
    num_states: usize,
    stream: &StreamConfig,
    iterations_override: Option<usize>,
    noise_override: Option<f64>,
) -> Result<OnlineSchedule> {
    if !(targets.epsilon > 0.0) || !targets.epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be positive, got {}", targets.epsilon)));
    }
    if !(targets.eta > 0.0 && targets.eta < 1.0) {
        return Err(Error::Config(format!("eta must lie in (0, 1), got {}", targets.eta)));
    }
    if !(targets.multiplier > 0.0) {
        return Err(Error::Config("iteration multiplier must be positive".into()));
    }
    if !(constants.l > 0.0) {
        return Err(Error::NotIdentifiable);
    }
    let b = net.slem();
    if net.is_periodic() || b >= 1.0 {
        return Err(Error::PeriodicChain(b));
    }
    let noise_scale = match noise_override {
        Some(s) if s >= 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::Config(format!("noise scale must be nonnegative, got {s}"))),
        None => constants.delta * num_states as f64 / targets.epsilon,
    };
    let n = net.n() as f64;
    let m = num_states as f64;
    let v = n * std::f64::consts::SQRT_2 * noise_scale;
    let max_xi = stream.means().into_iter().fold(0.0, f64::max);
    let spread = std::f64::consts::SQRT_2 / n * (n * constants.q + v) * (max_xi + (stream.variance_sum() / targets.eta).sqrt());
    let t = targets.multiplier * (m.ln() + m * spread / (2.0 * targets.eta * (1.0 - b))) / (constants.l / n);
    let iterations = match iterations_override {
        Some(0) => return Err(Error::Config("iterations override must be at least 1".into())),
        Some(t) => t,
        None if t.is_finite() => (t.ceil() as usize).max(1),
        None => return Err(Error::Numerical("online iteration count is not finite".into())),
    };
    Ok(OnlineSchedule { iterations, noise_scale })
}

/// Output of an online run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineResult {
    /// Final log-beliefs per agent and state.
    pub log_beliefs: Vec<Vec<f64>>,
    /// argmax of each agent's final belief, lowest index on ties.
    pub estimates: Vec<usize>,
    /// Every agent's estimate is the true state.
    pub success: bool,
    /// Per step t and state s: mean over agents of log(ν_t(s)/ν_t(true))/(t+1).
    pub ratio_series: Vec<Vec<f64>>,
    /// Per agent and state: running mean of the injected noise.
    pub noise_average: Vec<Vec<f64>>,
    pub max_residual: f64,
    /// Log-beliefs per step, [t][agent][state], when requested.
    pub trajectory: Option<Vec<Vec<Vec<f64>>>>,
}

impl OnlineResult {
    /// Final time-averaged log-belief ratios against the true state.
    pub fn final_ratios(&self) -> &[f64] {
        self.ratio_series.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// −(1/n) Σ_i ξ_i KL(ℓ_i(·|true) ‖ ℓ_i(·|s)) for every state s: the limit
/// of the time-averaged log-belief ratio log(ν(s)/ν(true))/t.
pub fn ratio_asymptote<M: SignalModel, R: Rng + ?Sized>(
    models: &[M],
    stream: &StreamConfig,
    mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let xi = stream.means();
    let states = models.first().map_or(0, |m| m.num_states());
    let n = models.len() as f64;
    (0..states)
        .map(|s| {
            if s == stream.true_state {
                return Ok(0.0);
            }
            let mut total = 0.0;
            for (md, &x) in models.iter().zip(&xi) {
                total += x * md.kl(stream.true_state, s, mc, rng)?.value;
            }
            Ok(-total / n)
        })
        .collect()
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (s, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = s;
        }
    }
    best
}

/// Private online learning for `iterations` steps after the initial one.
pub fn run_online<M: SignalModel>(
    models: &[M],
    stream: &StreamConfig,
    net: &Network,
    schedule: &OnlineSchedule,
    streams: &Streams,
    record_trajectory: bool,
) -> Result<OnlineResult> {
    let n = net.n();
    if models.len() != n {
        return Err(invalid(format!("{} models for {n} agents", models.len())));
    }
    let m = models[0].num_states();
    if models.iter().any(|md| md.num_states() != m) {
        return Err(invalid("all agents must share the state space"));
    }
    stream.validate(n, m)?;
    let truth = stream.true_state;

    let mut noise_sum = vec![vec![0.0; m]; n];
    // Noisy log-likelihoods of the batch received at step t.
    let batch = |t: usize, noise_sum: &mut Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|i| {
                let mut arr_rng = streams.rng(Purpose::Arrivals, StreamKey::agent(i).with_time(t));
                let count = stream.count(i, &mut arr_rng);
                let mut data_rng = streams.rng(Purpose::Data, StreamKey::agent(i).with_time(t));
                let data = models[i].sample(truth, count, &mut data_rng);
                (0..m)
                    .map(|s| {
                        let mut rng = streams.rng(Purpose::Noise, StreamKey::agent(i).with_state(s).with_time(t));
                        let d = laplace(schedule.noise_scale, &mut rng);
                        noise_sum[i][s] += d;
                        Ok(models[i].log_likelihood(&data, s)? + d)
                    })
                    .collect()
            })
            .collect()
    };

    let mut beliefs = batch(0, &mut noise_sum)?;
    let mut worst = 0.0f64;
    for row in beliefs.iter_mut() {
        worst = worst.max(normalize_log(row).abs());
    }
    let ratios = |b: &[Vec<f64>], t: usize| -> Vec<f64> {
        (0..m)
            .map(|s| b.iter().map(|row| row[s] - row[truth]).sum::<f64>() / (n as f64 * (t + 1) as f64))
            .collect()
    };
    let mut ratio_series = vec![ratios(&beliefs, 0)];
    let mut trajectory = record_trajectory.then(|| vec![beliefs.clone()]);
    let mut next = beliefs.clone();
    for t in 1..=schedule.iterations {
        let fresh = batch(t, &mut noise_sum)?;
        for i in 0..n {
            let row = net.row(i);
            for s in 0..m {
                let mut acc = fresh[i][s];
                for (j, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        acc += w * beliefs[j][s];
                    }
                }
                next[i][s] = acc;
            }
            let r = normalize_log(&mut next[i]);
            if !r.is_finite() || next[i].iter().any(|v| v.is_nan()) {
                return Err(Error::Numerical(format!("log-belief of agent {i} is not finite at step {t}")));
            }
            worst = worst.max(r.abs());
        }
        std::mem::swap(&mut beliefs, &mut next);
        ratio_series.push(ratios(&beliefs, t));
        if let Some(tr) = trajectory.as_mut() {
            tr.push(beliefs.clone());
        }
    }
    let steps = (schedule.iterations + 1) as f64;
    let noise_average = noise_sum.iter().map(|row| row.iter().map(|v| v / steps).collect()).collect();
    let estimates: Vec<usize> = beliefs.iter().map(|row| argmax_lowest(row)).collect();
    Ok(OnlineResult {
        success: estimates.iter().all(|&e| e == truth),
        estimates,
        log_beliefs: beliefs,
        ratio_series,
        noise_average,
        max_residual: worst,
        trajectory,
    })
}

/// Noise-free online learning on the same signal streams.
pub fn run_online_nonprivate<M: SignalModel>(
    models: &[M],
    stream: &StreamConfig,
    net: &Network,
    iterations: usize,
    streams: &Streams,
    record_trajectory: bool,
) -> Result<OnlineResult> {
    let schedule = OnlineSchedule { iterations, noise_scale: 0.0 };
    run_online(models, stream, net, &schedule, streams, record_trajectory)
}
