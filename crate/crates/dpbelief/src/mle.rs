//! Private distributed maximum-likelihood estimation by belief exchange.
//!
//! Each of K independent rounds perturbs every agent's log-likelihoods once
//! with Laplace noise, then runs T noise-free exchange steps
//! ψ_i ← ψ_i + Σ_j a_ij ψ_j followed by normalisation. Rounds are combined by
//! arithmetic or geometric averaging (AM/GM) or by counting how often each
//! state clears a belief cutoff (two-threshold).
//!
//! Everything runs on log-beliefs; the multiplicative form underflows after a
//! handful of steps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Network;
use crate::models::{log_likelihood_matrix, Constants, SignalModel};
use crate::numeric::{log_threshold, logsumexp, normalize_log, threshold, total_variation};
use crate::privacy::laplace;
use crate::rng::{Purpose, StreamKey, Streams};

/// Slack when comparing round frequencies against rational thresholds.
const FREQ_TOL: f64 = 1e-12;

/// Error targets and privacy budget for the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleTargets {
    pub epsilon: f64,
    /// Allowed probability of returning a non-maximiser (Type I).
    pub alpha: f64,
    /// Required probability of returning every maximiser; 1 − beta is the
    /// Type II budget.
    pub beta: f64,
    /// Number of maximisers when known (synthetic runs); the round counts
    /// fall back to the |Θ|-based bound otherwise.
    pub theta_star_size: Option<usize>,
}

impl MleTargets {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

/// User overrides for schedule quantities normally derived from the targets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOverrides {
    pub rounds: Option<usize>,
    pub iterations: Option<usize>,
    pub rho_am: Option<f64>,
    pub rho_gm: Option<f64>,
    /// Log-belief cutoff for both two-threshold belief cutoffs.
    pub rho_threshold: Option<f64>,
    /// Laplace scale; 0 disables noise.
    pub noise_scale: Option<f64>,
}

/// Frequency thresholds of the two-threshold estimator. Unset values take
/// the defaults described on [`compute_threshold_schedule`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub pi1: Option<f64>,
    pub pi2: Option<f64>,
    /// Use one frequency threshold and one belief cutoff for both sets, which
    /// then coincide (exact recovery mode).
    pub single: bool,
}

/// Resolved two-threshold parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub q1: f64,
    pub q2: f64,
    pub pi1: f64,
    pub pi2: f64,
    /// Frequency threshold (1 + π₁)q₁ of the low-Type-I set.
    pub tau1: f64,
    /// Frequency threshold (1 − π₂)q₂ of the low-Type-II set.
    pub tau2: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Belief cutoffs 1/(1 + e^ϱ).
    pub cutoff1: f64,
    pub cutoff2: f64,
    pub single: bool,
}

/// Rounds, iterations, noise and thresholds for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleSchedule {
    pub rounds: usize,
    /// Iterations actually run: the larger requirement of the estimators.
    pub iterations: usize,
    pub iterations_am: usize,
    pub iterations_gm: usize,
    /// Laplace scale per (agent, state, round).
    pub noise_scale: f64,
    pub rho_am: f64,
    pub rho_gm: f64,
    pub tau_am: f64,
    pub tau_gm: f64,
    pub threshold: Option<ThresholdParams>,
}

impl MleSchedule {
    /// A hand-built schedule, mainly for tests and noise-free comparisons.
    pub fn fixed(rounds: usize, iterations: usize, noise_scale: f64, rho: f64) -> Result<Self> {
        if rounds == 0 || iterations == 0 {
            return Err(invalid("rounds and iterations must be at least 1"));
        }
        if !(noise_scale >= 0.0) || !(rho > 0.0) {
            return Err(invalid("noise scale must be nonnegative and rho positive"));
        }
        Ok(MleSchedule {
            rounds,
            iterations,
            iterations_am: iterations,
            iterations_gm: iterations,
            noise_scale,
            rho_am: rho,
            rho_gm: rho,
            tau_am: threshold(rho),
            tau_gm: threshold(rho),
            threshold: None,
        })
    }

    /// Attach two-threshold parameters to a fixed schedule.
    pub fn with_threshold(mut self, params: ThresholdParams) -> Self {
        self.threshold = Some(params);
        self
    }
}

/// Inputs shared by the iteration and threshold formulas.
struct Spectral {
    n: f64,
    states: f64,
    /// ln(nΓ + V) with V = n√2·b.
    log_spread: f64,
    l: f64,
    a: f64,
}

impl Spectral {
    fn new(net: &Network, num_states: usize, constants: &Constants, noise_scale: f64) -> Result<Self> {
        if !(constants.l > 0.0) {
            return Err(Error::NotIdentifiable);
        }
        let a = net.slem_lazy();
        if a >= 1.0 {
            return Err(Error::Config("lazy weight matrix has slem 1".into()));
        }
        let n = net.n() as f64;
        let v = n * std::f64::consts::SQRT_2 * noise_scale;
        Ok(Spectral {
            n,
            states: num_states as f64,
            log_spread: (n * constants.gamma + v).ln(),
            l: constants.l,
            a,
        })
    }

    /// ln(|Θ|²(n − 1)(nΓ + V)) minus ln of `denominator`; −∞ for one agent.
    fn log_numerator(&self, log_denominator: f64) -> f64 {
        if self.n <= 1.0 {
            return f64::NEG_INFINITY;
        }
        2.0 * self.states.ln() + (self.n - 1.0).ln() + self.log_spread - log_denominator
    }

    /// ϱ making both iteration requirements equal, given ln of the constant
    /// C in the consensus term ln(C/ϱ)/ln(1/a).
    fn optimal_rho(&self, log_c: f64) -> f64 {
        if log_c == f64::NEG_INFINITY {
            // Single agent: no consensus term, any positive cutoff works.
            return 1.0;
        }
        if self.a <= 0.0 {
            // Limit a → 0 of the closed form.
            return self.l / (2.0 * self.n);
        }
        let ln2 = std::f64::consts::LN_2;
        let inv_a = -self.a.ln();
        let denom = ln2 + inv_a;
        ((ln2 * log_c + inv_a * (self.l / (2.0 * self.n)).ln()) / denom).exp()
    }

    /// max{ln(2ϱn/l)/ln 2, ln(C/ϱ)/ln(1/a)}, at least 1, rounded up.
    fn iterations(&self, rho: f64, log_c: f64) -> usize {
        let first = (2.0 * rho * self.n / self.l).ln() / std::f64::consts::LN_2;
        let second = if self.a <= 0.0 || log_c == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            (log_c - rho.ln()) / (-self.a.ln())
        };
        ceil_at_least_one(first.max(second))
    }
}

fn ceil_at_least_one(x: f64) -> usize {
    if !x.is_finite() || x <= 1.0 {
        1
    } else {
        x.ceil() as usize
    }
}

fn validate_rho(rho: f64, name: &str) -> Result<f64> {
    if rho > 0.0 && rho.is_finite() {
        Ok(rho)
    } else {
        Err(Error::Config(format!("{name} must be positive, got {rho}")))
    }
}

fn noise_scale_for(constants: &Constants, rounds: usize, states: usize, epsilon: f64, overrides: &ScheduleOverrides) -> Result<f64> {
    match overrides.noise_scale {
        Some(b) if b >= 0.0 && b.is_finite() => Ok(b),
        Some(b) => Err(Error::Config(format!("noise scale must be nonnegative, got {b}"))),
        None => Ok(constants.delta * rounds as f64 * states as f64 / epsilon),
    }
}

/// (|Θ*|, |∁Θ*|) from the targets, or None when unknown.
fn split_sizes(targets: &MleTargets, num_states: usize) -> Result<Option<(f64, f64)>> {
    match targets.theta_star_size {
        None => Ok(None),
        Some(s) if s >= 1 && s < num_states => Ok(Some((s as f64, (num_states - s) as f64))),
        Some(s) => Err(Error::Config(format!(
            "maximiser count must lie in [1, {}), got {s}",
            num_states
        ))),
    }
}

/// Schedule of the AM/GM estimator.
///
/// Rounds: K = ⌈max{|Θ*| ln(|∁Θ*|/α), |∁Θ*| ln(|Θ*|/(1−β))}⌉, or
/// ⌈|Θ| ln(|Θ|/min{α, 1−β})⌉ when |Θ*| is unknown. Noise scale
/// b = ΔK|Θ|/ε. Each estimator's cutoff ϱ defaults to the value equalising
/// the two iteration requirements; iterations are the larger of the two
/// estimators' requirements.
pub fn compute_mle_schedule(
    targets: &MleTargets,
    constants: &Constants,
    net: &Network,
    num_states: usize,
    overrides: &ScheduleOverrides,
) -> Result<MleSchedule> {
    targets.validate()?;
    if num_states < 2 {
        return Err(Error::Config("need at least two states".into()));
    }
    let miss = 1.0 - targets.beta;
    let rounds = match overrides.rounds {
        Some(0) => return Err(Error::Config("rounds override must be at least 1".into())),
        Some(k) => k,
        None => {
            let k = match split_sizes(targets, num_states)? {
                Some((star, comp)) => (star * (comp / targets.alpha).ln()).max(comp * (star / miss).ln()),
                None => {
                    let m = num_states as f64;
                    m * (m / targets.alpha.min(miss)).ln()
                }
            };
            ceil_at_least_one(k)
        }
    };
    let noise_scale = noise_scale_for(constants, rounds, num_states, targets.epsilon, overrides)?;
    let sp = Spectral::new(net, num_states, constants, noise_scale)?;
    let k = rounds as f64;

    let log_c_gm = sp.log_numerator((2.0 * targets.alpha * k.sqrt()).ln());
    let log_c_am = sp.log_numerator((2.0 * (1.0 / miss).ln() / k).ln());
    let rho_gm = validate_rho(overrides.rho_gm.unwrap_or_else(|| sp.optimal_rho(log_c_gm)), "rho_gm")?;
    let rho_am = validate_rho(overrides.rho_am.unwrap_or_else(|| sp.optimal_rho(log_c_am)), "rho_am")?;
    let iterations_gm = sp.iterations(rho_gm, log_c_gm);
    let iterations_am = sp.iterations(rho_am, log_c_am);
    let iterations = match overrides.iterations {
        Some(0) => return Err(Error::Config("iterations override must be at least 1".into())),
        Some(t) => t,
        None => iterations_am.max(iterations_gm),
    };
    Ok(MleSchedule {
        rounds,
        iterations,
        iterations_am,
        iterations_gm,
        noise_scale,
        rho_am,
        rho_gm,
        tau_am: threshold(rho_am),
        tau_gm: threshold(rho_gm),
        threshold: None,
    })
}

/// Schedule of the two-threshold estimator.
///
/// Defaults: with p₁ = 1 − 1/|Θ*| and p₂ = 1/|∁Θ*| (|Θ*| = 1 when unknown),
/// q₁ = max{p₁, q_f} and q₂ = min{p₂, 1 − q_f} where q_f = min{α, 1−β}/2
/// keeps both inside (0, 1). In single mode π₂ is chosen so the two
/// frequency thresholds meet halfway between q₁ and q₂. Otherwise both π
/// default to 1/2. Rounds follow the Chernoff requirements
/// ln(|∁Θ*|/α)/(2π₁²) and ln(|Θ*|/(1−β))/(2π₂²), with |Θ| in place of both
/// counts in single mode or when |Θ*| is unknown.
pub fn compute_threshold_schedule(
    targets: &MleTargets,
    constants: &Constants,
    net: &Network,
    num_states: usize,
    spec: &ThresholdSpec,
    overrides: &ScheduleOverrides,
) -> Result<MleSchedule> {
    targets.validate()?;
    if num_states < 2 {
        return Err(Error::Config("need at least two states".into()));
    }
    let miss = 1.0 - targets.beta;
    let sizes = split_sizes(targets, num_states)?;
    let (star, comp) = sizes.unwrap_or((1.0, (num_states - 1) as f64));
    let floor = targets.alpha.min(miss) / 2.0;
    let q1 = spec.q1.unwrap_or_else(|| (1.0 - 1.0 / star).max(floor));
    let q2 = spec.q2.unwrap_or_else(|| (1.0 / comp).min(1.0 - floor));
    for (name, q) in [("q1", q1), ("q2", q2)] {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0, 1), got {q}")));
        }
    }
    let (pi1, pi2) = if spec.single {
        if q2 <= q1 {
            return Err(Error::Config(format!(
                "single-threshold mode needs q2 > q1, got q1 = {q1}, q2 = {q2}"
            )));
        }
        let pi2 = spec.pi2.unwrap_or(1.0 - (q1 + q2) / (2.0 * q2));
        let pi1 = (1.0 - pi2) * q2 / q1 - 1.0;
        (pi1, pi2)
    } else {
        (spec.pi1.unwrap_or(0.5), spec.pi2.unwrap_or(0.5))
    };
    if !(pi1 > 0.0) || !(pi2 > 0.0) {
        return Err(Error::Config(format!("pi1 and pi2 must be positive, got {pi1}, {pi2}")));
    }
    let tau1 = (1.0 + pi1) * q1;
    let tau2 = (1.0 - pi2) * q2;
    // Inflated/deflated thresholds must stay meaningful, except for the
    // infinite limits where the sets degenerate to ∅ or Θ.
    if (pi1.is_finite() && tau1 >= 1.0 + FREQ_TOL) || (pi2.is_finite() && tau2 <= 0.0) {
        return Err(Error::Config(format!(
            "frequency thresholds outside (0, 1): tau1 = {tau1}, tau2 = {tau2}"
        )));
    }

    let rounds = match overrides.rounds {
        Some(0) => return Err(Error::Config("rounds override must be at least 1".into())),
        Some(k) => k,
        None => {
            let m = num_states as f64;
            let (c1, c2) = match sizes {
                Some(_) if !spec.single => (comp, star),
                _ => (m, m),
            };
            let k1 = (c1 / targets.alpha).ln() / (2.0 * pi1 * pi1);
            let k2 = (c2 / miss).ln() / (2.0 * pi2 * pi2);
            ceil_at_least_one(k1.max(k2))
        }
    };
    let noise_scale = noise_scale_for(constants, rounds, num_states, targets.epsilon, overrides)?;
    let sp = Spectral::new(net, num_states, constants, noise_scale)?;
    let sqrt_k = (rounds as f64).sqrt();

    // The optimal cutoffs carry a √K that the iteration bounds do not.
    let log_c1 = sp.log_numerator((2.0 * q1).ln());
    let log_c2 = sp.log_numerator((2.0 * (1.0 - q2)).ln());
    let mut rho1 = sp.optimal_rho(log_c1 - sqrt_k.ln());
    let mut rho2 = sp.optimal_rho(log_c2 - sqrt_k.ln());
    if spec.single {
        let r = rho1.max(rho2);
        rho1 = r;
        rho2 = r;
    }
    if let Some(r) = overrides.rho_threshold {
        rho1 = validate_rho(r, "rho_threshold")?;
        rho2 = rho1;
    }
    let t1 = sp.iterations(rho1, log_c1);
    let t2 = sp.iterations(rho2, log_c2);
    let iterations = match overrides.iterations {
        Some(0) => return Err(Error::Config("iterations override must be at least 1".into())),
        Some(t) => t,
        None => t1.max(t2),
    };
    let params = ThresholdParams {
        q1,
        q2,
        pi1,
        pi2,
        tau1,
        tau2,
        rho1,
        rho2,
        cutoff1: threshold(rho1),
        cutoff2: threshold(rho2),
        single: spec.single,
    };
    Ok(MleSchedule {
        rounds,
        iterations,
        iterations_am: t2,
        iterations_gm: t1,
        noise_scale,
        rho_am: rho2,
        rho_gm: rho1,
        tau_am: threshold(rho2),
        tau_gm: threshold(rho1),
        threshold: Some(params),
    })
}

/// Whether the fraction f* = |Θ*|/|Θ| of maximising states is separated
/// enough for a single threshold to recover Θ* exactly.
pub fn separability_check(num_states: usize, f_star: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&f_star) {
        return Err(invalid(format!("f* must lie in [0, 1], got {f_star}")));
    }
    if num_states <= 4 {
        return Ok(true);
    }
    let m = num_states as f64;
    let half_width = 0.5 * ((m - 4.0) / m).sqrt();
    Ok(f_star < 0.5 - half_width || f_star > 0.5 + half_width)
}

/// Log-beliefs of every (round, agent, state) at every step 0..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefTrajectory {
    pub rounds: usize,
    pub agents: usize,
    pub states: usize,
    pub steps: usize,
    data: Vec<f64>,
}

impl BeliefTrajectory {
    fn new(rounds: usize, agents: usize, states: usize, steps: usize) -> Self {
        BeliefTrajectory {
            rounds,
            agents,
            states,
            steps,
            data: vec![0.0; rounds * agents * states * steps],
        }
    }

    fn index(&self, round: usize, agent: usize, state: usize, t: usize) -> usize {
        ((round * self.steps + t) * self.agents + agent) * self.states + state
    }

    pub fn log_belief(&self, round: usize, agent: usize, state: usize, t: usize) -> f64 {
        self.data[self.index(round, agent, state, t)]
    }

    fn record(&mut self, round: usize, t: usize, log_beliefs: &[Vec<f64>]) {
        for (i, row) in log_beliefs.iter().enumerate() {
            for (s, &v) in row.iter().enumerate() {
                let idx = self.index(round, i, s, t);
                self.data[idx] = v;
            }
        }
    }

    /// Agent beliefs averaged over rounds at step t (the AM estimator's
    /// trajectory).
    pub fn round_average(&self, agent: usize, t: usize) -> Vec<f64> {
        (0..self.states)
            .map(|s| {
                (0..self.rounds).map(|k| self.log_belief(k, agent, s, t).exp()).sum::<f64>() / self.rounds as f64
            })
            .collect()
    }
}

/// Outcome of the two-threshold aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    /// N¹ per agent and state: fraction of rounds with belief > cutoff1.
    pub freq1: Vec<Vec<f64>>,
    pub freq2: Vec<Vec<f64>>,
    /// {s : N¹(s) ≥ τ₁} per agent; aims at Θ̂ ⊆ Θ*.
    pub sets1: Vec<Vec<usize>>,
    /// {s : N²(s) ≥ τ₂} per agent; aims at Θ* ⊆ Θ̂.
    pub sets2: Vec<Vec<usize>>,
}

/// Output of a private MLE run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub schedule: MleSchedule,
    /// Terminal log-beliefs indexed [round][agent][state].
    pub terminal: Vec<Vec<Vec<f64>>>,
    /// log ν^AM per agent and state.
    pub log_am: Vec<Vec<f64>>,
    /// log ν^GM per agent and state.
    pub log_gm: Vec<Vec<f64>>,
    pub am_sets: Vec<Vec<usize>>,
    pub gm_sets: Vec<Vec<usize>>,
    pub threshold: Option<ThresholdOutcome>,
    /// Largest |log Σ ν| seen after any normalisation.
    pub max_residual: f64,
    pub trajectory: Option<BeliefTrajectory>,
}

impl MleResult {
    /// True when every agent's GM set is inside `theta_star`.
    pub fn gm_within(&self, theta_star: &[usize]) -> bool {
        self.gm_sets.iter().all(|set| set.iter().all(|s| theta_star.contains(s)))
    }

    /// True when every agent's AM set contains `theta_star`.
    pub fn am_covers(&self, theta_star: &[usize]) -> bool {
        self.am_sets.iter().all(|set| theta_star.iter().all(|s| set.contains(s)))
    }
}

/// Extra outputs a run may record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub trajectory: bool,
}

fn check_log_gamma(log_gamma: &[Vec<f64>], net: &Network) -> Result<usize> {
    if log_gamma.len() != net.n() {
        return Err(invalid(format!(
            "{} agents in the network but {} likelihood rows",
            net.n(),
            log_gamma.len()
        )));
    }
    let m = log_gamma.first().map_or(0, Vec::len);
    if m < 1 || log_gamma.iter().any(|row| row.len() != m) {
        return Err(invalid("every agent needs one log-likelihood per state"));
    }
    if log_gamma.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite log-likelihood".into()));
    }
    Ok(m)
}

/// One synchronous exchange step: ψ_i ← ψ_i + Σ_j a_ij ψ_j, normalised.
/// Returns the largest normalisation residual.
fn exchange_step(net: &Network, current: &[Vec<f64>], next: &mut [Vec<f64>], self_weight: f64) -> Result<f64> {
    let m = current[0].len();
    let mut worst = 0.0f64;
    for (i, out) in next.iter_mut().enumerate() {
        let row = net.row(i);
        for s in 0..m {
            let mut acc = self_weight * current[i][s];
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    acc += w * current[j][s];
                }
            }
            out[s] = acc;
        }
        let residual = normalize_log(out);
        if !residual.is_finite() || out.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numerical(format!("log-belief of agent {i} is not finite")));
        }
        worst = worst.max(residual.abs());
    }
    Ok(worst)
}

/// Run `steps` exchange steps from already-normalised log-beliefs.
/// `self_weight` is 1 for the lazy (A + I) dynamics of estimation and 0 for
/// the plain A dynamics.
fn iterate(
    net: &Network,
    mut beliefs: Vec<Vec<f64>>,
    steps: usize,
    self_weight: f64,
    mut on_step: impl FnMut(usize, &[Vec<f64>]),
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut scratch = beliefs.clone();
    let mut worst = 0.0f64;
    on_step(0, &beliefs);
    for t in 1..=steps {
        worst = worst.max(exchange_step(net, &beliefs, &mut scratch, self_weight)?);
        std::mem::swap(&mut beliefs, &mut scratch);
        on_step(t, &beliefs);
    }
    Ok((beliefs, worst))
}

fn normalised(log_values: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut worst = 0.0f64;
    let mut out = log_values.to_vec();
    for row in out.iter_mut() {
        let r = normalize_log(row);
        if !r.is_finite() {
            return Err(Error::Numerical("initial beliefs not finite".into()));
        }
        worst = worst.max(r.abs());
    }
    Ok((out, worst))
}

fn set_at(log_values: &[f64], log_tau: f64) -> Vec<usize> {
    (0..log_values.len()).filter(|&s| log_values[s] >= log_tau).collect()
}

type Matrix = Vec<Vec<f64>>;

/// Terminal beliefs per round, worst residual, optional trajectory.
type Rounds = (Vec<Vec<Vec<f64>>>, f64, Option<BeliefTrajectory>);

/// K private rounds from log γ. Shared by the AM/GM and two-threshold runs.
fn private_rounds(
    log_gamma: &[Vec<f64>],
    net: &Network,
    schedule: &MleSchedule,
    streams: &Streams,
    options: RunOptions,
) -> Result<Rounds> {
    let m = check_log_gamma(log_gamma, net)?;
    let n = net.n();
    let mut trajectory = options
        .trajectory
        .then(|| BeliefTrajectory::new(schedule.rounds, n, m, schedule.iterations + 1));
    let mut terminal = Vec::with_capacity(schedule.rounds);
    let mut worst = 0.0f64;
    for k in 0..schedule.rounds {
        let noisy: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..m)
                    .map(|s| {
                        let mut rng = streams.rng(Purpose::Noise, StreamKey::agent(i).with_round(k).with_state(s));
                        log_gamma[i][s] + laplace(schedule.noise_scale, &mut rng)
                    })
                    .collect()
            })
            .collect();
        let (init, r0) = normalised(&noisy)?;
        let (fin, r) = iterate(net, init, schedule.iterations, 1.0, |t, b| {
            if let Some(tr) = trajectory.as_mut() {
                tr.record(k, t, b);
            }
        })?;
        worst = worst.max(r0).max(r);
        terminal.push(fin);
    }
    Ok((terminal, worst, trajectory))
}

/// log ν^AM and log ν^GM per agent from terminal round beliefs.
fn aggregate(terminal: &[Vec<Vec<f64>>]) -> Result<(Matrix, Matrix, f64)> {
    let k = terminal.len() as f64;
    let n = terminal[0].len();
    let m = terminal[0][0].len();
    let mut log_am = Vec::with_capacity(n);
    let mut log_gm = Vec::with_capacity(n);
    let mut worst = 0.0f64;
    for i in 0..n {
        let am: Vec<f64> = (0..m)
            .map(|s| {
                let col: Vec<f64> = terminal.iter().map(|round| round[i][s]).collect();
                logsumexp(&col) - k.ln()
            })
            .collect();
        let mut gm: Vec<f64> = (0..m).map(|s| terminal.iter().map(|round| round[i][s]).sum::<f64>() / k).collect();
        let r = normalize_log(&mut gm);
        if !r.is_finite() {
            return Err(Error::Numerical("geometric mean not finite".into()));
        }
        worst = worst.max(r.abs()).max(logsumexp(&am).abs());
        log_am.push(am);
        log_gm.push(gm);
    }
    Ok((log_am, log_gm, worst))
}

/// AM/GM estimator (and, when the schedule carries them, the two-threshold
/// sets) from a matrix of log-likelihoods log γ[agent][state].
pub fn mle_from_log_likelihoods(
    log_gamma: &[Vec<f64>],
    net: &Network,
    schedule: &MleSchedule,
    streams: &Streams,
    options: RunOptions,
) -> Result<MleResult> {
    let (terminal, r_rounds, trajectory) = private_rounds(log_gamma, net, schedule, streams, options)?;
    let (log_am, log_gm, r_agg) = aggregate(&terminal)?;
    let am_sets = log_am.iter().map(|row| set_at(row, log_threshold(schedule.rho_am))).collect();
    let gm_sets = log_gm.iter().map(|row| set_at(row, log_threshold(schedule.rho_gm))).collect();
    let threshold = schedule.threshold.map(|p| threshold_sets(&terminal, &p));
    Ok(MleResult {
        schedule: schedule.clone(),
        terminal,
        log_am,
        log_gm,
        am_sets,
        gm_sets,
        threshold,
        max_residual: r_rounds.max(r_agg),
        trajectory,
    })
}

fn threshold_sets(terminal: &[Vec<Vec<f64>>], p: &ThresholdParams) -> ThresholdOutcome {
    let k = terminal.len() as f64;
    let n = terminal[0].len();
    let m = terminal[0][0].len();
    let freq = |log_cut: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..m)
                    .map(|s| terminal.iter().filter(|round| round[i][s] > log_cut).count() as f64 / k)
                    .collect()
            })
            .collect()
    };
    let freq1 = freq(log_threshold(p.rho1));
    let freq2 = freq(log_threshold(p.rho2));
    let pick = |f: &[Vec<f64>], tau: f64| -> Vec<Vec<usize>> {
        f.iter()
            .map(|row| (0..m).filter(|&s| row[s] >= tau - FREQ_TOL).collect())
            .collect()
    };
    let sets1 = pick(&freq1, p.tau1);
    let sets2 = pick(&freq2, p.tau2);
    ThresholdOutcome { freq1, freq2, sets1, sets2 }
}

/// AM/GM private estimation from models and per-agent datasets.
pub fn run_mle_am_gm<M: SignalModel>(
    models: &[M],
    datasets: &[Vec<M::Record>],
    net: &Network,
    schedule: &MleSchedule,
    streams: &Streams,
    options: RunOptions,
) -> Result<MleResult> {
    let log_gamma = log_likelihood_matrix(models, datasets)?;
    mle_from_log_likelihoods(&log_gamma, net, schedule, streams, options)
}

/// Two-threshold private estimation. The schedule must carry threshold
/// parameters.
pub fn run_mle_two_threshold<M: SignalModel>(
    models: &[M],
    datasets: &[Vec<M::Record>],
    net: &Network,
    schedule: &MleSchedule,
    streams: &Streams,
    options: RunOptions,
) -> Result<MleResult> {
    if schedule.threshold.is_none() {
        return Err(Error::Config("two-threshold run needs threshold parameters".into()));
    }
    run_mle_am_gm(models, datasets, net, schedule, streams, options)
}

/// Output of the non-private baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonPrivateResult {
    /// Terminal log-beliefs per agent and state.
    pub log_beliefs: Vec<Vec<f64>>,
    /// {s : μ(s) ≥ 1/(1 + e^ϱ)} per agent.
    pub sets: Vec<Vec<usize>>,
    pub max_residual: f64,
    /// Log-beliefs per step, [t][agent][state], when requested.
    pub trajectory: Option<Vec<Vec<Vec<f64>>>>,
}

/// Noise-free single-round exchange from log γ.
pub fn nonprivate_from_log_likelihoods(
    log_gamma: &[Vec<f64>],
    net: &Network,
    iterations: usize,
    rho: f64,
    options: RunOptions,
) -> Result<NonPrivateResult> {
    check_log_gamma(log_gamma, net)?;
    validate_rho(rho, "rho")?;
    let (init, r0) = normalised(log_gamma)?;
    let mut traj = options.trajectory.then(Vec::new);
    let (fin, r) = iterate(net, init, iterations, 1.0, |_, b| {
        if let Some(tr) = traj.as_mut() {
            tr.push(b.to_vec());
        }
    })?;
    let sets = fin.iter().map(|row| set_at(row, log_threshold(rho))).collect();
    Ok(NonPrivateResult { log_beliefs: fin, sets, max_residual: r0.max(r), trajectory: traj })
}

/// Non-private baseline from models and datasets.
pub fn run_mle_nonprivate<M: SignalModel>(
    models: &[M],
    datasets: &[Vec<M::Record>],
    net: &Network,
    iterations: usize,
    rho: f64,
    options: RunOptions,
) -> Result<NonPrivateResult> {
    let log_gamma = log_likelihood_matrix(models, datasets)?;
    nonprivate_from_log_likelihoods(&log_gamma, net, iterations, rho, options)
}

/// Mean over agents of TVD(round-averaged private belief, non-private
/// belief) at every step both runs share.
pub fn tvd_series(private: &BeliefTrajectory, baseline: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let steps = private.steps.min(baseline.len());
    (0..steps)
        .map(|t| {
            (0..private.agents)
                .map(|i| {
                    let p = private.round_average(i, t);
                    let q: Vec<f64> = baseline[t][i].iter().map(|v| v.exp()).collect();
                    total_variation(&p, &q)
                })
                .sum::<f64>()
                / private.agents as f64
        })
        .collect()
}
