//! Distributed private hypothesis tests built on the GM estimator.
//!
//! Both tests run the GM estimator on a two-state space {null, alternative}
//! at Type I budget α/2 and rescale the terminal log-belief ratio by
//! n/2^(T−1), which makes it track twice the summed log-likelihood ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::graph::Network;
use crate::mle::{compute_mle_schedule, mle_from_log_likelihoods, MleResult, MleSchedule, MleTargets, RunOptions, ScheduleOverrides};
use crate::models::{cox_fit_mle, gamma_bound, Constants, CoxFit, SignalModel, SurvivalRecord};
use crate::privacy::{cox_sensitivity, laplace};
use crate::rng::Streams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFamily {
    /// Simple null against simple alternative.
    Simple,
    /// Generalised likelihood ratio with chi-square calibration.
    Composite,
}

/// Result of a distributed test at one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub threshold: f64,
    /// statistic > threshold.
    pub reject: bool,
    pub alpha: f64,
    pub family: TestFamily,
    pub agent: usize,
}

impl TestOutcome {
    fn new(statistic: f64, threshold: f64, alpha: f64, family: TestFamily, agent: usize) -> Self {
        TestOutcome { statistic, threshold, reject: statistic > threshold, alpha, family, agent }
    }
}

/// (n/2^(T−1))·log(ν^GM(1)/ν^GM(0)) at `agent`.
pub fn scaled_log_ratio(gm: &MleResult, agent: usize) -> Result<f64> {
    let row = gm.log_gm.get(agent).ok_or_else(|| invalid("agent out of range"))?;
    if row.len() != 2 {
        return Err(invalid(format!("tests need exactly two states, got {}", row.len())));
    }
    let n = gm.log_gm.len() as f64;
    let t = gm.schedule.iterations as f64;
    Ok(n * (row[1] - row[0]) / (t - 1.0).exp2())
}

/// Simple test: reject θ = 0 when the scaled GM log-belief ratio exceeds
/// ϱ_c − 1, where ϱ_c is the centralised likelihood-ratio cutoff at level α/2.
pub fn distributed_simple_test(gm: &MleResult, rho_c: f64, alpha: f64, agent: usize) -> Result<TestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    let statistic = scaled_log_ratio(gm, agent)?;
    Ok(TestOutcome::new(statistic, rho_c - 1.0, alpha, TestFamily::Simple, agent))
}

/// GM schedule for a two-state test at level α: Type I budget α/2, a single
/// maximiser and log-belief cutoff 1.
pub fn test_schedule(epsilon: f64, alpha: f64, constants: &Constants, net: &Network, overrides: &ScheduleOverrides) -> Result<MleSchedule> {
    let targets = MleTargets { epsilon, alpha: alpha / 2.0, beta: 1.0 - alpha / 2.0, theta_star_size: Some(1) };
    let mut ov = *overrides;
    ov.rho_gm = Some(ov.rho_gm.unwrap_or(1.0));
    compute_mle_schedule(&targets, constants, net, 2, &ov)
}

/// Upper `level`-quantile of 2Σ_i log(ℓ_i(S_i|1)/ℓ_i(S_i|0)) with S_i drawn
/// at state 0, by parametric bootstrap. `sizes[i]` is agent i's record count.
pub fn null_quantile<M: SignalModel, R: Rng + ?Sized>(
    models: &[M],
    sizes: &[usize],
    level: f64,
    mc: usize,
    rng: &mut R,
) -> Result<f64> {
    if models.len() != sizes.len() || models.is_empty() {
        return Err(invalid("one record count per agent is required"));
    }
    if !(level > 0.0 && level < 1.0) || mc == 0 {
        return Err(invalid("level must lie in (0, 1) and mc be positive"));
    }
    let mut draws = Vec::with_capacity(mc);
    for _ in 0..mc {
        let mut total = 0.0;
        for (md, &m) in models.iter().zip(sizes) {
            let data = md.sample(0, m, rng);
            total += md.log_likelihood(&data, 1)? - md.log_likelihood(&data, 0)?;
        }
        draws.push(2.0 * total);
    }
    Ok(upper_quantile(&mut draws, level))
}

fn upper_quantile(draws: &mut [f64], level: f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let idx = (((1.0 - level) * draws.len() as f64).ceil() as usize).clamp(1, draws.len()) - 1;
    draws[idx]
}

/// How the composite rejection threshold is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule")]
pub enum ThresholdRule {
    /// F⁻¹_χ²_n(1 − α/2) − 1. Ignores the privacy noise that the statistic
    /// carries, so it over-rejects once that noise is comparable to χ²_n.
    Wilks,
    /// (1 − α/2)-quantile of χ²_n plus the statistic's privacy noise
    /// 2·(1/K)Σ_kΣ_i (d_ik(1) − d_ik(0)), by Monte Carlo, minus 1.
    Calibrated { mc: usize, seed: u64 },
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Calibrated { mc: 20_000, seed: 0x5EED_C0DE }
    }
}

/// Settings of the composite Cox test of θ = 0 against |θ| ≤ b_theta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub epsilon: f64,
    pub alpha: f64,
    pub b_theta: f64,
    pub b_x: f64,
    /// Ridge used when fitting; the likelihood is evaluated unpenalised.
    pub ridge: f64,
    pub rule: ThresholdRule,
    pub overrides: ScheduleOverrides,
}

/// Outcome of the composite test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeOutcome {
    pub outcome: TestOutcome,
    /// Wilks threshold F⁻¹_χ²_n(1 − α/2) − 1, whatever rule decided.
    pub wilks_threshold: f64,
    /// Upper χ²_n tail at the statistic.
    pub p_value_wilks: f64,
    /// Share of calibration draws at or above statistic + 1 (calibrated
    /// rule only).
    pub p_value_calibrated: Option<f64>,
    /// Per-agent fits over the full interval.
    pub fits: Vec<CoxFit>,
    /// Centralised generalised likelihood-ratio statistic 2Σ_i(sup − null).
    pub centralized_statistic: f64,
    pub schedule: MleSchedule,
    pub max_residual: f64,
}

/// Per-agent log γ over {θ = 0, |θ| ≤ b_theta}: the partial log-likelihood
/// at 0 and its (ridge-fitted) supremum.
pub fn composite_log_likelihoods(
    datasets: &[Vec<SurvivalRecord>],
    b_theta: f64,
    ridge: f64,
) -> Result<(Vec<Vec<f64>>, Vec<CoxFit>)> {
    let mut rows = Vec::with_capacity(datasets.len());
    let mut fits = Vec::with_capacity(datasets.len());
    for (i, data) in datasets.iter().enumerate() {
        let fit = cox_fit_mle(data, b_theta, ridge)?;
        if fit.non_identifiable {
            return Err(Error::Invalid(format!("agent {i}: covariates identical, hazard ratio not identifiable")));
        }
        let null = crate::models::cox_partial_log_likelihood(data, 0.0).value;
        // The fitted θ maximises the penalised objective; guard against the
        // unpenalised value falling below the null value.
        rows.push(vec![null, fit.log_likelihood.max(null)]);
        fits.push(fit);
    }
    Ok((rows, fits))
}

/// Composite distributed test at every agent; returns agent 0's outcome
/// alongside diagnostics (all agents agree up to consensus error).
pub fn distributed_composite_test(
    datasets: &[Vec<SurvivalRecord>],
    net: &Network,
    spec: &CompositeSpec,
    streams: &Streams,
) -> Result<CompositeOutcome> {
    distributed_composite_test_with(datasets, net, spec, streams, None)
}

/// As [`distributed_composite_test`], reusing a calibration sample when it
/// matches the resolved schedule (it is redrawn otherwise).
pub fn distributed_composite_test_with(
    datasets: &[Vec<SurvivalRecord>],
    net: &Network,
    spec: &CompositeSpec,
    streams: &Streams,
    calibration: Option<&CalibrationSample>,
) -> Result<CompositeOutcome> {
    if datasets.len() != net.n() {
        return Err(invalid("one dataset per agent is required"));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }
    let (log_gamma, fits) = composite_log_likelihoods(datasets, spec.b_theta, spec.ridge)?;
    let schedule = composite_schedule(&log_gamma, net, spec)?;
    let gm = mle_from_log_likelihoods(&log_gamma, net, &schedule, streams, RunOptions::default())?;
    let statistic = scaled_log_ratio(&gm, 0)?;

    let n = net.n();
    let chi = ChiSquared::new(n as f64).map_err(|e| invalid(e.to_string()))?;
    let wilks_threshold = chi.inverse_cdf(1.0 - spec.alpha / 2.0) - 1.0;
    let p_value_wilks = chi.sf(statistic.max(0.0));
    let (threshold, p_value_calibrated) = match spec.rule {
        ThresholdRule::Wilks => (wilks_threshold, None),
        ThresholdRule::Calibrated { mc, seed } => {
            let fresh;
            let sample = match calibration {
                Some(c) if c.matches(n, schedule.rounds, schedule.noise_scale) => c,
                _ => {
                    fresh = CalibrationSample::draw(n, schedule.rounds, schedule.noise_scale, mc, seed)?;
                    &fresh
                }
            };
            (sample.threshold(spec.alpha) - 1.0, Some(sample.p_value(statistic + 1.0)))
        }
    };
    let centralized_statistic = 2.0 * log_gamma.iter().map(|r| r[1] - r[0]).sum::<f64>();
    Ok(CompositeOutcome {
        outcome: TestOutcome::new(statistic, threshold, spec.alpha, TestFamily::Composite, 0),
        wilks_threshold,
        p_value_wilks,
        p_value_calibrated,
        fits,
        centralized_statistic,
        schedule,
        max_residual: gm.max_residual,
    })
}

/// GM schedule of the composite test for the given log γ.
pub fn composite_schedule(log_gamma: &[Vec<f64>], net: &Network, spec: &CompositeSpec) -> Result<MleSchedule> {
    // The statistic only needs resolution 1, so the separation constant is 1.
    let constants = Constants {
        gamma: gamma_bound(log_gamma),
        l: 1.0,
        q: 0.0,
        delta: cox_sensitivity(spec.b_theta, spec.b_x)?,
    };
    test_schedule(spec.epsilon, spec.alpha, &constants, net, &spec.overrides)
}

/// Sorted draws of χ²_n + 2·(1/K)Σ_kΣ_i (d_ik(1) − d_ik(0)), d ~ Lap(scale):
/// the null law of the composite statistic plus one.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    agents: usize,
    rounds: usize,
    scale: f64,
    draws: Vec<f64>,
}

impl CalibrationSample {
    pub fn draw(agents: usize, rounds: usize, scale: f64, mc: usize, seed: u64) -> Result<Self> {
        if mc < 100 {
            return Err(Error::Config("calibration needs at least 100 draws".into()));
        }
        if rounds == 0 || agents == 0 {
            return Err(invalid("calibration needs at least one agent and one round"));
        }
        let chi = rand_distr::ChiSquared::new(agents as f64).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draws: Vec<f64> = (0..mc)
            .map(|_| {
                let mut noise = 0.0;
                for _ in 0..rounds * agents {
                    noise += laplace(scale, &mut rng) - laplace(scale, &mut rng);
                }
                rng.sample(chi) + 2.0 * noise / rounds as f64
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        Ok(CalibrationSample { agents, rounds, scale, draws })
    }

    pub fn matches(&self, agents: usize, rounds: usize, scale: f64) -> bool {
        self.agents == agents && self.rounds == rounds && self.scale == scale
    }

    /// Upper (α/2)-quantile.
    pub fn threshold(&self, alpha: f64) -> f64 {
        let len = self.draws.len();
        let idx = (((1.0 - alpha / 2.0) * len as f64).ceil() as usize).clamp(1, len) - 1;
        self.draws[idx]
    }

    /// Share of draws at or above `value`.
    pub fn p_value(&self, value: f64) -> f64 {
        let below = self.draws.partition_point(|&d| d < value);
        (self.draws.len() - below) as f64 / self.draws.len() as f64
    }
}
