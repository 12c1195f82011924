//! One-covariate Cox proportional hazards model.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{KlEstimate, SignalModel};
use crate::error::{invalid, Result};
use crate::numeric::log_add_exp;

/// Ridge penalty used when fitting, unless configured otherwise.
pub const DEFAULT_RIDGE: f64 = 0.05;

/// Baseline hazard of the synthetic generator, per day.
const BASE_HAZARD: f64 = 1.0 / 1000.0;

/// One patient: follow-up time in days, event indicator (1 = death observed,
/// 0 = censored) and a bounded covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: u8,
    pub covariate: f64,
}

/// Value of the log partial likelihood plus a flag for the degenerate case
/// where no record has an observed event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialLikelihood {
    pub value: f64,
    pub no_events: bool,
}

/// Records sorted by decreasing time, grouped by tied times, for O(m)
/// evaluation of the partial likelihood and its derivatives.
#[derive(Debug, Clone)]
pub struct CoxData {
    x: Vec<f64>,
    event: Vec<bool>,
    /// Half-open index ranges of tied times, latest time first.
    groups: Vec<(usize, usize)>,
}

impl CoxData {
    pub fn new(records: &[SurvivalRecord]) -> Self {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
        let x: Vec<f64> = order.iter().map(|&k| records[k].covariate).collect();
        let event: Vec<bool> = order.iter().map(|&k| records[k].event == 1).collect();
        let times: Vec<f64> = order.iter().map(|&k| records[k].time).collect();
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=times.len() {
            if k == times.len() || times[k] != times[start] {
                groups.push((start, k));
                start = k;
            }
        }
        CoxData { x, event, groups }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn has_events(&self) -> bool {
        self.event.iter().any(|&e| e)
    }

    pub fn covariates_identical(&self) -> bool {
        self.x.windows(2).all(|w| w[0] == w[1])
    }

    /// Σ_events [x_j θ − log Σ_{t_j' ≥ t_j} e^{x_j' θ}].
    pub fn log_likelihood(&self, theta: f64) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        let mut total = 0.0;
        for &(s, e) in &self.groups {
            for k in s..e {
                acc = log_add_exp(acc, self.x[k] * theta);
            }
            for k in s..e {
                if self.event[k] {
                    total += self.x[k] * theta - acc;
                }
            }
        }
        total
    }

    /// First and second derivatives in θ.
    pub fn derivatives(&self, theta: f64) -> (f64, f64) {
        let shift = self.x.iter().map(|x| x * theta).fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        let (mut grad, mut hess) = (0.0, 0.0);
        for &(s, e) in &self.groups {
            for k in s..e {
                let w = (self.x[k] * theta - shift).exp();
                s0 += w;
                s1 += w * self.x[k];
                s2 += w * self.x[k] * self.x[k];
            }
            let mean = s1 / s0;
            let second = s2 / s0;
            for k in s..e {
                if self.event[k] {
                    grad += self.x[k] - mean;
                    hess -= second - mean * mean;
                }
            }
        }
        (grad, hess)
    }
}

/// Log partial likelihood of the records at θ. Ties share one risk set.
pub fn cox_partial_log_likelihood(records: &[SurvivalRecord], theta: f64) -> PartialLikelihood {
    let data = CoxData::new(records);
    PartialLikelihood { value: data.log_likelihood(theta), no_events: !data.has_events() }
}

/// d/dθ of the log partial likelihood: Σ_events [x_j − risk-set mean of x].
pub fn cox_gradient(records: &[SurvivalRecord], theta: f64) -> f64 {
    CoxData::new(records).derivatives(theta).0
}

/// Result of a one-dimensional ridge-penalised fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub theta: f64,
    /// Unpenalised log partial likelihood at `theta`.
    pub log_likelihood: f64,
    /// All covariates equal: the likelihood is flat in θ.
    pub non_identifiable: bool,
    pub no_events: bool,
}

/// Maximise log PL(θ) − ridge·θ² over [−b_theta, b_theta].
///
/// The objective is concave, so its derivative is decreasing: the maximiser
/// is an endpoint when the derivative has one sign there, otherwise the
/// root is bracketed and bisected to 1e-10.
pub fn cox_fit_mle(records: &[SurvivalRecord], b_theta: f64, ridge: f64) -> Result<CoxFit> {
    if !(b_theta >= 0.0) || !(ridge >= 0.0) {
        return Err(invalid("b_theta and ridge must be nonnegative"));
    }
    let data = CoxData::new(records);
    let no_events = !data.has_events();
    if no_events || data.covariates_identical() {
        return Ok(CoxFit {
            theta: 0.0,
            log_likelihood: data.log_likelihood(0.0),
            non_identifiable: !no_events,
            no_events,
        });
    }
    let slope = |t: f64| data.derivatives(t).0 - 2.0 * ridge * t;
    let theta = if slope(-b_theta) <= 0.0 {
        -b_theta
    } else if slope(b_theta) >= 0.0 {
        b_theta
    } else {
        let (mut lo, mut hi) = (-b_theta, b_theta);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(CoxFit { theta, log_likelihood: data.log_likelihood(theta), non_identifiable: false, no_events })
}

/// Synthetic trial: covariate alternates 0/1, event times are exponential
/// with hazard BASE·exp(θ·x), and independent exponential censoring is tuned
/// so the expected censored fraction equals `censor_rate`.
pub fn synth_survival<R: Rng + ?Sized>(
    n_records: usize,
    theta_true: f64,
    censor_rate: f64,
    rng: &mut R,
) -> Result<Vec<SurvivalRecord>> {
    if !(0.0..1.0).contains(&censor_rate) {
        return Err(invalid(format!("censor rate must lie in [0, 1), got {censor_rate}")));
    }
    let hazards = [BASE_HAZARD, BASE_HAZARD * theta_true.exp()];
    let censor_hazard = if censor_rate == 0.0 {
        0.0
    } else {
        // Pr[C < T] = μ/(λ + μ) per group; average over the two groups.
        let rate = |mu: f64| 0.5 * hazards.iter().map(|l| mu / (l + mu)).sum::<f64>();
        let (mut lo, mut hi) = (0.0, 1.0);
        while rate(hi) < censor_rate {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rate(mid) < censor_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut out = Vec::with_capacity(n_records);
    for k in 0..n_records {
        let x = (k % 2) as f64;
        let event_time = Exp::new(hazards[k % 2]).expect("positive hazard").sample(rng);
        let censor_time = if censor_hazard > 0.0 {
            Exp::new(censor_hazard).expect("positive hazard").sample(rng)
        } else {
            f64::INFINITY
        };
        let (time, event) = if event_time <= censor_time { (event_time, 1) } else { (censor_time, 0) };
        out.push(SurvivalRecord { time: time.max(f64::MIN_POSITIVE), event, covariate: x });
    }
    Ok(out)
}

/// Cox model over a finite grid of log hazard ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub thetas: Vec<f64>,
    pub b_theta: f64,
    pub b_x: f64,
    /// Censoring used when sampling.
    pub censor_rate: f64,
    /// Dataset size used for Monte Carlo divergences: the partial likelihood
    /// is not a product over records, so per-record KL is estimated as the
    /// dataset-level log ratio divided by this size.
    pub reference_size: usize,
}

impl CoxModel {
    pub fn new(thetas: Vec<f64>, b_theta: f64, b_x: f64) -> Result<Self> {
        if thetas.iter().any(|t| t.abs() > b_theta + 1e-12) {
            return Err(invalid("every state must satisfy |θ| ≤ b_theta"));
        }
        if !(b_x > 0.0) {
            return Err(invalid("b_x must be positive"));
        }
        Ok(CoxModel { thetas, b_theta, b_x, censor_rate: 0.0, reference_size: 200 })
    }

    fn dataset_llr<R: Rng + ?Sized>(&self, a: usize, b: usize, reps: usize, rng: &mut R) -> Result<(f64, f64)> {
        let m = self.reference_size.max(2);
        let mut vals = Vec::with_capacity(reps);
        for _ in 0..reps {
            let data = CoxData::new(&synth_survival(m, self.thetas[a], self.censor_rate, rng)?);
            vals.push((data.log_likelihood(self.thetas[a]) - data.log_likelihood(self.thetas[b])) / m as f64);
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        Ok((mean, var))
    }
}

impl SignalModel for CoxModel {
    type Record = SurvivalRecord;

    fn num_states(&self) -> usize {
        self.thetas.len()
    }

    fn log_likelihood(&self, data: &[SurvivalRecord], state: usize) -> Result<f64> {
        Ok(cox_partial_log_likelihood(data, self.thetas[state]).value)
    }

    fn sample<R: Rng + ?Sized>(&self, state: usize, count: usize, rng: &mut R) -> Vec<SurvivalRecord> {
        synth_survival(count, self.thetas[state], self.censor_rate, rng).expect("validated censor rate")
    }

    fn sensitivity(&self, _state: usize) -> f64 {
        2.0 * self.b_theta * self.b_x
    }

    fn random_record<R: Rng + ?Sized>(&self, rng: &mut R) -> SurvivalRecord {
        SurvivalRecord {
            time: rng.random_range(1.0..3000.0),
            event: u8::from(rng.random::<bool>()),
            covariate: rng.random_range(-self.b_x..=self.b_x),
        }
    }

    fn kl<R: Rng + ?Sized>(&self, a: usize, b: usize, mc: usize, rng: &mut R) -> Result<KlEstimate> {
        let reps = (mc / self.reference_size.max(2)).max(2);
        let (mean, var) = self.dataset_llr(a, b, reps, rng)?;
        Ok(KlEstimate { value: mean, std_error: (var / reps as f64).sqrt(), exact: false })
    }

    fn llr_moments<R: Rng + ?Sized>(&self, a: usize, b: usize, mc: usize, rng: &mut R) -> Result<(f64, f64)> {
        let reps = (mc / self.reference_size.max(2)).max(2);
        let (mean, var) = self.dataset_llr(a, b, reps, rng)?;
        // Variance of a per-record mean scales like 1/m; undo it.
        Ok((mean, var * self.reference_size.max(2) as f64))
    }

    /// Replace, add or remove one patient, with times drawn inside the span
    /// of the observed follow-up.
    fn adjacent<R: Rng + ?Sized>(&self, data: &[SurvivalRecord], rng: &mut R) -> Vec<SurvivalRecord> {
        let mut out = data.to_vec();
        let (lo, hi) = data.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.time), hi.max(r.time)));
        let fresh = |rng: &mut R| {
            let (a, b) = if lo.is_finite() && hi > lo { (0.5 * lo, 1.5 * hi) } else { (1.0, 3000.0) };
            SurvivalRecord {
                time: rng.random_range(a..b),
                event: u8::from(rng.random::<bool>()),
                covariate: rng.random_range(-self.b_x..=self.b_x),
            }
        };
        let op = if out.is_empty() { 1 } else { rng.random_range(0..3) };
        match op {
            0 => {
                let k = rng.random_range(0..out.len());
                out[k] = fresh(rng);
            }
            1 => out.push(fresh(rng)),
            _ => {
                let k = rng.random_range(0..out.len());
                out.remove(k);
            }
        }
        out
    }
}
