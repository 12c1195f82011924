//! Likelihood models plugged into the belief-exchange algorithms.
//!
//! Models are indexed by state position: a model built for a state space of
//! size m answers `log_likelihood(data, s)` for `s in 0..m`. How a position
//! maps to a parameter value is up to the model (success probability, mean,
//! log hazard ratio, table row).

mod bernoulli;
mod categorical;
mod cox;
mod gaussian;

pub use bernoulli::{bernoulli_log_likelihood, BernoulliModel};
pub use categorical::CategoricalModel;
pub use cox::{
    cox_fit_mle, cox_gradient, cox_partial_log_likelihood, synth_survival, CoxData, CoxFit, CoxModel,
    PartialLikelihood, SurvivalRecord, DEFAULT_RIDGE,
};
pub use gaussian::GaussianModel;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::logsumexp;

/// Ordered finite set of candidate states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub labels: Vec<String>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(invalid("state labels must be distinct"));
        }
        if labels.is_empty() {
            return Err(invalid("state space is empty"));
        }
        Ok(StateSpace { labels })
    }

    /// States labelled by their numeric values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        StateSpace::new(values.iter().map(|v| format!("{v}")).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A KL divergence value, exact or Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub value: f64,
    /// Standard error of a Monte Carlo estimate; 0 for closed forms.
    pub std_error: f64,
    pub exact: bool,
}

impl KlEstimate {
    pub fn exact(value: f64) -> Self {
        KlEstimate { value, std_error: 0.0, exact: true }
    }
}

/// Behaviour every signal model provides.
pub trait SignalModel: Send + Sync {
    type Record: Clone + Send + Sync;

    fn num_states(&self) -> usize;

    /// log ℓ(data | state). An empty dataset has log-likelihood 0.
    fn log_likelihood(&self, data: &[Self::Record], state: usize) -> Result<f64>;

    /// `count` i.i.d. records drawn at `state`.
    fn sample<R: Rng + ?Sized>(&self, state: usize, count: usize, rng: &mut R) -> Vec<Self::Record>;

    /// Largest change of log ℓ(·|state) caused by one record.
    fn sensitivity(&self, state: usize) -> f64;

    /// One arbitrary record, used to build adjacent datasets.
    fn random_record<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Record;

    /// KL(ℓ(·|a) ‖ ℓ(·|b)) per record. The default is a Monte Carlo mean of
    /// the per-record log-likelihood ratio under `a`.
    fn kl<R: Rng + ?Sized>(&self, a: usize, b: usize, mc: usize, rng: &mut R) -> Result<KlEstimate> {
        let (mean, var) = self.llr_moments(a, b, mc, rng)?;
        Ok(KlEstimate { value: mean, std_error: (var / mc as f64).sqrt(), exact: false })
    }

    /// Standard deviation of log(ℓ(s|other)/ℓ(s|truth)) for s drawn at `truth`.
    fn llr_std<R: Rng + ?Sized>(&self, truth: usize, other: usize, mc: usize, rng: &mut R) -> Result<f64> {
        let (_, var) = self.llr_moments(truth, other, mc, rng)?;
        Ok(var.sqrt())
    }

    /// Mean and variance of log ℓ(s|a) − log ℓ(s|b) with s drawn at `a`.
    fn llr_moments<R: Rng + ?Sized>(&self, a: usize, b: usize, mc: usize, rng: &mut R) -> Result<(f64, f64)> {
        if mc < 2 {
            return Err(invalid("Monte Carlo estimates need at least two samples"));
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..mc {
            let rec = self.sample(a, 1, rng);
            let d = self.log_likelihood(&rec, a)? - self.log_likelihood(&rec, b)?;
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / mc as f64;
        let var = ((sum_sq - mc as f64 * mean * mean) / (mc as f64 - 1.0)).max(0.0);
        Ok((mean, var))
    }

    /// A dataset adjacent to `data`: one record replaced, added or removed.
    fn adjacent<R: Rng + ?Sized>(&self, data: &[Self::Record], rng: &mut R) -> Vec<Self::Record> {
        let mut out = data.to_vec();
        let op = if out.is_empty() { 1 } else { rng.random_range(0..3) };
        match op {
            0 => {
                let k = rng.random_range(0..out.len());
                out[k] = self.random_record(rng);
            }
            1 => out.push(self.random_record(rng)),
            _ => {
                let k = rng.random_range(0..out.len());
                out.remove(k);
            }
        }
        out
    }
}

/// log γ_i(s) for every agent i and state s.
pub fn log_likelihood_matrix<M: SignalModel>(models: &[M], datasets: &[Vec<M::Record>]) -> Result<Vec<Vec<f64>>> {
    if models.len() != datasets.len() {
        return Err(invalid(format!(
            "{} models but {} datasets",
            models.len(),
            datasets.len()
        )));
    }
    models
        .iter()
        .zip(datasets)
        .map(|(m, d)| (0..m.num_states()).map(|s| m.log_likelihood(d, s)).collect())
        .collect()
}

/// Indices maximising Σ_i log γ_i(s), with ties (to `tol`) all included.
pub fn centralized_argmax(log_gamma: &[Vec<f64>], tol: f64) -> Vec<usize> {
    let m = log_gamma.first().map_or(0, Vec::len);
    let totals: Vec<f64> = (0..m).map(|s| log_gamma.iter().map(|row| row[s]).sum()).collect();
    let best = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..m).filter(|&s| totals[s] >= best - tol).collect()
}

/// Constants the schedules consume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Largest |log γ_i(s)| over agents and states with γ normalised over
    /// states. Zero when no datasets were supplied (online schedules do not
    /// use it).
    pub gamma: f64,
    /// Smallest |Σ_i ξ_i KL(ℓ_i(·|s̄) ‖ ℓ_i(·|s*))| over non-maximisers s̄ and
    /// maximisers s*.
    pub l: f64,
    /// Largest standard deviation of log(ℓ_i(·|s̄)/ℓ_i(·|s*)) under s*.
    pub q: f64,
    /// Largest per-record sensitivity over agents and states.
    pub delta: f64,
}

/// Largest |log γ| over agents and states after normalising each agent's γ.
pub fn gamma_bound(log_gamma: &[Vec<f64>]) -> f64 {
    log_gamma
        .iter()
        .map(|row| {
            let z = logsumexp(row);
            row.iter().map(|v| (v - z).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Compute (Γ, l, Q, Δ) for the given agents.
///
/// `xi[i]` is agent i's signal count (dataset size for estimation, mean
/// arrivals for online learning). `theta_star` lists the maximising (or true)
/// states. `datasets` feeds Γ and may be omitted.
pub fn constants_bundle<M: SignalModel, R: Rng + ?Sized>(
    models: &[M],
    datasets: Option<&[Vec<M::Record>]>,
    xi: &[f64],
    theta_star: &[usize],
    mc: usize,
    rng: &mut R,
) -> Result<Constants> {
    if models.is_empty() {
        return Err(invalid("no agents"));
    }
    if xi.len() != models.len() {
        return Err(invalid("one signal count per agent is required"));
    }
    let m = models[0].num_states();
    if models.iter().any(|md| md.num_states() != m) {
        return Err(invalid("all agents must share the state space"));
    }
    if theta_star.is_empty() || theta_star.iter().any(|&s| s >= m) {
        return Err(invalid("maximiser set must be a nonempty subset of the states"));
    }
    let others: Vec<usize> = (0..m).filter(|s| !theta_star.contains(s)).collect();

    let gamma = match datasets {
        Some(d) => gamma_bound(&log_likelihood_matrix(models, d)?),
        None => 0.0,
    };
    let delta = models
        .iter()
        .flat_map(|md| (0..m).map(move |s| md.sensitivity(s)))
        .fold(0.0, f64::max);

    let mut l = f64::INFINITY;
    let mut q = 0.0f64;
    for &bar in &others {
        for &star in theta_star {
            let mut total = 0.0;
            for (md, &x) in models.iter().zip(xi) {
                total += x * md.kl(bar, star, mc, rng)?.value;
                q = q.max(md.llr_std(star, bar, mc, rng)?);
            }
            l = l.min(total.abs());
        }
    }
    if others.is_empty() {
        // Every state maximises: nothing to separate.
        return Err(Error::NotIdentifiable);
    }
    if !(l > 1e-12) {
        return Err(Error::NotIdentifiable);
    }
    Ok(Constants { gamma, l, q, delta })
}
