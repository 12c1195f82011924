//! Power of individual versus collective private tests of a binary state.
//!
//! Each of n agents observes one bit that agrees with the state θ ∈ {0, 1}
//! with probability p. An agent alone runs the most powerful level-α test on
//! its bit. Collectively, agents either share randomized-response bits and
//! run a binomial test, or share Laplace-noised log-likelihood ratios and
//! threshold their sum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Result};
use crate::privacy::{flip_probability, laplace};

/// Search range and tolerance for critical budgets.
pub const BUDGET_LOWER: f64 = 1e-3;
pub const BUDGET_UPPER: f64 = 10.0;
pub const BUDGET_TOL: f64 = 1e-4;

/// Slack in CDF comparisons, so that F(k) computed as a sum of pmfs does not
/// miss a quantile by rounding.
const CDF_SLACK: f64 = 1e-12;

fn check_p_alpha(p: f64, alpha: f64) -> Result<()> {
    if !(p > 0.5 && p < 1.0) {
        return Err(invalid(format!("p must lie in (1/2, 1), got {p}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Power of the most powerful level-α test of θ = 0 against θ = 1 from one
/// bit with Pr[s = θ] = p.
pub fn individual_power_binary(p: f64, alpha: f64) -> Result<f64> {
    check_p_alpha(p, alpha)?;
    let miss = 1.0 - p;
    // Both branches equal p at 1 − p = α; snap rounding noise to that case.
    Ok(if (miss - alpha).abs() <= 1e-12 {
        p
    } else if miss < alpha {
        // Always reject on s = 1, and on s = 0 with probability (α − 1 + p)/p.
        p + miss * (alpha - miss) / p
    } else {
        // Reject on s = 1 with probability α/(1 − p).
        p * alpha / miss
    })
}

/// Binomial(n, q) pmf at k.
pub fn binomial_pmf(n: u64, q: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if q == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if q == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (ln_binomial(n, k) + k as f64 * q.ln() + (n - k) as f64 * (1.0 - q).ln()).exp()
}

/// Binomial(n, q) CDF at k by summation.
pub fn binomial_cdf(n: u64, q: f64, k: u64) -> f64 {
    if k >= n {
        return 1.0;
    }
    (0..=k).map(|j| binomial_pmf(n, q, j)).sum::<f64>().min(1.0)
}

/// Smallest k with F(k) ≥ u.
pub fn binomial_quantile(n: u64, q: f64, u: f64) -> u64 {
    let mut acc = 0.0;
    for k in 0..=n {
        acc += binomial_pmf(n, q, k);
        if acc >= u - CDF_SLACK {
            return k;
        }
    }
    n
}

/// Probability that a randomized-response report equals 1 under θ = 0:
/// p′ = p·p_ε + (1 − p)(1 − p_ε).
pub fn rr_report_probability(p: f64, epsilon: f64) -> f64 {
    let flip = flip_probability(epsilon);
    p * flip + (1.0 - p) * (1.0 - flip)
}

/// Power of the collective randomized-response binomial test: reject when
/// the number of reported ones exceeds the (1 − α)-quantile of Bin(n, p′).
pub fn rr_collective_power(n: u64, p: f64, epsilon: f64, alpha: f64) -> Result<f64> {
    check_p_alpha(p, alpha)?;
    if n == 0 {
        return Err(invalid("need at least one agent"));
    }
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon must be nonnegative"));
    }
    let q0 = rr_report_probability(p, epsilon);
    let cut = binomial_quantile(n, q0, 1.0 - alpha);
    Ok((1.0 - binomial_cdf(n, 1.0 - q0, cut)).max(0.0))
}

/// A critical budget and how the search ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalBudget {
    pub epsilon: f64,
    /// Collective testing already wins at the lower end of the range.
    pub at_lower_bound: bool,
    /// Collective testing never wins inside the range; `epsilon` is then ∞.
    pub not_reached: bool,
}

/// Bisection for the smallest ε in [1e-3, 10] with `wins(ε)`, assuming
/// `wins` switches from false to true once.
fn bisect_budget(mut wins: impl FnMut(f64) -> Result<bool>) -> Result<CriticalBudget> {
    if wins(BUDGET_LOWER)? {
        return Ok(CriticalBudget { epsilon: BUDGET_LOWER, at_lower_bound: true, not_reached: false });
    }
    if !wins(BUDGET_UPPER)? {
        return Ok(CriticalBudget { epsilon: f64::INFINITY, at_lower_bound: false, not_reached: true });
    }
    let (mut lo, mut hi) = (BUDGET_LOWER, BUDGET_UPPER);
    while hi - lo > BUDGET_TOL {
        let mid = 0.5 * (lo + hi);
        if wins(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalBudget { epsilon: hi, at_lower_bound: false, not_reached: false })
}

/// Smallest ε at which the collective randomized-response power reaches the
/// individual power β_IND. The power counts rejections strictly above the
/// null (1 − α)-quantile, matching [`rr_collective_power`].
pub fn critical_budget_rr(n: u64, p: f64, alpha: f64) -> Result<CriticalBudget> {
    let beta_ind = individual_power_binary(p, alpha)?;
    if n == 0 {
        return Err(invalid("need at least one agent"));
    }
    bisect_budget(|eps| Ok(rr_collective_power(n, p, eps, alpha)? >= beta_ind))
}

/// Pre-drawn Monte Carlo sample of the Laplace sum test, reusable across ε.
///
/// Each draw stores the number of ones among the n bits and the sum of n
/// unit-scale Laplace variables. The noisy statistic at budget ε is
/// c·(2k − n) + (Δ/ε)·L with c = log(p/(1−p)) and Δ = 2|log p − log(1−p)|.
/// Sharing the draws across ε makes the estimated power curve smooth in ε.
#[derive(Debug, Clone)]
pub struct LaplaceSumSample {
    n: u64,
    p: f64,
    null: Vec<(u64, f64)>,
    alt: Vec<(u64, f64)>,
    pub seed: u64,
}

impl LaplaceSumSample {
    pub fn draw(n: u64, p: f64, mc: usize, seed: u64) -> Result<Self> {
        if !(p > 0.5 && p < 1.0) {
            return Err(invalid(format!("p must lie in (1/2, 1), got {p}")));
        }
        if n == 0 || mc < 2 {
            return Err(invalid("need at least one agent and two Monte Carlo draws"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |one_prob: f64| -> Vec<(u64, f64)> {
            (0..mc)
                .map(|_| {
                    let mut ones = 0;
                    let mut noise = 0.0;
                    for _ in 0..n {
                        if rng.random::<f64>() < one_prob {
                            ones += 1;
                        }
                        noise += laplace(1.0, &mut rng);
                    }
                    (ones, noise)
                })
                .collect()
        };
        let null = draw(1.0 - p);
        let alt = draw(p);
        Ok(LaplaceSumSample { n, p, null, alt, seed })
    }

    /// Per-record sensitivity 2|log p − log(1 − p)|.
    pub fn sensitivity(&self) -> f64 {
        2.0 * (self.p.ln() - (1.0 - self.p).ln()).abs()
    }

    fn statistic(&self, (ones, noise): (u64, f64), noise_scale: f64) -> f64 {
        let c = (self.p / (1.0 - self.p)).ln();
        c * (2.0 * ones as f64 - self.n as f64) + noise_scale * noise
    }

    /// Power at ε with the rejection cutoff set to the empirical
    /// (1 − α)-quantile of the null statistics. ε = ∞ gives the noise-free
    /// likelihood-ratio test.
    pub fn power(&self, epsilon: f64, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        let scale = if epsilon.is_infinite() { 0.0 } else { self.sensitivity() / epsilon };
        let mut null: Vec<f64> = self.null.iter().map(|&d| self.statistic(d, scale)).collect();
        null.sort_by(f64::total_cmp);
        let idx = (((1.0 - alpha) * null.len() as f64).ceil() as usize).clamp(1, null.len()) - 1;
        let cut = null[idx];
        let hits = self.alt.iter().filter(|&&d| self.statistic(d, scale) > cut).count();
        Ok(hits as f64 / self.alt.len() as f64)
    }
}

/// Monte Carlo power of the Laplace sum test at one budget.
pub fn laplace_sum_test_power(n: u64, p: f64, epsilon: f64, alpha: f64, mc: usize, seed: u64) -> Result<f64> {
    check_p_alpha(p, alpha)?;
    if mc < 10_000 {
        return Err(invalid(format!("Laplace sum test needs at least 10000 draws, got {mc}")));
    }
    LaplaceSumSample::draw(n, p, mc, seed)?.power(epsilon, alpha)
}

/// Smallest ε at which the Monte Carlo Laplace sum test power reaches the
/// individual power.
pub fn critical_budget_laplace(n: u64, p: f64, alpha: f64, mc: usize, seed: u64) -> Result<CriticalBudget> {
    let beta_ind = individual_power_binary(p, alpha)?;
    if mc < 10_000 {
        return Err(invalid(format!("Laplace sum test needs at least 10000 draws, got {mc}")));
    }
    let sample = LaplaceSumSample::draw(n, p, mc, seed)?;
    bisect_budget(|eps| Ok(sample.power(eps, alpha)? >= beta_ind))
}

/// Mechanism whose collective power is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Rr,
    Laplace,
}

/// Collective power over a budget grid, with the individual benchmark and
/// the critical budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub mechanism: Mechanism,
    pub n: u64,
    pub p: f64,
    pub alpha: f64,
    /// (ε, power) pairs.
    pub points: Vec<(f64, f64)>,
    pub beta_ind: f64,
    pub critical: CriticalBudget,
    /// Seed of the Monte Carlo draws (Laplace only).
    pub seed: Option<u64>,
}

/// Evaluate a power curve on `grid`.
pub fn power_curve(
    mechanism: Mechanism,
    n: u64,
    p: f64,
    alpha: f64,
    grid: &[f64],
    mc: usize,
    seed: u64,
) -> Result<PowerCurve> {
    let beta_ind = individual_power_binary(p, alpha)?;
    let (points, critical, seed) = match mechanism {
        Mechanism::Rr => {
            let points = grid
                .iter()
                .map(|&e| Ok((e, rr_collective_power(n, p, e, alpha)?)))
                .collect::<Result<Vec<_>>>()?;
            (points, critical_budget_rr(n, p, alpha)?, None)
        }
        Mechanism::Laplace => {
            if mc < 10_000 {
                return Err(invalid(format!("Laplace sum test needs at least 10000 draws, got {mc}")));
            }
            let sample = LaplaceSumSample::draw(n, p, mc, seed)?;
            let points = grid
                .iter()
                .map(|&e| Ok((e, sample.power(e, alpha)?)))
                .collect::<Result<Vec<_>>>()?;
            let critical = bisect_budget(|eps| Ok(sample.power(eps, alpha)? >= beta_ind))?;
            (points, critical, Some(seed))
        }
    };
    Ok(PowerCurve { mechanism, n, p, alpha, points, beta_ind, critical, seed })
}
