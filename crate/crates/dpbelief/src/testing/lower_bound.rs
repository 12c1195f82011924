//! Communication lower bounds for private two-state testing.
//!
//! Any scheme in which agents exchange privatised signals needs
//! K·T ≥ |1 − α − β|·diam(G) / (2 Σ_i KL_i), where KL_i is the divergence
//! between agent i's privatised signal laws under the alternative and the
//! null.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::privacy::flip_probability;

/// A lower bound on K·T; `value` is +∞ when the divergences vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    pub unbounded: bool,
}

fn check_rates(alpha: f64, beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
        return Err(invalid("alpha and beta must lie in [0, 1]"));
    }
    Ok(())
}

/// |1 − α − β|·diam / (2 Σ KL).
pub fn communication_lower_bound(kl_privatized: &[f64], alpha: f64, beta: f64, diameter: usize) -> Result<LowerBound> {
    check_rates(alpha, beta)?;
    if kl_privatized.iter().any(|k| !(*k >= 0.0)) {
        return Err(invalid("divergences must be nonnegative"));
    }
    let total: f64 = kl_privatized.iter().sum();
    let gap = (1.0 - alpha - beta).abs();
    if gap == 0.0 {
        return Ok(LowerBound { value: 0.0, unbounded: false });
    }
    if total == 0.0 {
        return Ok(LowerBound { value: f64::INFINITY, unbounded: true });
    }
    Ok(LowerBound { value: gap * diameter as f64 / (2.0 * total), unbounded: false })
}

/// KL(Be(a) ‖ Be(b)).
pub fn bernoulli_kl(a: f64, b: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    term(a, b) + term(1.0 - a, 1.0 - b)
}

/// Divergence between randomized-response reports under the alternative
/// Be(1/2 + gap/2) and the null Be(1/2).
pub fn rr_privatized_kl(epsilon: f64, gap: f64) -> Result<f64> {
    if !(gap > 0.0 && gap < 1.0) {
        return Err(invalid(format!("gap must lie in (0, 1), got {gap}")));
    }
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon must be nonnegative"));
    }
    let shrink = 1.0 - 2.0 * flip_probability(epsilon);
    Ok(bernoulli_kl(0.5 + gap * shrink / 2.0, 0.5))
}

/// Closed form for randomized response on the gap instance:
/// (2|1 − α − β|/gap²)·((e^ε + 1)/(e^ε − 1))²·diam/n.
pub fn rr_lower_bound_closed_form(epsilon: f64, gap: f64, alpha: f64, beta: f64, diameter: usize, n: usize) -> Result<f64> {
    check_rates(alpha, beta)?;
    if !(epsilon > 0.0) || !(gap > 0.0) || n == 0 {
        return Err(invalid("epsilon, gap and n must be positive"));
    }
    // (e^ε + 1)/(e^ε − 1) = 1/tanh(ε/2), stable for small ε.
    let ratio = 1.0 / (epsilon / 2.0).tanh();
    Ok(2.0 * (1.0 - alpha - beta).abs() / (gap * gap) * ratio * ratio * diameter as f64 / n as f64)
}
