//! Differential privacy mechanisms and budget bookkeeping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::models::SignalModel;

/// A total budget divided evenly over `splits` noisy releases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub splits: usize,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, splits: usize) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(invalid(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        if splits == 0 {
            return Err(invalid("budget must be split over at least one release"));
        }
        Ok(PrivacyBudget { epsilon, splits })
    }

    pub fn per_release(&self) -> f64 {
        self.epsilon / self.splits as f64
    }

    /// Laplace noise calibrated to `sensitivity` at the per-release budget.
    pub fn laplace(&self, sensitivity: f64) -> LaplaceNoise {
        LaplaceNoise { scale: sensitivity / self.per_release() }
    }
}

/// Centered Laplace distribution with scale b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceNoise {
    pub scale: f64,
}

impl LaplaceNoise {
    pub fn std(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.scale
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        laplace(self.scale, rng)
    }
}

/// One Laplace(scale) draw; errors on a non-positive scale.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(invalid(format!("Laplace scale must be positive, got {scale}")));
    }
    Ok(laplace(scale, rng))
}

/// Laplace draw by inversion. A zero scale returns exactly 0, which is how
/// noise-free runs are expressed.
pub(crate) fn laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // u in (-1/2, 1/2]; 1 - 2|u| in [0, 1), guard the log(0) edge.
    let u: f64 = rng.random::<f64>() - 0.5;
    let tail = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -scale * u.signum() * tail.ln()
}

/// Probability that randomized response flips the bit.
pub fn flip_probability(epsilon: f64) -> f64 {
    if epsilon.is_infinite() {
        return 0.0;
    }
    1.0 / (1.0 + epsilon.exp())
}

/// Report the bit truthfully with probability e^ε/(1+e^ε), flipped otherwise.
pub fn randomized_response<R: Rng + ?Sized>(bit: u8, epsilon: f64, rng: &mut R) -> Result<u8> {
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    if bit > 1 {
        return Err(invalid(format!("randomized response takes a bit, got {bit}")));
    }
    let flip = rng.random::<f64>() < flip_probability(epsilon);
    Ok(if flip { 1 - bit } else { bit })
}

/// Upper bound on how much one patient's record can move the Cox log partial
/// likelihood when |θ| ≤ b_theta and |x| ≤ b_x.
pub fn cox_sensitivity(b_theta: f64, b_x: f64) -> Result<f64> {
    if b_theta < 0.0 || b_x < 0.0 {
        return Err(invalid("sensitivity bounds must be nonnegative"));
    }
    Ok(2.0 * b_theta * b_x)
}

/// Largest observed |log ℓ(S|θ) − log ℓ(S′|θ)| over `perturbations` random
/// adjacent datasets S′. A lower bound on the true sensitivity.
pub fn empirical_sensitivity<M: SignalModel, R: Rng + ?Sized>(
    model: &M,
    dataset: &[M::Record],
    state: usize,
    perturbations: usize,
    rng: &mut R,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("empirical sensitivity needs a nonempty dataset"));
    }
    let base = model.log_likelihood(dataset, state)?;
    let mut worst = 0.0f64;
    for _ in 0..perturbations {
        let other = model.adjacent(dataset, rng);
        let v = model.log_likelihood(&other, state)?;
        worst = worst.max((base - v).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DpVerdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Outcome of the histogram likelihood-ratio check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpCheckReport {
    pub verdict: DpVerdict,
    /// Largest |log ratio| between output histograms over bins with enough
    /// mass on both sides (infinite when one side is empty).
    pub worst_log_ratio: f64,
    /// Centre of the worst bin.
    pub worst_bin: f64,
    /// Number of bins that entered the comparison.
    pub bins_compared: usize,
}

/// Counts below this are too noisy for the log-ratio comparison.
const MIN_BIN_COUNT: usize = 100;
const MAX_BINS: usize = 60;

/// Maps an output to its histogram bin.
type Binner = Box<dyn Fn(f64) -> Option<usize>>;

/// Empirical ε-DP check for a scalar mechanism on two adjacent inputs.
///
/// `mechanism(second, rng)` runs the mechanism on the first input when
/// `second` is false and on the adjacent input otherwise. Outputs are
/// histogrammed (by value when there are few distinct outputs, otherwise on
/// equal-width bins spanning the central 99% of the pooled sample). The check
/// fails when some bin's log ratio exceeds ε by more than three standard
/// errors, or when a bin that should hold at least ten draws under ε-DP is
/// empty on one side.
pub fn dp_ratio_check<R, F>(mut mechanism: F, epsilon: f64, trials: usize, rng: &mut R) -> DpCheckReport
where
    R: Rng + ?Sized,
    F: FnMut(bool, &mut R) -> f64,
{
    let a: Vec<f64> = (0..trials).map(|_| mechanism(false, rng)).collect();
    let b: Vec<f64> = (0..trials).map(|_| mechanism(true, rng)).collect();

    let mut distinct: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let (bin_of, centers): (Binner, Vec<f64>) = if distinct.len() <= MAX_BINS {
        let values = distinct.clone();
        (
            Box::new(move |x| values.binary_search_by(|v| v.total_cmp(&x)).ok()),
            distinct,
        )
    } else {
        let mut pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        pooled.sort_by(f64::total_cmp);
        let lo = pooled[pooled.len() / 200];
        let hi = pooled[pooled.len() - 1 - pooled.len() / 200];
        let width = (hi - lo) / MAX_BINS as f64;
        let centers = (0..MAX_BINS).map(|k| lo + (k as f64 + 0.5) * width).collect();
        (
            Box::new(move |x| {
                if x < lo || x >= hi || width <= 0.0 {
                    None
                } else {
                    Some((((x - lo) / width) as usize).min(MAX_BINS - 1))
                }
            }),
            centers,
        )
    };

    let mut ca = vec![0usize; centers.len()];
    let mut cb = vec![0usize; centers.len()];
    for &x in &a {
        if let Some(k) = bin_of(x) {
            ca[k] += 1;
        }
    }
    for &x in &b {
        if let Some(k) = bin_of(x) {
            cb[k] += 1;
        }
    }

    let mut report = DpCheckReport {
        verdict: DpVerdict::Inconclusive,
        worst_log_ratio: 0.0,
        worst_bin: f64::NAN,
        bins_compared: 0,
    };
    let mut failed = false;
    for k in 0..centers.len() {
        let (x, y) = (ca[k], cb[k]);
        let (big, small) = (x.max(y), x.min(y));
        if small == 0 {
            // Under ε-DP the empty side should still see big·e^{-ε} draws.
            if big as f64 * (-epsilon).exp() >= 10.0 {
                failed = true;
                report.worst_log_ratio = f64::INFINITY;
                report.worst_bin = centers[k];
            }
            continue;
        }
        if small < MIN_BIN_COUNT {
            continue;
        }
        report.bins_compared += 1;
        let ratio = (x as f64 / y as f64).ln().abs();
        let se = (1.0 / x as f64 + 1.0 / y as f64).sqrt();
        if ratio > report.worst_log_ratio && report.worst_log_ratio.is_finite() {
            report.worst_log_ratio = ratio;
            report.worst_bin = centers[k];
        }
        if ratio - 3.0 * se > epsilon {
            failed = true;
        }
    }
    report.verdict = if failed {
        DpVerdict::Fail
    } else if report.bins_compared == 0 {
        DpVerdict::Inconclusive
    } else {
        DpVerdict::Pass
    };
    report
}
