use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{KlEstimate, SignalModel};
use crate::error::{invalid, Result};

/// Σ [b log p + (1 − b) log(1 − p)] over the bits.
pub fn bernoulli_log_likelihood(bits: &[u8], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("success probability must lie in (0, 1), got {p}")));
    }
    let ones = bits.iter().filter(|&&b| b == 1).count() as f64;
    let zeros = bits.len() as f64 - ones;
    Ok(ones * p.ln() + zeros * (1.0 - p).ln())
}

/// Binary signals with a success probability per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliModel {
    pub probs: Vec<f64>,
}

impl BernoulliModel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(invalid(format!("success probability must lie in (0, 1), got {p}")));
        }
        Ok(BernoulliModel { probs })
    }

    fn moments(&self, a: usize, b: usize) -> (f64, f64) {
        let (pa, pb) = (self.probs[a], self.probs[b]);
        let one = (pa / pb).ln();
        let zero = ((1.0 - pa) / (1.0 - pb)).ln();
        let mean = pa * one + (1.0 - pa) * zero;
        let var = pa * (1.0 - pa) * (one - zero).powi(2);
        (mean, var)
    }
}

impl SignalModel for BernoulliModel {
    type Record = u8;

    fn num_states(&self) -> usize {
        self.probs.len()
    }

    fn log_likelihood(&self, data: &[u8], state: usize) -> Result<f64> {
        bernoulli_log_likelihood(data, self.probs[state])
    }

    fn sample<R: Rng + ?Sized>(&self, state: usize, count: usize, rng: &mut R) -> Vec<u8> {
        let p = self.probs[state];
        (0..count).map(|_| u8::from(rng.random::<f64>() < p)).collect()
    }

    fn sensitivity(&self, state: usize) -> f64 {
        let p = self.probs[state];
        (p.ln() - (1.0 - p).ln()).abs()
    }

    fn random_record<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        u8::from(rng.random::<bool>())
    }

    fn kl<R: Rng + ?Sized>(&self, a: usize, b: usize, _mc: usize, _rng: &mut R) -> Result<KlEstimate> {
        Ok(KlEstimate::exact(self.moments(a, b).0))
    }

    fn llr_moments<R: Rng + ?Sized>(&self, a: usize, b: usize, _mc: usize, _rng: &mut R) -> Result<(f64, f64)> {
        Ok(self.moments(a, b))
    }

    /// Adjacent bit strings differ in exactly one bit.
    fn adjacent<R: Rng + ?Sized>(&self, data: &[u8], rng: &mut R) -> Vec<u8> {
        let mut out = data.to_vec();
        if out.is_empty() {
            out.push(self.random_record(rng));
        } else {
            let k = rng.random_range(0..out.len());
            out[k] = 1 - out[k];
        }
        out
    }
}
