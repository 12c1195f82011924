use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{KlEstimate, SignalModel};
use crate::error::{invalid, Result};

/// Normal signals with a known standard deviation and a mean per state.
///
/// With `bound` set, signals are clamped to [−bound, bound], which makes the
/// per-record sensitivity finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    pub means: Vec<f64>,
    pub sd: f64,
    pub bound: Option<f64>,
}

impl GaussianModel {
    pub fn new(means: Vec<f64>, sd: f64, bound: Option<f64>) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(invalid(format!("standard deviation must be positive, got {sd}")));
        }
        if let Some(b) = bound {
            if !(b > 0.0) {
                return Err(invalid("signal bound must be positive"));
            }
        }
        Ok(GaussianModel { means, sd, bound })
    }

    fn clamp(&self, x: f64) -> f64 {
        match self.bound {
            Some(b) => x.clamp(-b, b),
            None => x,
        }
    }

    fn moments(&self, a: usize, b: usize) -> (f64, f64) {
        let d = self.means[a] - self.means[b];
        let v = self.sd * self.sd;
        (d * d / (2.0 * v), d * d / v)
    }
}

impl SignalModel for GaussianModel {
    type Record = f64;

    fn num_states(&self) -> usize {
        self.means.len()
    }

    fn log_likelihood(&self, data: &[f64], state: usize) -> Result<f64> {
        let mu = self.means[state];
        let v = self.sd * self.sd;
        let norm = -0.5 * (2.0 * std::f64::consts::PI * v).ln();
        Ok(data
            .iter()
            .map(|&x| {
                let x = self.clamp(x);
                norm - (x - mu).powi(2) / (2.0 * v)
            })
            .sum())
    }

    fn sample<R: Rng + ?Sized>(&self, state: usize, count: usize, rng: &mut R) -> Vec<f64> {
        let dist = Normal::new(self.means[state], self.sd).expect("validated standard deviation");
        (0..count).map(|_| self.clamp(dist.sample(rng))).collect()
    }

    fn sensitivity(&self, state: usize) -> f64 {
        match self.bound {
            Some(b) => (b + self.means[state].abs()).powi(2) / (2.0 * self.sd * self.sd),
            None => f64::INFINITY,
        }
    }

    fn random_record<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let b = self.bound.unwrap_or(3.0 * self.sd);
        rng.random_range(-b..=b)
    }

    fn kl<R: Rng + ?Sized>(&self, a: usize, b: usize, mc: usize, rng: &mut R) -> Result<KlEstimate> {
        if self.bound.is_some() {
            let (mean, var) = self.llr_moments(a, b, mc, rng)?;
            return Ok(KlEstimate { value: mean, std_error: (var / mc as f64).sqrt(), exact: false });
        }
        Ok(KlEstimate::exact(self.moments(a, b).0))
    }

    fn llr_moments<R: Rng + ?Sized>(&self, a: usize, b: usize, mc: usize, rng: &mut R) -> Result<(f64, f64)> {
        if self.bound.is_none() {
            return Ok(self.moments(a, b));
        }
        if mc < 2 {
            return Err(invalid("Monte Carlo estimates need at least two samples"));
        }
        let xs = self.sample(a, mc, rng);
        let d: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let la = self.log_likelihood(&[x], a).unwrap_or(0.0);
                let lb = self.log_likelihood(&[x], b).unwrap_or(0.0);
                la - lb
            })
            .collect();
        let mean = d.iter().sum::<f64>() / mc as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (mc as f64 - 1.0);
        Ok((mean, var))
    }
}
