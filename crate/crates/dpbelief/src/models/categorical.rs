use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{KlEstimate, SignalModel};
use crate::error::{invalid, Result};

/// Finite-alphabet signals: `table[state][symbol]` is ℓ(symbol | state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalModel {
    pub table: Vec<Vec<f64>>,
}

impl CategoricalModel {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        let k = table.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(invalid("categorical model needs at least one symbol"));
        }
        for (s, row) in table.iter().enumerate() {
            if row.len() != k {
                return Err(invalid(format!("state {s} has {} symbols, expected {k}", row.len())));
            }
            if row.iter().any(|p| !(*p > 0.0)) {
                return Err(invalid(format!("state {s} has a non-positive probability")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("state {s} probabilities sum to {total}")));
            }
        }
        Ok(CategoricalModel { table })
    }

    pub fn symbols(&self) -> usize {
        self.table[0].len()
    }

    fn moments(&self, a: usize, b: usize) -> (f64, f64) {
        let (ra, rb) = (&self.table[a], &self.table[b]);
        let mean: f64 = ra.iter().zip(rb).map(|(p, q)| p * (p / q).ln()).sum();
        let second: f64 = ra.iter().zip(rb).map(|(p, q)| p * (p / q).ln().powi(2)).sum();
        (mean, (second - mean * mean).max(0.0))
    }
}

impl SignalModel for CategoricalModel {
    type Record = usize;

    fn num_states(&self) -> usize {
        self.table.len()
    }

    fn log_likelihood(&self, data: &[usize], state: usize) -> Result<f64> {
        let row = &self.table[state];
        data.iter()
            .map(|&x| {
                row.get(x)
                    .map(|p| p.ln())
                    .ok_or_else(|| invalid(format!("symbol {x} outside the alphabet")))
            })
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, state: usize, count: usize, rng: &mut R) -> Vec<usize> {
        let row = &self.table[state];
        (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return k;
                    }
                }
                row.len() - 1
            })
            .collect()
    }

    fn sensitivity(&self, state: usize) -> f64 {
        let row = &self.table[state];
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min).ln();
        hi - lo
    }

    fn random_record<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.symbols())
    }

    fn kl<R: Rng + ?Sized>(&self, a: usize, b: usize, _mc: usize, _rng: &mut R) -> Result<KlEstimate> {
        Ok(KlEstimate::exact(self.moments(a, b).0))
    }

    fn llr_moments<R: Rng + ?Sized>(&self, a: usize, b: usize, _mc: usize, _rng: &mut R) -> Result<(f64, f64)> {
        Ok(self.moments(a, b))
    }

    /// Adjacent datasets differ in one symbol.
    fn adjacent<R: Rng + ?Sized>(&self, data: &[usize], rng: &mut R) -> Vec<usize> {
        let mut out = data.to_vec();
        if out.is_empty() {
            out.push(self.random_record(rng));
        } else {
            let k = rng.random_range(0..out.len());
            out[k] = self.random_record(rng);
        }
        out
    }
}
