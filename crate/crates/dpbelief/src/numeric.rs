//! Small log-space helpers.

/// log Σ exp(x). Returns −∞ for an empty slice or all −∞ inputs.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log(e^a + e^b).
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Subtract log Σ exp(x) in place and return the residual log Σ exp after
/// the shift (should be ~0; callers track it as a hygiene metric).
pub fn normalize_log(xs: &mut [f64]) -> f64 {
    let z = logsumexp(xs);
    for x in xs.iter_mut() {
        *x -= z;
    }
    logsumexp(xs)
}

/// log τ for τ = 1/(1 + e^ϱ), computed without overflow.
pub fn log_threshold(rho: f64) -> f64 {
    -log_add_exp(0.0, rho)
}

/// τ = 1/(1 + e^ϱ).
pub fn threshold(rho: f64) -> f64 {
    log_threshold(rho).exp()
}

/// Total variation distance ½ Σ |p − q|.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
