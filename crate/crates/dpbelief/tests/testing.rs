use approx::assert_abs_diff_eq;
use dpbelief::graph::Network;
use dpbelief::mle::{mle_from_log_likelihoods, MleSchedule, RunOptions, ScheduleOverrides};
use dpbelief::models::{synth_survival, Constants, SurvivalRecord};
use dpbelief::privacy::flip_probability;
use dpbelief::rng::Streams;
use dpbelief::testing::{
    bernoulli_kl, binomial_cdf, binomial_pmf, binomial_quantile, communication_lower_bound, critical_budget_laplace,
    critical_budget_rr, distributed_composite_test, distributed_simple_test, individual_power_binary,
    laplace_sum_test_power, power_curve, rr_collective_power, rr_lower_bound_closed_form, rr_privatized_kl,
    scaled_log_ratio, test_schedule, CalibrationSample, CompositeSpec, Mechanism, ThresholdRule,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

#[test]
fn individual_power_small_miss() {
    // 1 − p < α: p + (1 − p)(α − 1 + p)/p.
    let v = individual_power_binary(0.97, 0.05).unwrap();
    assert_eq!(v, 0.97 + 0.03 * (0.05 - 0.03) / 0.97);
    assert_abs_diff_eq!(v, 0.97062, epsilon = 1e-5);
}

#[test]
fn individual_power_equal_miss() {
    assert_eq!(individual_power_binary(0.95, 0.05).unwrap(), 0.95);
}

#[test]
fn individual_power_large_miss() {
    // 1 − p > α: p·α/(1 − p).
    assert_eq!(individual_power_binary(0.7, 0.05).unwrap(), 0.7 * 0.05 / (1.0 - 0.7));
    assert!(individual_power_binary(0.5, 0.05).is_err());
    assert!(individual_power_binary(0.7, 0.0).is_err());
}

#[test]
fn binomial_helpers_match_statrs() {
    for (n, q) in [(10u64, 0.3), (57, 0.71), (200, 0.5)] {
        let b = Binomial::new(q, n).unwrap();
        let total: f64 = (0..=n).map(|k| binomial_pmf(n, q, k)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        for k in [0, n / 3, n / 2, n - 1] {
            assert_abs_diff_eq!(binomial_cdf(n, q, k), b.cdf(k), epsilon = 1e-10);
        }
        for u in [0.05, 0.5, 0.95] {
            assert_eq!(binomial_quantile(n, q, u), b.inverse_cdf(u));
        }
    }
}

#[test]
fn rr_power_limits() {
    // No privacy loss allowed: reports are fair coins, power equals α at most.
    let none = rr_collective_power(50, 0.8, 0.0, 0.05).unwrap();
    assert!(none <= 0.05 + 1e-12);
    // No noise: the plain binomial test.
    let exact = rr_collective_power(50, 0.8, 1e3, 0.05).unwrap();
    let null = Binomial::new(0.2, 50).unwrap();
    let cut = null.inverse_cdf(0.95);
    let alt = Binomial::new(0.8, 50).unwrap();
    assert_abs_diff_eq!(exact, 1.0 - alt.cdf(cut), epsilon = 1e-12);
    // Power grows with ε.
    let mut last = 0.0;
    for eps in [0.05, 0.2, 0.5, 1.0, 3.0] {
        let p = rr_collective_power(100, 0.7, eps, 0.05).unwrap();
        assert!(p >= last - 1e-12);
        last = p;
    }
}

#[test]
fn rr_critical_budget_by_brute_grid() {
    let crit = critical_budget_rr(100, 0.7, 0.05).unwrap();
    assert!(!crit.at_lower_bound && !crit.not_reached);
    let beta_ind = individual_power_binary(0.7, 0.05).unwrap();
    // Independent power: reject when the count exceeds the null quantile.
    let wins = |eps: f64| {
        let q0 = 0.7 * flip_probability(eps) + 0.3 * (1.0 - flip_probability(eps));
        let cut = Binomial::new(q0, 100).unwrap().inverse_cdf(0.95);
        1.0 - Binomial::new(1.0 - q0, 100).unwrap().cdf(cut) >= beta_ind
    };
    assert!(wins(crit.epsilon));
    assert!(!wins(crit.epsilon - 2e-4));
    assert!(crit.epsilon < 1.0);
    let larger = critical_budget_rr(200, 0.7, 0.05).unwrap();
    assert!(larger.epsilon < crit.epsilon);
}

#[test]
fn laplace_power_limits() {
    let mc = 10_000;
    // Noise-free limit is the likelihood-ratio test on the count.
    let free = laplace_sum_test_power(30, 0.7, f64::INFINITY, 0.05, mc, 1).unwrap();
    let tiny = laplace_sum_test_power(30, 0.7, 1e-3, 0.05, mc, 1).unwrap();
    assert!(free > 0.9, "{free}");
    assert!((tiny - 0.05).abs() < 0.02, "{tiny}");
    assert!(laplace_sum_test_power(30, 0.7, 1.0, 0.05, 100, 1).is_err());
    let crit = critical_budget_laplace(50, 0.7, 0.05, mc, 2).unwrap();
    assert!(crit.epsilon < 1.0);
}

#[test]
fn power_curve_carries_benchmark() {
    let curve = power_curve(Mechanism::Rr, 50, 0.7, 0.05, &[0.1, 1.0, 5.0], 0, 0).unwrap();
    assert_eq!(curve.points.len(), 3);
    assert_eq!(curve.beta_ind, individual_power_binary(0.7, 0.05).unwrap());
    assert_eq!(curve.seed, None);
    assert!(power_curve(Mechanism::Laplace, 50, 0.7, 0.05, &[1.0], 10, 0).is_err());
}

#[test]
fn lower_bound_formulas() {
    assert_abs_diff_eq!(bernoulli_kl(0.7, 0.5), 0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln(), epsilon = 1e-15);
    let b = communication_lower_bound(&[0.1, 0.2, 0.2], 0.05, 0.8, 3).unwrap();
    assert_abs_diff_eq!(b.value, 0.15 * 3.0 / (2.0 * 0.5), epsilon = 1e-12);
    assert!(communication_lower_bound(&[0.0], 0.05, 0.8, 2).unwrap().unbounded);
    assert_eq!(communication_lower_bound(&[0.1], 0.5, 0.5, 2).unwrap().value, 0.0);
    // RR shrinks the gap by 1 − 2·flip = tanh(ε/2).
    let kl = rr_privatized_kl(1.0, 0.4).unwrap();
    assert_abs_diff_eq!(kl, bernoulli_kl(0.5 + 0.2 * (0.5f64).tanh(), 0.5), epsilon = 1e-15);
}

#[test]
fn closed_form_scales_as_inverse_square() {
    let a = rr_lower_bound_closed_form(0.01, 0.4, 0.05, 0.8, 2, 10).unwrap();
    let b = rr_lower_bound_closed_form(0.1, 0.4, 0.05, 0.8, 2, 10).unwrap();
    let slope = (b.ln() - a.ln()) / (0.1f64.ln() - 0.01f64.ln());
    assert!((slope + 2.0).abs() < 0.01, "{slope}");
    assert!(rr_lower_bound_closed_form(0.0, 0.4, 0.05, 0.8, 2, 10).is_err());
}

#[test]
fn simple_statistic_without_noise() {
    // With no noise and one round, log-beliefs after T lazy steps on a
    // complete graph are 2^(T−1)·(1/n)·Σ_i ψ_i(0) plus a vanishing
    // disagreement, so the scaled ratio approaches Σ_i log(γ_i(1)/γ_i(0)).
    let net = Network::complete(4).unwrap();
    let log_gamma = vec![vec![-10.0, -9.0], vec![-5.0, -5.5], vec![-3.0, -2.0], vec![-7.0, -6.0]];
    let s = MleSchedule::fixed(1, 20, 0.0, 1.0).unwrap();
    let gm = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(0), RunOptions::default()).unwrap();
    let stat = scaled_log_ratio(&gm, 0).unwrap();
    // Residual disagreement: n·(d₀ − mean)/2^(T−1) ≈ 3e-6.
    assert_abs_diff_eq!(stat, 2.0 * 2.5, epsilon = 1e-5);
    let out = distributed_simple_test(&gm, 3.0, 0.05, 0).unwrap();
    assert!(out.reject);
    assert_eq!(out.threshold, 2.0);
    let three = vec![vec![-1.0, -2.0, -3.0]; 4];
    let gm3 = mle_from_log_likelihoods(&three, &net, &s, &Streams::new(0), RunOptions::default()).unwrap();
    assert!(scaled_log_ratio(&gm3, 0).is_err());
}

#[test]
fn test_schedule_uses_half_alpha() {
    let net = Network::complete(5).unwrap();
    let c = Constants { gamma: 5.0, l: 3.0, q: 0.5, delta: 1.0 };
    let s = test_schedule(1.0, 0.1, &c, &net, &ScheduleOverrides::default()).unwrap();
    // K = ln(1/0.05) = 2.996 → 3.
    assert_eq!(s.rounds, 3);
    assert_eq!(s.rho_gm, 1.0);
}

#[test]
fn calibration_sample_quantiles() {
    let c = CalibrationSample::draw(3, 2, 0.0, 20_000, 9).unwrap();
    // Without noise the sample is χ²₃; its 0.975 quantile is 9.348.
    assert!((c.threshold(0.05) - 9.348).abs() < 0.3, "{}", c.threshold(0.05));
    assert_abs_diff_eq!(c.p_value(f64::NEG_INFINITY), 1.0);
    assert_eq!(c.p_value(f64::INFINITY), 0.0);
    assert!(c.matches(3, 2, 0.0));
    assert!(!c.matches(3, 2, 1.0));
    assert!(CalibrationSample::draw(3, 2, 1.0, 10, 0).is_err());
}

#[test]
fn composite_test_runs_and_reports() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let datasets: Vec<Vec<SurvivalRecord>> =
        (0..3).map(|_| synth_survival(300, -(2f64.ln()), 0.0, &mut rng).unwrap()).collect();
    let net = Network::complete(3).unwrap();
    let spec = CompositeSpec {
        epsilon: 1.0,
        alpha: 0.05,
        b_theta: 1.0,
        b_x: 1.0,
        ridge: 0.05,
        rule: ThresholdRule::Calibrated { mc: 5_000, seed: 1 },
        overrides: ScheduleOverrides::default(),
    };
    let out = distributed_composite_test(&datasets, &net, &spec, &Streams::new(1)).unwrap();
    assert!(out.centralized_statistic > 0.0);
    assert!(out.p_value_calibrated.is_some());
    assert!(out.max_residual <= 1e-9);
    assert!(out.fits.iter().all(|f| f.theta < 0.0));
    let wilks = CompositeSpec { rule: ThresholdRule::Wilks, ..spec };
    let w = distributed_composite_test(&datasets, &net, &wilks, &Streams::new(1)).unwrap();
    assert_eq!(w.outcome.threshold, w.wilks_threshold);
    assert!(w.p_value_calibrated.is_none());
    // Same streams, same statistic whatever the rule.
    assert_eq!(w.outcome.statistic, out.outcome.statistic);
}
