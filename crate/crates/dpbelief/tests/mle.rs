use approx::assert_abs_diff_eq;
use dpbelief::graph::Network;
use dpbelief::mle::{
    compute_mle_schedule, compute_threshold_schedule, mle_from_log_likelihoods, nonprivate_from_log_likelihoods,
    separability_check, tvd_series, MleSchedule, MleTargets, RunOptions, ScheduleOverrides, ThresholdSpec,
};
use dpbelief::models::{centralized_argmax, Constants};
use dpbelief::numeric::logsumexp;
use dpbelief::rng::Streams;
use dpbelief::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn constants() -> Constants {
    Constants { gamma: 10.0, l: 5.0, q: 0.8, delta: 2.0 * 2f64.ln() }
}

fn targets(epsilon: f64, alpha: f64, beta: f64, star: Option<usize>) -> MleTargets {
    MleTargets { epsilon, alpha, beta, theta_star_size: star }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let z = logsumexp(row);
    row.iter().map(|v| v - z).collect()
}

fn random_log_gamma(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.random_range(-30.0..-1.0)).collect()).collect()
}

#[test]
fn round_count_examples() {
    let net = Network::complete(5).unwrap();
    // max{ln(1/0.05), ln(1/0.1)} = 2.996 → 3.
    let s = compute_mle_schedule(&targets(1.0, 0.05, 0.9, Some(1)), &constants(), &net, 2, &Default::default()).unwrap();
    assert_eq!(s.rounds, 3);
    // Noise scale Δ·K·|Θ|/ε.
    assert_abs_diff_eq!(s.noise_scale, 2.0 * 2f64.ln() * 3.0 * 2.0, epsilon = 1e-12);
    // Loose targets: both logs are tiny, K is floored at 1.
    let s = compute_mle_schedule(&targets(1.0, 0.99, 0.01, Some(1)), &constants(), &net, 2, &Default::default()).unwrap();
    assert_eq!(s.rounds, 1);
    // Unknown |Θ*|: |Θ| ln(|Θ|/min(α, 1−β)) = 3 ln 30 = 10.2 → 11.
    let s = compute_mle_schedule(&targets(1.0, 0.1, 0.9, None), &constants(), &net, 3, &Default::default()).unwrap();
    assert_eq!(s.rounds, 11);
}

#[test]
fn iterations_grow_as_budget_shrinks() {
    let net = Network::cycle(7).unwrap();
    let mut last = 0;
    for eps in [10.0, 4.0, 1.0, 0.5, 0.1, 0.01, 0.001] {
        let s = compute_mle_schedule(&targets(eps, 0.1, 0.9, Some(1)), &constants(), &net, 3, &Default::default()).unwrap();
        assert!(s.iterations >= last, "ε = {eps}: {} < {last}", s.iterations);
        assert!(s.iterations >= s.iterations_am.min(s.iterations_gm));
        last = s.iterations;
    }
    assert!(last > 1);
}

#[test]
fn schedule_rejects_bad_inputs() {
    let net = Network::complete(3).unwrap();
    let c = constants();
    let none = ScheduleOverrides::default();
    assert!(compute_mle_schedule(&targets(0.0, 0.1, 0.9, None), &c, &net, 2, &none).is_err());
    assert!(compute_mle_schedule(&targets(1.0, 1.0, 0.9, None), &c, &net, 2, &none).is_err());
    assert!(compute_mle_schedule(&targets(1.0, 0.1, 0.9, Some(2)), &c, &net, 2, &none).is_err());
    assert!(compute_mle_schedule(&targets(1.0, 0.1, 0.9, None), &c, &net, 1, &none).is_err());
    let flat = Constants { l: 0.0, ..c };
    assert!(matches!(compute_mle_schedule(&targets(1.0, 0.1, 0.9, None), &flat, &net, 2, &none), Err(Error::NotIdentifiable)));
    let zero = ScheduleOverrides { rounds: Some(0), ..Default::default() };
    assert!(compute_mle_schedule(&targets(1.0, 0.1, 0.9, None), &c, &net, 2, &zero).is_err());
}

#[test]
fn overrides_take_precedence() {
    let net = Network::complete(4).unwrap();
    let o = ScheduleOverrides {
        rounds: Some(9),
        iterations: Some(17),
        rho_am: Some(0.5),
        rho_gm: Some(2.0),
        rho_threshold: None,
        noise_scale: Some(0.0),
    };
    let s = compute_mle_schedule(&targets(1.0, 0.1, 0.9, None), &constants(), &net, 3, &o).unwrap();
    assert_eq!((s.rounds, s.iterations, s.noise_scale, s.rho_am, s.rho_gm), (9, 17, 0.0, 0.5, 2.0));
    assert_abs_diff_eq!(s.tau_gm, 1.0 / (1.0 + 2f64.exp()), epsilon = 1e-15);
}

#[test]
fn single_agent_needs_no_consensus() {
    let net = Network::complete(1).unwrap();
    let s = compute_mle_schedule(&targets(1.0, 0.1, 0.9, Some(1)), &constants(), &net, 2, &Default::default()).unwrap();
    assert_eq!(s.rho_gm, 1.0);
    // ln(2ϱn/l)/ln 2 = ln(0.4)/ln 2 < 1 → a single step.
    assert_eq!(s.iterations, 1);
    let log_gamma = vec![vec![-3.0, -1.0, -2.0]];
    let fixed = MleSchedule::fixed(1, 4, 0.0, 1.0).unwrap();
    let r = mle_from_log_likelihoods(&log_gamma, &net, &fixed, &Streams::new(0), RunOptions::default()).unwrap();
    // One agent with weight 1: ψ ← 2ψ each step, so ν ∝ γ^16.
    let expected = log_softmax(&[-48.0, -16.0, -32.0]);
    for s in 0..3 {
        assert_abs_diff_eq!(r.log_gm[0][s], expected[s], epsilon = 1e-12);
    }
    assert_eq!(r.gm_sets[0], vec![1]);
}

#[test]
fn one_step_on_two_agents_by_hand() {
    let net = Network::complete(2).unwrap();
    let log_gamma = vec![vec![0.2f64.ln(), 0.8f64.ln()], vec![0.6f64.ln(), 0.4f64.ln()]];
    let r = nonprivate_from_log_likelihoods(&log_gamma, &net, 1, 1.0, RunOptions { trajectory: true }).unwrap();
    // Weights are 1/2 everywhere, so agent 0 gets ψ₀ + ψ₀/2 + ψ₁/2.
    let a0 = log_softmax(&[1.5 * 0.2f64.ln() + 0.5 * 0.6f64.ln(), 1.5 * 0.8f64.ln() + 0.5 * 0.4f64.ln()]);
    let a1 = log_softmax(&[0.5 * 0.2f64.ln() + 1.5 * 0.6f64.ln(), 0.5 * 0.8f64.ln() + 1.5 * 0.4f64.ln()]);
    for s in 0..2 {
        assert_abs_diff_eq!(r.log_beliefs[0][s], a0[s], epsilon = 1e-14);
        assert_abs_diff_eq!(r.log_beliefs[1][s], a1[s], epsilon = 1e-14);
    }
    assert_eq!(r.trajectory.as_ref().unwrap().len(), 2);
}

#[test]
fn symmetric_agents_give_mirrored_beliefs() {
    let net = Network::complete(2).unwrap();
    let log_gamma = vec![vec![-1.0, -4.0], vec![-4.0, -1.0]];
    assert_eq!(centralized_argmax(&log_gamma, 1e-12), vec![0, 1]);
    let r = nonprivate_from_log_likelihoods(&log_gamma, &net, 30, 1.0, RunOptions::default()).unwrap();
    assert_abs_diff_eq!(r.log_beliefs[0][0], r.log_beliefs[1][1], epsilon = 1e-12);
    assert_abs_diff_eq!(r.log_beliefs[0][1], r.log_beliefs[1][0], epsilon = 1e-12);
}

#[test]
fn zero_noise_matches_centralized_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..40 {
        let n = 1 + case % 5;
        let m = 2 + case % 5;
        let net = Network::cycle(n.max(3)).unwrap();
        let log_gamma = random_log_gamma(net.n(), m, &mut rng);
        let star = centralized_argmax(&log_gamma, 1e-9);
        let s = MleSchedule::fixed(3, 60, 0.0, 1.0).unwrap();
        let r = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(case as u64), RunOptions::default()).unwrap();
        for i in 0..net.n() {
            assert_eq!(r.gm_sets[i], star, "case {case}");
            assert_eq!(r.am_sets[i], star, "case {case}");
        }
        let np = nonprivate_from_log_likelihoods(&log_gamma, &net, 60, 1.0, RunOptions::default()).unwrap();
        assert!(np.sets.iter().all(|set| *set == star));
    }
}

#[test]
fn runs_are_reproducible_per_seed() {
    let net = Network::complete(3).unwrap();
    let log_gamma = vec![vec![-1.0, -2.0]; 3];
    let s = MleSchedule::fixed(4, 5, 3.0, 1.0).unwrap();
    let a = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(7), RunOptions::default()).unwrap();
    let b = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(7), RunOptions::default()).unwrap();
    let c = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(8), RunOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.terminal, c.terminal);
}

#[test]
fn threshold_defaults_for_two_states() {
    let net = Network::complete(5).unwrap();
    let spec = ThresholdSpec { single: true, ..Default::default() };
    let s = compute_threshold_schedule(&targets(1.0, 0.1, 0.9, Some(1)), &constants(), &net, 2, &spec, &Default::default())
        .unwrap();
    let p = s.threshold.unwrap();
    assert_abs_diff_eq!(p.q1, 0.05, epsilon = 1e-15);
    assert_abs_diff_eq!(p.q2, 0.95, epsilon = 1e-15);
    assert_abs_diff_eq!(p.tau1, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(p.tau2, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(p.pi1, 9.0, epsilon = 1e-12);
    // K = max{ln(2/0.1)/(2·81), ln(2/0.1)/(2·(9/19)²)} = 6.68 → 7.
    assert_eq!(s.rounds, 7);
    assert_eq!(p.rho1, p.rho2);
}

#[test]
fn infinite_pi2_returns_every_state() {
    let net = Network::complete(3).unwrap();
    let spec = ThresholdSpec { pi2: Some(f64::INFINITY), ..Default::default() };
    let s = compute_threshold_schedule(&targets(1.0, 0.1, 0.9, Some(1)), &constants(), &net, 4, &spec, &Default::default())
        .unwrap();
    let log_gamma = vec![vec![-1.0, -9.0, -20.0, -5.0]; 3];
    let r = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(1), RunOptions::default()).unwrap();
    for set in &r.threshold.unwrap().sets2 {
        assert_eq!(set, &vec![0, 1, 2, 3]);
    }
    // A finite π₂ above 1 pushes τ₂ below zero: rejected.
    let bad = ThresholdSpec { pi2: Some(1.5), ..Default::default() };
    assert!(compute_threshold_schedule(&targets(1.0, 0.1, 0.9, Some(1)), &constants(), &net, 4, &bad, &Default::default())
        .is_err());
}

#[test]
fn zero_noise_two_threshold_is_exact() {
    let net = Network::path(4).unwrap();
    let log_gamma = vec![vec![-2.0, -1.0, -6.0]; 4];
    let spec = ThresholdSpec { single: true, ..Default::default() };
    let o = ScheduleOverrides { noise_scale: Some(0.0), iterations: Some(40), ..Default::default() };
    let s = compute_threshold_schedule(&targets(1.0, 0.1, 0.9, Some(1)), &constants(), &net, 3, &spec, &o).unwrap();
    let r = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(2), RunOptions::default()).unwrap();
    let out = r.threshold.unwrap();
    for i in 0..4 {
        assert_eq!(out.sets1[i], vec![1]);
        assert_eq!(out.sets2[i], vec![1]);
        assert_eq!(out.freq1[i], vec![0.0, 1.0, 0.0]);
    }
}

#[test]
fn separability_rule() {
    for m in 1..=4 {
        assert!(separability_check(m, 0.5).unwrap());
    }
    // |Θ| = 8: the excluded band is 1/2 ± √(1/2)/2 ≈ [0.146, 0.854].
    assert!(separability_check(8, 0.125).unwrap());
    assert!(!separability_check(8, 0.5).unwrap());
    assert!(separability_check(8, 0.875).unwrap());
    assert!(separability_check(8, 1.5).is_err());
}

#[test]
fn tvd_series_vanishes_without_noise() {
    let net = Network::complete(3).unwrap();
    let log_gamma = vec![vec![-1.0, -2.0], vec![-1.5, -1.0], vec![-3.0, -1.0]];
    let s = MleSchedule::fixed(2, 6, 0.0, 1.0).unwrap();
    let r = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(3), RunOptions { trajectory: true }).unwrap();
    let np = nonprivate_from_log_likelihoods(&log_gamma, &net, 6, 1.0, RunOptions { trajectory: true }).unwrap();
    let tvd = tvd_series(r.trajectory.as_ref().unwrap(), np.trajectory.as_ref().unwrap());
    assert_eq!(tvd.len(), 7);
    assert!(tvd.iter().all(|v| v.abs() < 1e-12));
}

proptest! {
    #[test]
    fn beliefs_stay_normalised(seed in any::<u64>(), n in 1usize..6, m in 2usize..6, t in 1usize..40, b in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = if n < 3 { Network::complete(n).unwrap() } else { Network::cycle(n).unwrap() };
        let log_gamma = random_log_gamma(n, m, &mut rng);
        let s = MleSchedule::fixed(3, t, b, 1.0).unwrap();
        let r = mle_from_log_likelihoods(&log_gamma, &net, &s, &Streams::new(seed), RunOptions::default()).unwrap();
        prop_assert!(r.max_residual <= 1e-9);
        for round in &r.terminal {
            for row in round {
                prop_assert!(logsumexp(row).abs() <= 1e-9);
            }
        }
        for i in 0..n {
            prop_assert!(logsumexp(&r.log_am[i]).abs() <= 1e-9);
            prop_assert!(logsumexp(&r.log_gm[i]).abs() <= 1e-9);
        }
    }
}
