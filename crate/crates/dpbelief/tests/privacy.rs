use approx::assert_abs_diff_eq;
use dpbelief::models::{BernoulliModel, CoxModel, SignalModel, SurvivalRecord};
use dpbelief::privacy::{
    cox_sensitivity, dp_ratio_check, empirical_sensitivity, flip_probability, laplace_sample, randomized_response, DpVerdict,
    PrivacyBudget,
};
use dpbelief::rng::{Purpose, StreamKey, Streams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn laplace_is_reproducible() {
    let a: Vec<f64> = {
        let mut r = rng(4);
        (0..10).map(|_| laplace_sample(1.0, &mut r).unwrap()).collect()
    };
    let b: Vec<f64> = {
        let mut r = rng(4);
        (0..10).map(|_| laplace_sample(1.0, &mut r).unwrap()).collect()
    };
    assert_eq!(a, b);
    assert!(laplace_sample(0.0, &mut rng(1)).is_err());
    assert!(laplace_sample(-1.0, &mut rng(1)).is_err());
}

#[test]
fn laplace_moments() {
    let mut r = rng(17);
    let n = 1_000_000;
    let draws: Vec<f64> = (0..n).map(|_| laplace_sample(2.0, &mut r).unwrap()).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // Var = 2b² = 8.
    assert!((var - 8.0).abs() / 8.0 < 0.02, "variance {var}");
    assert!(mean.abs() <= 4.0 * 8f64.sqrt() / (n as f64).sqrt(), "mean {mean}");
}

#[test]
fn schedule_scale_arithmetic() {
    // Δ·K·|Θ|/ε with Δ = 2 log 2, K = 3, |Θ| = 2, ε = 1.
    let budget = PrivacyBudget::new(1.0, 3 * 2).unwrap();
    let noise = budget.laplace(2.0 * 2f64.ln());
    assert_abs_diff_eq!(noise.scale, 12.0 * 2f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(noise.scale, 8.317766166719343, epsilon = 1e-9);
}

#[test]
fn budget_scale_grows_linearly_in_splits() {
    let one = PrivacyBudget::new(2.0, 1).unwrap().laplace(1.0).scale;
    for m in 1..6 {
        let b = PrivacyBudget::new(2.0, m).unwrap();
        assert_abs_diff_eq!(b.per_release() * m as f64, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.laplace(1.0).scale, one * m as f64, epsilon = 1e-12);
    }
    assert!(PrivacyBudget::new(0.0, 1).is_err());
    assert!(PrivacyBudget::new(1.0, 0).is_err());
}

#[test]
fn flip_probability_values() {
    assert_abs_diff_eq!(flip_probability(0.0), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(flip_probability(1.0), 1.0 / (1.0 + 1f64.exp()), epsilon = 1e-15);
    assert_abs_diff_eq!(flip_probability(1.0), 0.26894, epsilon = 1e-5);
    assert!(flip_probability(800.0) < 1e-300);
    assert_eq!(randomized_response(1, f64::INFINITY, &mut rng(0)).unwrap(), 1);
    assert!(randomized_response(2, 1.0, &mut rng(0)).is_err());
}

#[test]
fn randomized_response_flip_frequency() {
    let mut r = rng(99);
    let trials = 100_000;
    let eps = 0.7;
    let flips = (0..trials).filter(|_| randomized_response(1, eps, &mut r).unwrap() == 0).count();
    let p = flip_probability(eps);
    let sd = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((flips as f64 / trials as f64 - p).abs() <= 3.0 * sd);
}

#[test]
fn laplace_mechanism_passes_ratio_check() {
    let report = dp_ratio_check(
        |second, r: &mut ChaCha8Rng| if second { 1.0 } else { 0.0 } + laplace_sample(1.0, r).unwrap(),
        1.0,
        1_000_000,
        &mut rng(5),
    );
    assert_eq!(report.verdict, DpVerdict::Pass, "{report:?}");
}

#[test]
fn randomized_response_ratio_is_e() {
    let report = dp_ratio_check(
        |second, r: &mut ChaCha8Rng| f64::from(randomized_response(u8::from(second), 1.0, r).unwrap()),
        1.0,
        200_000,
        &mut rng(6),
    );
    assert_eq!(report.verdict, DpVerdict::Pass);
    assert!((report.worst_log_ratio - 1.0).abs() < 0.05, "{report:?}");
}

#[test]
fn identity_mechanism_fails_ratio_check() {
    let report = dp_ratio_check(|second, _r: &mut ChaCha8Rng| if second { 1.0 } else { 0.0 }, 1.0, 10_000, &mut rng(7));
    assert_eq!(report.verdict, DpVerdict::Fail);
    assert!(report.worst_log_ratio.is_infinite());
}

#[test]
fn cox_sensitivity_values() {
    assert_eq!(cox_sensitivity(1.0, 1.0).unwrap(), 2.0);
    assert_abs_diff_eq!(cox_sensitivity(2f64.ln(), 1.0).unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-15);
    assert_eq!(cox_sensitivity(0.0, 1.0).unwrap(), 0.0);
    assert!(cox_sensitivity(-1.0, 1.0).is_err());
}

#[test]
fn bernoulli_single_flip_sensitivity() {
    let model = BernoulliModel::new(vec![0.3, 0.8]).unwrap();
    let mut r = rng(8);
    let data = model.sample(1, 40, &mut r);
    for state in 0..2 {
        let p: f64 = [0.3, 0.8][state];
        let exact = (p.ln() - (1.0 - p).ln()).abs();
        let observed = empirical_sensitivity(&model, &data, state, 200, &mut r).unwrap();
        assert_abs_diff_eq!(observed, exact, epsilon = 1e-12);
        assert_abs_diff_eq!(model.sensitivity(state), exact, epsilon = 1e-12);
    }
}

#[test]
fn identical_records_have_zero_sensitivity() {
    // A one-state Bernoulli model at p = 1/2 gives the same likelihood to
    // every bit, so any replacement leaves it unchanged.
    let model = BernoulliModel::new(vec![0.5]).unwrap();
    let data = vec![1u8; 10];
    assert_eq!(empirical_sensitivity(&model, &data, 0, 50, &mut rng(9)).unwrap(), 0.0);
}

#[test]
fn cox_removal_of_early_event_exceeds_analytic_bound() {
    // At θ = 0 every risk-set term is −log|R|. Removing the earliest event
    // from m records with distinct times drops exactly log m, which exceeds
    // 2·B_θ·B_x = 2 once m > e².
    let m = 30;
    let model = CoxModel::new(vec![0.0], 1.0, 1.0).unwrap();
    let data: Vec<SurvivalRecord> =
        (0..m).map(|j| SurvivalRecord { time: j as f64 + 1.0, event: 1, covariate: 0.0 }).collect();
    let full = model.log_likelihood(&data, 0).unwrap();
    let dropped = model.log_likelihood(&data[1..], 0).unwrap();
    assert_abs_diff_eq!(full - dropped, -(m as f64).ln(), epsilon = 1e-10);
    assert!((full - dropped).abs() > cox_sensitivity(1.0, 1.0).unwrap());
}

#[test]
fn cox_empirical_sensitivity_is_finite_and_bounded_below_by_zero() {
    let model = CoxModel::new(vec![-1.0, 0.0, 1.0], 1.0, 1.0).unwrap();
    let streams = Streams::new(3);
    for k in 0..5 {
        let mut r = streams.rng(Purpose::Misc, StreamKey::agent(k));
        let data: Vec<_> = (0..30).map(|_| model.random_record(&mut r)).collect();
        for s in 0..3 {
            let v = empirical_sensitivity(&model, &data, s, 50, &mut r).unwrap();
            assert!(v.is_finite() && v >= 0.0, "dataset {k} state {s}: {v}");
        }
    }
}
