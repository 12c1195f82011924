//! Hypothesis testing: power analysis, distributed tests and lower bounds.

pub mod htest;
pub mod lower_bound;
pub mod power;

pub use htest::{
    composite_log_likelihoods, composite_schedule, distributed_composite_test, distributed_composite_test_with,
    distributed_simple_test, null_quantile, scaled_log_ratio, CalibrationSample,
    test_schedule, CompositeOutcome, CompositeSpec, TestFamily, TestOutcome, ThresholdRule,
};
pub use lower_bound::{bernoulli_kl, communication_lower_bound, rr_lower_bound_closed_form, rr_privatized_kl, LowerBound};
pub use power::{
    binomial_cdf, binomial_pmf, binomial_quantile, critical_budget_laplace, critical_budget_rr, individual_power_binary,
    laplace_sum_test_power, power_curve, rr_collective_power, CriticalBudget, LaplaceSumSample, Mechanism, PowerCurve,
};
