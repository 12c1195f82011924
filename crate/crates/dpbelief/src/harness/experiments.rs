//! Experiment drivers behind the CLI subcommands.
//!
//! Each driver resolves constants and schedules once, runs the replications
//! in parallel and returns a [`RunReport`] plus the CSV files it produced.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{induced_belief, run_first_order, FirstOrderConfig, ScalarObjective};
use crate::error::{Error, Result};
use crate::graph::{Network, Topology};
use crate::harness::config::{ArrivalKind, ExperimentConfig, ModelKind};
use crate::harness::data::{load_survival_csv, write_survival_csv, Shards};
use crate::harness::montecarlo::replicate;
use crate::harness::report::{ReplicationRecord, RunReport};
use crate::mle::{
    compute_mle_schedule, compute_threshold_schedule, mle_from_log_likelihoods, nonprivate_from_log_likelihoods, MleSchedule,
    MleTargets, RunOptions,
};
use crate::models::{
    centralized_argmax, constants_bundle, gamma_bound, log_likelihood_matrix, synth_survival, BernoulliModel, Constants, CoxData,
    SignalModel, SurvivalRecord,
};
use crate::numeric::total_variation;
use crate::online::{compute_online_schedule, ratio_asymptote, run_online, run_online_nonprivate, Arrivals, OnlineTargets, StreamConfig};
use crate::rng::{Purpose, StreamKey, Streams};
use crate::testing::{
    communication_lower_bound, composite_schedule, distributed_composite_test_with, distributed_simple_test,
    null_quantile, power_curve, rr_lower_bound_closed_form, rr_privatized_kl, test_schedule, CalibrationSample, CompositeSpec,
    Mechanism, PowerCurve, ThresholdRule,
};

/// Tolerance for ties in the centralised argmax.
const ARGMAX_TOL: f64 = 1e-9;

/// A report and the named text files that go next to it.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: RunReport,
    pub files: Vec<(String, String)>,
}

impl ExperimentOutput {
    /// Write `report.json` and the CSV files into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json()?)?;
        for (name, text) in &self.files {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, t)| t.as_str())
    }
}

/// Estimator run by the `mle` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MleAlgorithm {
    AmGm,
    TwoThreshold,
    NonPrivate,
}

/// Flavour of the `htest` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMode {
    Simple,
    Composite,
}

/// Where per-agent datasets come from.
enum Source<R> {
    /// Fresh draws from the model at the true state every replication.
    Synthetic { per_agent: usize },
    /// The same datasets every replication (only the noise changes).
    Fixed(Vec<Vec<R>>),
}

impl<R: Clone> Source<R> {
    fn sizes(&self, n: usize) -> Vec<f64> {
        match self {
            Source::Synthetic { per_agent } => vec![*per_agent as f64; n],
            Source::Fixed(d) => d.iter().map(|v| v.len() as f64).collect(),
        }
    }

    fn draw<M: SignalModel<Record = R>>(&self, models: &[M], truth: usize, streams: &Streams) -> Vec<Vec<R>> {
        match self {
            Source::Synthetic { per_agent } => models
                .iter()
                .enumerate()
                .map(|(i, m)| m.sample(truth, *per_agent, &mut streams.rng(Purpose::Data, StreamKey::agent(i))))
                .collect(),
            Source::Fixed(d) => d.clone(),
        }
    }
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn network_json(cfg: &ExperimentConfig, net: &Network) -> serde_json::Value {
    json!({
        "n": net.n(),
        "topology": cfg.network.topology,
        "slem": net.slem(),
        "slem_lazy": net.slem_lazy(),
        "diameter": net.diameter(),
    })
}

fn divergence_rng(streams: &Streams) -> rand_chacha::ChaCha8Rng {
    streams.rng(Purpose::Divergence, StreamKey::default())
}

fn base_constants<M: SignalModel>(cfg: &ExperimentConfig, models: &[M], xi: &[f64], theta_star: &[usize], streams: &Streams) -> Result<Constants> {
    let mut c = constants_bundle(models, None, xi, theta_star, cfg.algorithm.mc, &mut divergence_rng(streams))?;
    if let Some(s) = cfg.privacy.sensitivity {
        c.delta = s;
    }
    Ok(c)
}

fn mle_targets(cfg: &ExperimentConfig) -> MleTargets {
    MleTargets {
        epsilon: cfg.privacy.epsilon,
        alpha: cfg.targets.alpha,
        beta: cfg.targets.beta,
        theta_star_size: cfg.targets.theta_star_size,
    }
}

fn subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|s| b.contains(s))
}

/// Survival shards from the configured CSV file.
fn survival_shards(cfg: &ExperimentConfig, n: usize) -> Result<Option<Shards>> {
    match &cfg.model.data_file {
        Some(path) => Ok(Some(load_survival_csv(path, n, cfg.model.b_x, cfg.seed)?)),
        None => Ok(None),
    }
}

macro_rules! with_model {
    ($cfg:expr, $n:expr, |$model:ident, $source:ident| $body:expr) => {
        match $cfg.model.kind {
            ModelKind::Bernoulli => {
                let $model = $cfg.bernoulli()?;
                let $source = Source::Synthetic { per_agent: $cfg.model.signals_per_agent };
                $body
            }
            ModelKind::Categorical => {
                let $model = $cfg.categorical()?;
                let $source = Source::Synthetic { per_agent: $cfg.model.signals_per_agent };
                $body
            }
            ModelKind::Gaussian => {
                let $model = $cfg.gaussian()?;
                let $source = Source::Synthetic { per_agent: $cfg.model.signals_per_agent };
                $body
            }
            ModelKind::Cox => {
                let $model = $cfg.cox()?;
                let $source = match survival_shards($cfg, $n)? {
                    Some(d) => Source::Fixed(d),
                    None => Source::Synthetic { per_agent: $cfg.model.signals_per_agent },
                };
                $body
            }
        }
    };
}

/// Rows `t,agent,tvd` for every agent plus `t,mean,tvd`, averaged over
/// replications. `series[r][t][i]`.
fn tvd_csv(series: &[Vec<Vec<f64>>]) -> String {
    let mut out = String::from("t,agent,tvd\n");
    let Some(first) = series.first() else { return out };
    let steps = series.iter().map(Vec::len).min().unwrap_or(0);
    let agents = first.first().map_or(0, Vec::len);
    let reps = series.len() as f64;
    for t in 0..steps {
        let per_agent: Vec<f64> = (0..agents).map(|i| series.iter().map(|s| s[t][i]).sum::<f64>() / reps).collect();
        for (i, v) in per_agent.iter().enumerate() {
            let _ = writeln!(out, "{t},{i},{v}");
        }
        let mean = per_agent.iter().sum::<f64>() / agents.max(1) as f64;
        let _ = writeln!(out, "{t},mean,{mean}");
    }
    out
}

fn tvd_between(private: &[Vec<Vec<f64>>], baseline: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    private
        .iter()
        .zip(baseline)
        .map(|(p, q)| {
            p.iter()
                .zip(q)
                .map(|(a, b)| {
                    let a: Vec<f64> = a.iter().map(|v| v.exp()).collect();
                    let b: Vec<f64> = b.iter().map(|v| v.exp()).collect();
                    total_variation(&a, &b)
                })
                .collect()
        })
        .collect()
}

const BELIEFS_HEADER: &str = "round,agent,state,t,log_belief\n";

fn beliefs_rows(out: &mut String, round: usize, traj: &[Vec<Vec<f64>>]) {
    for (t, step) in traj.iter().enumerate() {
        for (i, row) in step.iter().enumerate() {
            for (s, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{round},{i},{s},{t},{v}");
            }
        }
    }
}

struct MleRep {
    record: ReplicationRecord,
    schedule: MleSchedule,
    gamma: f64,
    tvd: Option<Vec<Vec<f64>>>,
    beliefs: Option<String>,
}

/// The `mle` command.
pub fn run_mle_experiment(cfg: &ExperimentConfig, algorithm: MleAlgorithm) -> Result<ExperimentOutput> {
    let n = cfg.network.n;
    with_model!(cfg, n, |model, source| mle_generic(cfg, algorithm, model, source))
}

fn mle_generic<M: SignalModel + Clone>(
    cfg: &ExperimentConfig,
    algorithm: MleAlgorithm,
    model: M,
    source: Source<M::Record>,
) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let net = cfg.network()?;
    let n = net.n();
    let models = vec![model; n];
    let streams = Streams::new(cfg.seed);
    let m = models[0].num_states();
    let truth = cfg.model.true_state;
    let base = base_constants(cfg, &models, &source.sizes(n), &[truth], &streams)?;
    let targets = mle_targets(cfg);
    let overrides = cfg.algorithm.overrides();
    let spec = cfg.algorithm.threshold_spec();
    let want_traj = cfg.output.trajectory;
    let setup = secs(start);

    let start = Instant::now();
    let reps = replicate(cfg.replications, &streams, |r, s| {
        let data = source.draw(&models, truth, s);
        let log_gamma = log_likelihood_matrix(&models, &data)?;
        let star = centralized_argmax(&log_gamma, ARGMAX_TOL);
        let constants = Constants { gamma: gamma_bound(&log_gamma), ..base };
        let schedule = match algorithm {
            MleAlgorithm::TwoThreshold => compute_threshold_schedule(&targets, &constants, &net, m, &spec, &overrides)?,
            _ => compute_mle_schedule(&targets, &constants, &net, m, &overrides)?,
        };
        let mut record = ReplicationRecord::new(r);
        record.metric("rounds", schedule.rounds as f64);
        record.metric("iterations", schedule.iterations as f64);
        record.metric("maximisers", star.len() as f64);
        let options = RunOptions { trajectory: want_traj };
        let baseline = nonprivate_from_log_likelihoods(&log_gamma, &net, schedule.iterations, schedule.rho_gm, options)?;
        let mut tvd = None;
        let mut beliefs = None;
        match algorithm {
            MleAlgorithm::NonPrivate => {
                record.flag("exact", baseline.sets.iter().all(|set| set == &star));
                record.metric("max_residual", baseline.max_residual);
                if let (0, Some(traj)) = (r, &baseline.trajectory) {
                    let mut text = String::from(BELIEFS_HEADER);
                    beliefs_rows(&mut text, 0, traj);
                    beliefs = Some(text);
                }
            }
            _ => {
                let res = mle_from_log_likelihoods(&log_gamma, &net, &schedule, s, options)?;
                record.flag("gm_error", !res.gm_within(&star));
                record.flag("am_error", !res.am_covers(&star));
                if let Some(th) = &res.threshold {
                    record.flag("thr1_error", !th.sets1.iter().all(|set| subset(set, &star)));
                    record.flag("thr2_error", !th.sets2.iter().all(|set| subset(&star, set)));
                    record.flag("exact", th.sets1.iter().chain(&th.sets2).all(|set| set == &star));
                }
                record.metric("max_residual", res.max_residual);
                if let (Some(traj), Some(base_traj)) = (&res.trajectory, &baseline.trajectory) {
                    let steps = traj.steps.min(base_traj.len());
                    let series: Vec<Vec<f64>> = (0..steps)
                        .map(|t| {
                            (0..n)
                                .map(|i| {
                                    let q: Vec<f64> = base_traj[t][i].iter().map(|v| v.exp()).collect();
                                    total_variation(&traj.round_average(i, t), &q)
                                })
                                .collect()
                        })
                        .collect();
                    if let Some(last) = series.last() {
                        record.metric("tvd_final", last.iter().sum::<f64>() / n as f64);
                    }
                    tvd = Some(series);
                    if r == 0 {
                        let mut text = String::from(BELIEFS_HEADER);
                        for k in 0..traj.rounds {
                            for t in 0..traj.steps {
                                for i in 0..n {
                                    for st in 0..m {
                                        let _ = writeln!(text, "{k},{i},{st},{t},{}", traj.log_belief(k, i, st, t));
                                    }
                                }
                            }
                        }
                        beliefs = Some(text);
                    }
                }
            }
        }
        Ok(MleRep { record, schedule, gamma: constants.gamma, tvd, beliefs })
    })?;
    let run = secs(start);

    let first = reps.outputs.first().map(|(_, o)| o);
    let parameters = json!({
        "algorithm": algorithm,
        "network": network_json(cfg, &net),
        "constants": to_value(&Constants { gamma: first.map_or(0.0, |o| o.gamma), ..base }),
        "schedule": first.map(|o| to_value(&o.schedule)),
        "targets": to_value(&targets),
    });
    let mut files = Vec::new();
    if let Some(text) = first.and_then(|o| o.beliefs.clone()) {
        files.push(("beliefs.csv".to_string(), text));
    }
    let series: Vec<Vec<Vec<f64>>> = reps.outputs.iter().filter_map(|(_, o)| o.tvd.clone()).collect();
    if !series.is_empty() {
        files.push(("tvd.csv".to_string(), tvd_csv(&series)));
    }
    let records = reps.outputs.into_iter().map(|(_, o)| o.record).collect();
    let mut report = RunReport::new("mle", cfg.seed, parameters, records, reps.aborts);
    report.timings = timings(setup, run);
    Ok(ExperimentOutput { report, files })
}

fn timings(setup: f64, run: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([("setup".to_string(), setup), ("replications".to_string(), run)])
}

fn stream_config(cfg: &ExperimentConfig, n: usize) -> StreamConfig {
    let per = cfg.model.signals_per_agent;
    let arrivals = match cfg.model.arrivals {
        ArrivalKind::Fixed => Arrivals::Fixed(vec![per; n]),
        ArrivalKind::Poisson => Arrivals::Poisson(vec![per as f64; n]),
    };
    StreamConfig { arrivals, true_state: cfg.model.true_state }
}

/// The `online` command.
pub fn run_online_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.model.kind {
        ModelKind::Bernoulli => online_generic(cfg, cfg.bernoulli()?),
        ModelKind::Categorical => online_generic(cfg, cfg.categorical()?),
        ModelKind::Gaussian => online_generic(cfg, cfg.gaussian()?),
        ModelKind::Cox => Err(Error::Config("online learning needs a per-signal model; cox is not supported".into())),
    }
}

struct OnlineRep {
    record: ReplicationRecord,
    ratios: Vec<Vec<f64>>,
    tvd: Option<Vec<Vec<f64>>>,
    beliefs: Option<String>,
}

fn online_generic<M: SignalModel + Clone>(cfg: &ExperimentConfig, model: M) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let net = cfg.network()?;
    let n = net.n();
    let models = vec![model; n];
    let streams = Streams::new(cfg.seed);
    let stream = stream_config(cfg, n);
    let truth = stream.true_state;
    let constants = base_constants(cfg, &models, &stream.means(), &[truth], &streams)?;
    let targets = OnlineTargets { epsilon: cfg.privacy.epsilon, eta: cfg.targets.eta, multiplier: cfg.algorithm.multiplier };
    let schedule = compute_online_schedule(
        &targets,
        &constants,
        &net,
        models[0].num_states(),
        &stream,
        cfg.algorithm.iterations,
        cfg.algorithm.noise_scale,
    )?;
    let asymptote = ratio_asymptote(&models, &stream, cfg.algorithm.mc, &mut streams.rng(Purpose::Divergence, StreamKey::agent(1)))?;
    let want_traj = cfg.output.trajectory;
    let setup = secs(start);

    let start = Instant::now();
    let reps = replicate(cfg.replications, &streams, |r, s| {
        let res = run_online(&models, &stream, &net, &schedule, s, want_traj)?;
        let mut record = ReplicationRecord::new(r);
        record.flag("success", res.success);
        record.metric("max_residual", res.max_residual);
        for (st, v) in res.final_ratios().iter().enumerate() {
            if st != truth {
                record.metric(format!("ratio_{st}"), *v);
            }
        }
        let mut tvd = None;
        let mut beliefs = None;
        if let Some(traj) = &res.trajectory {
            let base = run_online_nonprivate(&models, &stream, &net, schedule.iterations, s, true)?;
            if let Some(base_traj) = &base.trajectory {
                tvd = Some(tvd_between(traj, base_traj));
            }
            if r == 0 {
                let mut text = String::from(BELIEFS_HEADER);
                beliefs_rows(&mut text, 0, traj);
                beliefs = Some(text);
            }
        }
        Ok(OnlineRep { record, ratios: res.ratio_series, tvd, beliefs })
    })?;
    let run = secs(start);

    let mut files = Vec::new();
    let outputs: Vec<&OnlineRep> = reps.outputs.iter().map(|(_, o)| o).collect();
    if let Some(text) = outputs.first().and_then(|o| o.beliefs.clone()) {
        files.push(("beliefs.csv".to_string(), text));
    }
    let series: Vec<Vec<Vec<f64>>> = outputs.iter().filter_map(|o| o.tvd.clone()).collect();
    if !series.is_empty() {
        files.push(("tvd.csv".to_string(), tvd_csv(&series)));
    }
    if !outputs.is_empty() {
        let steps = outputs.iter().map(|o| o.ratios.len()).min().unwrap_or(0);
        let mut text = String::from("t,state,ratio,asymptote\n");
        for t in 0..steps {
            for (st, asym) in asymptote.iter().enumerate() {
                if st == truth {
                    continue;
                }
                let mean = outputs.iter().map(|o| o.ratios[t][st]).sum::<f64>() / outputs.len() as f64;
                let _ = writeln!(text, "{t},{st},{mean},{asym}");
            }
        }
        files.push(("ratio.csv".to_string(), text));
    }
    let parameters = json!({
        "network": network_json(cfg, &net),
        "constants": to_value(&constants),
        "schedule": to_value(&schedule),
        "targets": to_value(&targets),
        "asymptote": asymptote,
    });
    let records = reps.outputs.into_iter().map(|(_, o)| o.record).collect();
    let mut report = RunReport::new("online", cfg.seed, parameters, records, reps.aborts);
    report.timings = timings(setup, run);
    Ok(ExperimentOutput { report, files })
}

/// The `htest` command.
pub fn run_htest_experiment(cfg: &ExperimentConfig, mode: TestMode) -> Result<ExperimentOutput> {
    match (mode, cfg.model.kind) {
        (TestMode::Composite, ModelKind::Cox) => composite_experiment(cfg),
        (TestMode::Composite, _) => Err(Error::Config("the composite test needs a cox model".into())),
        (TestMode::Simple, ModelKind::Bernoulli) => simple_generic(cfg, cfg.bernoulli()?),
        (TestMode::Simple, ModelKind::Categorical) => simple_generic(cfg, cfg.categorical()?),
        (TestMode::Simple, ModelKind::Gaussian) => simple_generic(cfg, cfg.gaussian()?),
        (TestMode::Simple, ModelKind::Cox) => Err(Error::Config("use --mode composite for cox models".into())),
    }
}

fn simple_generic<M: SignalModel + Clone>(cfg: &ExperimentConfig, model: M) -> Result<ExperimentOutput> {
    if model.num_states() != 2 {
        return Err(Error::Config("the simple test needs exactly two states (null, alternative)".into()));
    }
    let start = Instant::now();
    let net = cfg.network()?;
    let n = net.n();
    let models = vec![model; n];
    let streams = Streams::new(cfg.seed);
    let per_agent = cfg.model.signals_per_agent;
    let alpha = cfg.targets.alpha;
    // Constants refer to the alternative so that null and alternative data
    // are tested with the same schedule.
    let base = base_constants(cfg, &models, &vec![per_agent as f64; n], &[1], &streams)?;
    let rho_c = match cfg.algorithm.rho_c {
        Some(v) => v,
        None => null_quantile(
            &models,
            &vec![per_agent; n],
            alpha / 2.0,
            cfg.algorithm.mc,
            &mut streams.rng(Purpose::Calibration, StreamKey::default()),
        )?,
    };
    let overrides = cfg.algorithm.overrides();
    let source: Source<M::Record> = Source::Synthetic { per_agent };
    let truth = cfg.model.true_state;
    let setup = secs(start);

    let start = Instant::now();
    let reps = replicate(cfg.replications, &streams, |r, s| {
        let data = source.draw(&models, truth, s);
        let log_gamma = log_likelihood_matrix(&models, &data)?;
        let constants = Constants { gamma: gamma_bound(&log_gamma), ..base };
        let schedule = test_schedule(cfg.privacy.epsilon, alpha, &constants, &net, &overrides)?;
        let gm = mle_from_log_likelihoods(&log_gamma, &net, &schedule, s, RunOptions::default())?;
        let outcomes = (0..n).map(|i| distributed_simple_test(&gm, rho_c, alpha, i)).collect::<Result<Vec<_>>>()?;
        let central = 2.0 * log_gamma.iter().map(|row| row[1] - row[0]).sum::<f64>();
        let mut record = ReplicationRecord::new(r);
        record.flag("reject", outcomes[0].reject);
        record.flag("agents_agree", outcomes.iter().all(|o| o.reject == outcomes[0].reject));
        record.flag("centralized_reject", central > rho_c);
        record.metric("statistic", outcomes[0].statistic);
        record.metric("centralized_statistic", central);
        record.metric("iterations", schedule.iterations as f64);
        record.metric("max_residual", gm.max_residual);
        Ok((record, schedule))
    })?;
    let run = secs(start);
    let parameters = json!({
        "mode": TestMode::Simple,
        "network": network_json(cfg, &net),
        "constants": to_value(&base),
        "rho_c": rho_c,
        "threshold": rho_c - 1.0,
        "schedule": reps.outputs.first().map(|(_, o)| to_value(&o.1)),
    });
    let records = reps.outputs.into_iter().map(|(_, o)| o.0).collect();
    let mut report = RunReport::new("htest", cfg.seed, parameters, records, reps.aborts);
    report.timings = timings(setup, run);
    Ok(ExperimentOutput { report, files: Vec::new() })
}

/// Shuffle covariates within each dataset, keeping times and events: data
/// from the null of no covariate effect with the observed marginals.
pub fn permute_covariates(datasets: &mut [Vec<SurvivalRecord>], streams: &Streams) {
    for (i, data) in datasets.iter_mut().enumerate() {
        let mut rng = streams.rng(Purpose::Permutation, StreamKey::agent(i));
        let mut xs: Vec<f64> = data.iter().map(|r| r.covariate).collect();
        xs.shuffle(&mut rng);
        for (r, x) in data.iter_mut().zip(xs) {
            r.covariate = x;
        }
    }
}

/// Composite-test settings from a config.
pub fn composite_spec(cfg: &ExperimentConfig) -> CompositeSpec {
    let calibration_seed = Streams::new(cfg.seed).seed(Purpose::Calibration, StreamKey::default());
    CompositeSpec {
        epsilon: cfg.privacy.epsilon,
        alpha: cfg.targets.alpha,
        b_theta: cfg.model.b_theta,
        b_x: cfg.model.b_x,
        ridge: cfg.algorithm.ridge,
        rule: cfg.algorithm.rule(calibration_seed),
        overrides: cfg.algorithm.overrides(),
    }
}

fn composite_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let net = cfg.network()?;
    let n = net.n();
    let model = cfg.cox()?;
    let streams = Streams::new(cfg.seed);
    let fixed = survival_shards(cfg, n)?;
    let theta_true = model.thetas[cfg.model.true_state];
    let spec = composite_spec(cfg);
    // Rounds and noise do not depend on the data, so one calibration sample
    // serves every replication.
    let calibration = match spec.rule {
        ThresholdRule::Calibrated { mc, seed } => {
            let sched = composite_schedule(&vec![vec![0.0, 0.0]; n], &net, &spec)?;
            Some(CalibrationSample::draw(n, sched.rounds, sched.noise_scale, mc, seed)?)
        }
        ThresholdRule::Wilks => None,
    };
    let setup = secs(start);

    let start = Instant::now();
    let reps = replicate(cfg.replications, &streams, |r, s| {
        let mut datasets = match &fixed {
            Some(d) => d.clone(),
            None => (0..n)
                .map(|i| {
                    let mut rng = s.rng(Purpose::Data, StreamKey::agent(i));
                    synth_survival(cfg.model.signals_per_agent, theta_true, cfg.model.censor_rate, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if cfg.algorithm.permute_null {
            permute_covariates(&mut datasets, s);
        }
        let out = distributed_composite_test_with(&datasets, &net, &spec, s, calibration.as_ref())?;
        let mut record = ReplicationRecord::new(r);
        record.flag("reject", out.outcome.reject);
        record.flag("wilks_reject", out.outcome.statistic > out.wilks_threshold);
        record.metric("statistic", out.outcome.statistic);
        record.metric("threshold", out.outcome.threshold);
        record.metric("centralized_statistic", out.centralized_statistic);
        record.metric("p_value_wilks", out.p_value_wilks);
        if let Some(p) = out.p_value_calibrated {
            record.metric("p_value_calibrated", p);
        }
        record.metric("theta_hat_mean", out.fits.iter().map(|f| f.theta).sum::<f64>() / n as f64);
        record.metric("iterations", out.schedule.iterations as f64);
        record.metric("max_residual", out.max_residual);
        Ok((record, out.schedule, out.wilks_threshold))
    })?;
    let run = secs(start);
    let parameters = json!({
        "mode": TestMode::Composite,
        "network": network_json(cfg, &net),
        "spec": to_value(&spec),
        "theta_true": theta_true,
        "permute_null": cfg.algorithm.permute_null,
        "wilks_threshold": reps.outputs.first().map(|(_, o)| o.2),
        "schedule": reps.outputs.first().map(|(_, o)| to_value(&o.1)),
    });
    let records = reps.outputs.into_iter().map(|(_, o)| o.0).collect();
    let mut report = RunReport::new("htest", cfg.seed, parameters, records, reps.aborts);
    report.timings = timings(setup, run);
    Ok(ExperimentOutput { report, files: Vec::new() })
}

/// Total variation between a belief and the point mass on `truth`.
fn error_to_truth(belief: &[f64], truth: usize) -> f64 {
    1.0 - belief[truth]
}

/// Uniform belief over a returned set; an empty set puts no mass on `truth`.
fn set_error(set: &[usize], truth: usize) -> f64 {
    if set.contains(&truth) {
        1.0 - 1.0 / set.len() as f64
    } else {
        1.0
    }
}

/// The `baseline-fo` command: belief-exchange estimators and the
/// first-order baseline on the same survival data, each scored by the total
/// variation between its output and the point mass on the true state.
///
/// The first-order baseline runs for K·T steps of the AM/GM schedule; its
/// estimates are turned into beliefs over the state grid by
/// [`induced_belief`] with the pooled observed information.
pub fn run_baseline_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.model.kind != ModelKind::Cox {
        return Err(Error::Config("baseline-fo needs a cox model".into()));
    }
    let start = Instant::now();
    let net = cfg.network()?;
    let n = net.n();
    let model = cfg.cox()?;
    let models = vec![model.clone(); n];
    let streams = Streams::new(cfg.seed);
    let truth = cfg.model.true_state;
    let fixed = survival_shards(cfg, n)?;
    let source = match fixed {
        Some(d) => Source::Fixed(d),
        None => Source::Synthetic { per_agent: cfg.model.signals_per_agent },
    };
    let base = base_constants(cfg, &models, &source.sizes(n), &[truth], &streams)?;
    let targets = mle_targets(cfg);
    let overrides = cfg.algorithm.overrides();
    let spec = cfg.algorithm.threshold_spec();
    let setup = secs(start);

    let start = Instant::now();
    let reps = replicate(cfg.replications, &streams, |r, s| {
        let data = source.draw(&models, truth, s);
        let log_gamma = log_likelihood_matrix(&models, &data)?;
        let constants = Constants { gamma: gamma_bound(&log_gamma), ..base };
        let schedule = compute_mle_schedule(&targets, &constants, &net, model.thetas.len(), &overrides)?;
        let thr_schedule = compute_threshold_schedule(&targets, &constants, &net, model.thetas.len(), &spec, &overrides)?;
        let res = mle_from_log_likelihoods(&log_gamma, &net, &schedule, s, RunOptions::default())?;
        let thr = mle_from_log_likelihoods(&log_gamma, &net, &thr_schedule, s, RunOptions::default())?;
        let sets = thr.threshold.as_ref().map(|t| t.sets1.clone()).unwrap_or_default();

        let objectives: Vec<CoxData> = data.iter().map(|d| CoxData::new(d)).collect();
        let fo_config = FirstOrderConfig {
            learning_rate: cfg.algorithm.learning_rate,
            iterations: schedule.rounds * schedule.iterations,
            epsilon: cfg.privacy.epsilon,
            b_theta: cfg.model.b_theta,
            b_x: cfg.model.b_x,
            ridge: 0.0,
        };
        let fo = run_first_order(&objectives, &net, &fo_config, s)?;
        let fo_err: f64 = fo
            .thetas
            .iter()
            .map(|&th| {
                let info: f64 = objectives.iter().map(|o| -o.curvature(th)).sum();
                error_to_truth(&induced_belief(&model.thetas, th, info), truth)
            })
            .sum::<f64>()
            / n as f64;
        let mean_err = |rows: &[Vec<f64>]| {
            rows.iter().map(|row| error_to_truth(&row.iter().map(|v| v.exp()).collect::<Vec<_>>(), truth)).sum::<f64>()
                / n as f64
        };
        let mut record = ReplicationRecord::new(r);
        record.metric("tvd_am", mean_err(&res.log_am));
        record.metric("tvd_gm", mean_err(&res.log_gm));
        record.metric("tvd_thr", sets.iter().map(|set| set_error(set, truth)).sum::<f64>() / n as f64);
        record.metric("tvd_fo", fo_err);
        record.metric("fo_iterations", fo_config.iterations as f64);
        record.metric("fo_theta_mean", fo.thetas.iter().sum::<f64>() / n as f64);
        record.metric("fo_p_value_mean", fo.p_values.iter().sum::<f64>() / n as f64);
        record.flag("fo_diverged", fo.diverged);
        record.metric("max_residual", res.max_residual.max(thr.max_residual));
        Ok(record)
    })?;
    let run = secs(start);
    let parameters = json!({
        "network": network_json(cfg, &net),
        "constants": to_value(&base),
        "targets": to_value(&targets),
        "learning_rate": cfg.algorithm.learning_rate,
    });
    let records = reps.outputs.into_iter().map(|(_, o)| o).collect();
    let mut report = RunReport::new("baseline-fo", cfg.seed, parameters, records, reps.aborts);
    report.timings = timings(setup, run);
    Ok(ExperimentOutput { report, files: Vec::new() })
}

/// The `power` command: one power curve as report plus `power.csv`.
pub fn run_power_experiment(mechanism: Mechanism, n: u64, p: f64, alpha: f64, grid: &[f64], mc: usize, seed: u64) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let curve = power_curve(mechanism, n, p, alpha, grid, mc, seed)?;
    let report_parameters = to_value(&curve);
    let mut report = RunReport::new("power", seed, report_parameters, Vec::new(), Vec::new());
    report.timings = timings(0.0, secs(start));
    Ok(ExperimentOutput { report, files: vec![("power.csv".to_string(), power_csv(&curve))] })
}

/// Rows `epsilon,power,beta_ind,critical_budget`.
pub fn power_csv(curve: &PowerCurve) -> String {
    let mut out = String::from("epsilon,power,beta_ind,critical_budget\n");
    for (e, pw) in &curve.points {
        let _ = writeln!(out, "{e},{pw},{},{}", curve.beta_ind, curve.critical.epsilon);
    }
    out
}

/// `count` points spaced evenly in log scale over [lo, hi].
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect()
}

/// One instance of the lower-bound comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    pub epsilon: f64,
    pub gap: f64,
    pub n: usize,
    pub diameter: usize,
    /// Bound computed from the privatised divergences.
    pub bound: f64,
    /// Closed form for randomized response.
    pub closed_form: f64,
    /// K·T of the AM/GM schedule on the matched Bernoulli instance.
    pub schedule_exchanges: f64,
}

/// Compare the communication lower bound with the AM/GM schedule on the
/// matched instance: every agent holds one Bernoulli signal with success
/// probability 1/2 (null) or 1/2 + gap/2 (alternative, the maximiser).
pub fn lower_bound_row(epsilon: f64, gap: f64, n: usize, topology: &Topology, alpha: f64, beta: f64) -> Result<LowerBoundRow> {
    let net = Network::from_topology(topology, n)?;
    let diameter = net.diameter();
    let kl = rr_privatized_kl(epsilon, gap)?;
    let bound = communication_lower_bound(&vec![kl; n], alpha, beta, diameter)?;
    let closed_form = rr_lower_bound_closed_form(epsilon, gap, alpha, beta, diameter, n)?;

    let null = 0.5;
    let alt = 0.5 + gap / 2.0;
    let model = BernoulliModel::new(vec![null, alt])?;
    let models = vec![model; n];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut constants = constants_bundle(&models, None, &vec![1.0; n], &[1], 1, &mut rng)?;
    // Worst single-signal normalised log-likelihood.
    let llr = (alt / null).ln().abs().max(((1.0 - alt) / (1.0 - null)).ln().abs());
    constants.gamma = llr.exp().ln_1p();
    let targets = MleTargets { epsilon, alpha, beta, theta_star_size: Some(1) };
    let schedule = compute_mle_schedule(&targets, &constants, &net, 2, &Default::default())?;
    Ok(LowerBoundRow {
        epsilon,
        gap,
        n,
        diameter,
        bound: bound.value,
        closed_form,
        schedule_exchanges: (schedule.rounds * schedule.iterations) as f64,
    })
}

/// The `lower-bound` command on the config's network, budget and targets,
/// over a fixed grid of gaps.
pub fn run_lower_bound_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let topology: Topology = cfg
        .network
        .topology
        .as_deref()
        .unwrap_or("complete")
        .parse()?;
    let mut rows = Vec::new();
    for gap in [0.2, 0.4, 0.6] {
        rows.push(lower_bound_row(cfg.privacy.epsilon, gap, cfg.network.n, &topology, cfg.targets.alpha, cfg.targets.beta)?);
    }
    let records = rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mut rec = ReplicationRecord::new(k);
            rec.metric("gap", row.gap);
            rec.metric("bound", row.bound);
            rec.metric("closed_form", row.closed_form);
            rec.metric("schedule_exchanges", row.schedule_exchanges);
            rec.flag("bound_below_schedule", row.bound <= row.schedule_exchanges);
            rec
        })
        .collect();
    let mut csv = String::from("epsilon,gap,n,diameter,bound,closed_form,schedule_exchanges\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{},{},{}", r.epsilon, r.gap, r.n, r.diameter, r.bound, r.closed_form, r.schedule_exchanges);
    }
    let report = RunReport::new("lower-bound", cfg.seed, to_value(&rows), records, Vec::new());
    Ok(ExperimentOutput { report, files: vec![("lower_bound.csv".to_string(), csv)] })
}

/// The `synth` command: synthetic survival data for every center, written
/// as `survival.csv` with a center column.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.model.kind != ModelKind::Cox {
        return Err(Error::Config("synth writes survival data and needs a cox model".into()));
    }
    let model = cfg.cox()?;
    let theta = model.thetas[cfg.model.true_state];
    let streams = Streams::new(cfg.seed);
    let shards = (0..cfg.network.n)
        .map(|i| {
            let mut rng = streams.rng(Purpose::Data, StreamKey::agent(i));
            synth_survival(cfg.model.signals_per_agent, theta, cfg.model.censor_rate, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_survival_csv(&mut buf, &shards)?;
    let text = String::from_utf8(buf).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let mut record = ReplicationRecord::new(0);
    let total: usize = shards.iter().map(Vec::len).sum();
    let events: usize = shards.iter().flatten().map(|r| r.event as usize).sum();
    record.metric("records", total as f64);
    record.metric("censored_share", 1.0 - events as f64 / total.max(1) as f64);
    let parameters = json!({ "theta": theta, "censor_rate": cfg.model.censor_rate, "centers": cfg.network.n });
    let report = RunReport::new("synth", cfg.seed, parameters, vec![record], Vec::new());
    Ok(ExperimentOutput { report, files: vec![("survival.csv".to_string(), text)] })
}
