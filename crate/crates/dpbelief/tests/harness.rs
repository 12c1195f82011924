use approx::assert_abs_diff_eq;
use dpbelief::harness::{
    parse_survival_csv, random_equal_split, replicate, run_mle_experiment, run_online_experiment, wilson_interval,
    write_survival_csv, ExperimentConfig, MleAlgorithm, ReplicationRecord, RunReport,
};
use dpbelief::models::SurvivalRecord;
use dpbelief::rng::Streams;
use dpbelief::Error;

const BASE: &str = r#"
seed = 3
replications = 8

[network]
topology = "complete"
n = 4

[model]
kind = "bernoulli"
states = [0.3, 0.7]
true_state = 1
signals_per_agent = 30

[privacy]
epsilon = 1.0

[targets]
theta_star_size = 1
"#;

fn config_error(text: &str) -> String {
    match ExperimentConfig::from_toml_str(text) {
        Err(e @ Error::Config(_)) => e.to_string(),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn base_config_parses() {
    let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
    assert_eq!(cfg.replications, 8);
    assert_eq!(cfg.targets.alpha, 0.1);
    assert_eq!(cfg.algorithm.mc, 20_000);
    assert_eq!(cfg.num_states(), 2);
    assert_eq!(cfg.network().unwrap().n(), 4);
    assert_eq!(cfg.state_labels(), vec!["0.3", "0.7"]);
}

#[test]
fn config_errors_name_the_problem() {
    assert!(config_error(&BASE.replace("epsilon = 1.0", "epsilon = -1.0")).contains("epsilon"));
    assert!(config_error(&BASE.replace("true_state = 1", "true_state = 2")).contains("true_state"));
    assert!(config_error(&BASE.replace("\"complete\"", "\"star\"")).contains("topology"));
    assert!(config_error(&BASE.replace("[0.3, 0.7]", "[0.3, 1.7]")).contains("model"));
    assert!(config_error(&BASE.replace("[0.3, 0.7]", "[0.3]")).contains("two states"));
    assert!(config_error(&BASE.replace("seed = 3", "seed = 3\nbogus = 1")).contains("bogus"));
    assert!(config_error(&BASE.replace("replications = 8", "replications = 0")).contains("replications"));
    assert!(config_error(&format!("{BASE}\n[algorithm]\nmultiplier = 0\n")).contains("multiplier"));
}

#[test]
fn load_resolves_and_checks_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    let text = BASE.replace("topology = \"complete\"", "edges_file = \"ring.txt\"");
    std::fs::write(&path, &text).unwrap();
    match ExperimentConfig::load(&path) {
        Err(Error::Config(msg)) => assert!(msg.contains("ring.txt")),
        other => panic!("{other:?}"),
    }
    std::fs::write(dir.path().join("ring.txt"), "0 1\n1 2\n2 3\n3 0\n").unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.network().unwrap().diameter(), 2);
    assert!(ExperimentConfig::load(&dir.path().join("missing.toml")).unwrap_err().is_config());
}

#[test]
fn survival_csv_errors_carry_lines() {
    let line_of = |text: &str| match parse_survival_csv(text.as_bytes(), 2, 1.0, 0) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("{other:?}"),
    };
    assert_eq!(line_of("time,event,covariate\n1,1,0\n-2,0,1\n"), 3);
    assert_eq!(line_of("time,event,covariate\n1,1,0\n2,2,1\n"), 3);
    assert_eq!(line_of("time,event,covariate\n1,1,0\n2,1,1\n3,0,5\n"), 4);
    assert_eq!(line_of("time,event,covariate\n1,x,0\n"), 2);
    assert_eq!(line_of("time,event\n1,1\n"), 1);
    assert_eq!(line_of("time,event,covariate\n"), 2);
    assert_eq!(line_of("time,event,covariate,center\n1,1,0,0\n1,1,0,2\n"), 3);
}

#[test]
fn survival_csv_split_and_round_trip() {
    let mut text = String::from("time,event,covariate\n");
    for k in 0..1000 {
        text.push_str(&format!("{},{},{}\n", k + 1, k % 2, (k % 3) as f64 - 1.0));
    }
    let shards = parse_survival_csv(text.as_bytes(), 5, 1.0, 42).unwrap();
    assert_eq!(shards.len(), 5);
    assert!(shards.iter().all(|s| s.len() == 200));
    let again = parse_survival_csv(text.as_bytes(), 5, 1.0, 42).unwrap();
    assert_eq!(shards, again);
    let other = parse_survival_csv(text.as_bytes(), 5, 1.0, 43).unwrap();
    assert_ne!(shards, other);

    let mut buf = Vec::new();
    write_survival_csv(&mut buf, &shards).unwrap();
    let back = parse_survival_csv(buf.as_slice(), 5, 1.0, 0).unwrap();
    assert_eq!(back, shards);

    let records: Vec<SurvivalRecord> =
        (0..7).map(|k| SurvivalRecord { time: k as f64, event: 1, covariate: 0.0 }).collect();
    let split = random_equal_split(records, 3, 1);
    assert_eq!(split.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2]);
}

#[test]
fn wilson_interval_values() {
    // 10/20 at z = 1.96: centre 0.5, half-width z·√(0.25/20 + z²/1600)/(1 + z²/20).
    let z: f64 = 1.959963984540054;
    let (lo, hi) = wilson_interval(10, 20, z);
    let denom = 1.0 + z * z / 20.0;
    let half = z * (0.25 / 20.0 + z * z / 1600.0).sqrt() / denom;
    assert_abs_diff_eq!(lo, 0.5 - half, epsilon = 1e-12);
    assert_abs_diff_eq!(hi, 0.5 + half, epsilon = 1e-12);
    let (lo0, hi0) = wilson_interval(0, 50, z);
    assert_eq!(lo0, 0.0);
    assert!(hi0 > 0.0 && hi0 < 0.1);
    let (lo1, hi1) = wilson_interval(50, 50, z);
    assert!(lo1 > 0.9);
    assert_abs_diff_eq!(hi1, 1.0, epsilon = 1e-12);
}

#[test]
fn report_round_trips_through_json() {
    let mut a = ReplicationRecord::new(0);
    a.metric("x", 1.5);
    a.metric("bad", f64::NAN);
    a.flag("ok", true);
    let mut b = ReplicationRecord::new(1);
    b.metric("x", 2.5);
    b.flag("ok", false);
    let report = RunReport::new("test", 9, serde_json::json!({"k": 1}), vec![a, b], Vec::new());
    assert_eq!(report.rate("ok").unwrap().successes, 1);
    assert_eq!(report.means["x"], 2.0);
    assert!(!report.records[0].metrics.contains_key("bad"));
    let text = report.to_json().unwrap();
    let back = RunReport::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);
}

#[test]
fn replicate_counts_aborts() {
    let streams = Streams::new(1);
    let ok = replicate(20, &streams, |r, _| if r == 3 { Err(Error::Numerical("x".into())) } else { Ok(r) }).unwrap();
    assert_eq!(ok.outputs.len(), 19);
    assert_eq!(ok.aborts.len(), 1);
    assert!(ok.outputs.windows(2).all(|w| w[0].0 < w[1].0));
    let many = replicate(20, &streams, |r, _| if r < 3 { Err(Error::Numerical("x".into())) } else { Ok(r) });
    assert!(matches!(many, Err(Error::TooManyAborts { aborted: 3, total: 20 })));
    let cfg = replicate(20, &streams, |r, _| if r == 7 { Err(Error::Config("bad".into())) } else { Ok(r) });
    assert!(matches!(cfg, Err(Error::Config(_))));
}

#[test]
fn experiments_are_deterministic() {
    let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
    let a = run_mle_experiment(&cfg, MleAlgorithm::AmGm).unwrap();
    let b = run_mle_experiment(&cfg, MleAlgorithm::AmGm).unwrap();
    assert_eq!(a.report.to_json_without_timings().unwrap(), b.report.to_json_without_timings().unwrap());
    assert_eq!(a.file("tvd.csv"), b.file("tvd.csv"));
    assert_eq!(a.file("beliefs.csv"), b.file("beliefs.csv"));
    let mut other = cfg.clone();
    other.seed = 4;
    let c = run_mle_experiment(&other, MleAlgorithm::AmGm).unwrap();
    assert_ne!(a.file("beliefs.csv"), c.file("beliefs.csv"));
}

#[test]
fn tvd_values_are_bounded() {
    let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
    let out = run_mle_experiment(&cfg, MleAlgorithm::AmGm).unwrap();
    let tvd = out.file("tvd.csv").unwrap();
    let mut lines = tvd.lines();
    assert_eq!(lines.next(), Some("t,agent,tvd"));
    let mut rows = 0;
    for line in lines {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&v), "{line}");
        rows += 1;
    }
    assert!(rows > 0);
    assert!(out.file("beliefs.csv").unwrap().starts_with("round,agent,state,t,log_belief"));
    assert!(out.report.records.iter().all(|r| r.metrics["max_residual"] <= 1e-9));
}

#[test]
fn online_rejects_cox_and_writes_ratio() {
    let cox = BASE.replace("kind = \"bernoulli\"", "kind = \"cox\"").replace("[0.3, 0.7]", "[0.0, 0.5]");
    let cfg = ExperimentConfig::from_toml_str(&cox).unwrap();
    assert!(run_online_experiment(&cfg).unwrap_err().is_config());
    let mut cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
    cfg.model.signals_per_agent = 1;
    cfg.algorithm.iterations = Some(30);
    let out = run_online_experiment(&cfg).unwrap();
    assert!(out.file("ratio.csv").unwrap().starts_with("t,state,ratio,asymptote"));
    assert_eq!(out.report.rate("success").unwrap().trials, 8);
}

#[test]
fn written_outputs_land_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
    let out = run_mle_experiment(&cfg, MleAlgorithm::NonPrivate).unwrap();
    out.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let back = RunReport::from_json(&text).unwrap();
    assert_eq!(back.replications, 8);
    assert_eq!(back.rate("exact").unwrap().successes, 8);
}
