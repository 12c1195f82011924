use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 3
replications = 6

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

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpbelief")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn mle_writes_report_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let res = run(&["mle", "--config", &config, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for file in ["report.json", "tvd.csv", "beliefs.csv"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "mle");
    assert_eq!(report["replications"], 6);
}

#[test]
fn global_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let res = run(&["--replications", "2", "--seed", "9", "mle", "--algo", "nonprivate", "--config", &config, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["replications"], 2);
    assert_eq!(report["seed"], 9);
}

#[test]
fn power_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("power");
    let res = run(&["power", "--mech", "rr", "--n", "50", "--p", "0.7", "--points", "5", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("power.csv")).unwrap();
    assert!(csv.starts_with("epsilon,power,beta_ind,critical_budget"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &CONFIG.replace("epsilon = 1.0", "epsilon = -1.0"));
    let res = run(&["mle", "--config", &config]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("epsilon"));
}

#[test]
fn missing_config_exits_two() {
    let res = run(&["online", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn wrong_model_for_command_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let res = run(&["baseline-fo", "--config", &config]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    // A regular file where the output directory should be created.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "x").unwrap();
    let out = blocker.join("out");
    let res = run(&["mle", "--config", &config, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}
