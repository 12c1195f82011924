//! Experiment configuration files (TOML).
//!
//! ```toml
//! seed = 7
//! replications = 200
//!
//! [network]
//! topology = "complete"        # path, cycle, "erdos-renyi p=0.5 seed=3"
//! n = 5
//!
//! [model]
//! kind = "bernoulli"           # categorical, gaussian, cox
//! states = [0.3, 0.7]
//! true_state = 1
//! signals_per_agent = 50
//!
//! [privacy]
//! epsilon = 1.0
//!
//! [targets]
//! alpha = 0.1
//! beta = 0.9
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_network, parse_edge_list, Network, Topology, WeightScheme};
use crate::mle::{ScheduleOverrides, ThresholdSpec};
use crate::models::{BernoulliModel, CategoricalModel, CoxModel, GaussianModel, DEFAULT_RIDGE};
use crate::testing::ThresholdRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    pub network: NetworkConfig,
    pub model: ModelConfig,
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub targets: TargetsConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Named topology; ignored when `edges_file` is set.
    #[serde(default)]
    pub topology: Option<String>,
    pub n: usize,
    /// Edge list, one "i j" pair per line, relative to the config file.
    #[serde(default)]
    pub edges_file: Option<PathBuf>,
    #[serde(default)]
    pub weights: WeightScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bernoulli,
    Categorical,
    Gaussian,
    Cox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalKind {
    #[default]
    Fixed,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Parameter per state: success probability, mean or log hazard ratio.
    #[serde(default)]
    pub states: Vec<f64>,
    /// Categorical only: row per state, column per symbol.
    #[serde(default)]
    pub table: Vec<Vec<f64>>,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub true_state: usize,
    /// Records per agent (per step for online learning).
    #[serde(default = "default_signals")]
    pub signals_per_agent: usize,
    #[serde(default)]
    pub arrivals: ArrivalKind,
    /// Gaussian only.
    #[serde(default)]
    pub sd: Option<f64>,
    /// Gaussian only: clamp signals to [−bound, bound].
    #[serde(default)]
    pub bound: Option<f64>,
    /// Cox only.
    #[serde(default = "default_b")]
    pub b_theta: f64,
    #[serde(default = "default_b")]
    pub b_x: f64,
    #[serde(default)]
    pub censor_rate: f64,
    /// Cox only: survival CSV to use instead of synthetic data.
    #[serde(default)]
    pub data_file: Option<PathBuf>,
}

fn default_signals() -> usize {
    50
}

fn default_b() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    /// Replaces the model's analytic sensitivity.
    #[serde(default)]
    pub sensitivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub eta: f64,
    /// Number of maximising states, when known.
    #[serde(default)]
    pub theta_star_size: Option<usize>,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_beta() -> f64 {
    0.9
}

impl Default for TargetsConfig {
    fn default() -> Self {
        TargetsConfig { alpha: 0.1, beta: 0.9, eta: 0.1, theta_star_size: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    #[default]
    Calibrated,
    Wilks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub rounds: Option<usize>,
    pub iterations: Option<usize>,
    pub rho_am: Option<f64>,
    pub rho_gm: Option<f64>,
    pub rho_threshold: Option<f64>,
    pub noise_scale: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub pi1: Option<f64>,
    pub pi2: Option<f64>,
    #[serde(default)]
    pub single_threshold: bool,
    /// Online iteration multiplier.
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    /// First-order baseline step size.
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Ridge used when fitting Cox models.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Monte Carlo draws for divergences and calibration.
    #[serde(default = "default_mc")]
    pub mc: usize,
    /// Simple test: centralised cutoff; bootstrapped when absent.
    pub rho_c: Option<f64>,
    #[serde(default)]
    pub threshold_rule: RuleKind,
    /// Composite test: shuffle covariates within each center (null data).
    #[serde(default)]
    pub permute_null: bool,
}

fn default_multiplier() -> f64 {
    1.0
}

fn default_lr() -> f64 {
    0.001
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

fn default_mc() -> usize {
    20_000
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            rounds: None,
            iterations: None,
            rho_am: None,
            rho_gm: None,
            rho_threshold: None,
            noise_scale: None,
            q1: None,
            q2: None,
            pi1: None,
            pi2: None,
            single_threshold: false,
            multiplier: 1.0,
            learning_rate: 0.001,
            ridge: DEFAULT_RIDGE,
            mc: 20_000,
            rho_c: None,
            threshold_rule: RuleKind::Calibrated,
            permute_null: false,
        }
    }
}

impl AlgorithmConfig {
    pub fn overrides(&self) -> ScheduleOverrides {
        ScheduleOverrides {
            rounds: self.rounds,
            iterations: self.iterations,
            rho_am: self.rho_am,
            rho_gm: self.rho_gm,
            rho_threshold: self.rho_threshold,
            noise_scale: self.noise_scale,
        }
    }

    pub fn threshold_spec(&self) -> ThresholdSpec {
        ThresholdSpec { q1: self.q1, q2: self.q2, pi1: self.pi1, pi2: self.pi2, single: self.single_threshold }
    }

    pub fn rule(&self, seed: u64) -> ThresholdRule {
        match self.threshold_rule {
            RuleKind::Wilks => ThresholdRule::Wilks,
            RuleKind::Calibrated => ThresholdRule::Calibrated { mc: self.mc, seed },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Record belief trajectories and TVD series.
    #[serde(default = "yes")]
    pub trajectory: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out(), trajectory: true }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and validate a config file. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = cfg.network.edges_file.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.model.data_file.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    fn check_files(&self) -> Result<()> {
        for p in [&self.network.edges_file, &self.model.data_file].into_iter().flatten() {
            if !p.exists() {
                return Err(config_err(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    /// Range checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(config_err("replications must be at least 1"));
        }
        if self.network.n == 0 {
            return Err(config_err("network.n must be at least 1"));
        }
        if self.network.topology.is_none() && self.network.edges_file.is_none() {
            return Err(config_err("network needs a topology or an edges_file"));
        }
        if let Some(t) = &self.network.topology {
            t.parse::<Topology>().map_err(|e| config_err(format!("network.topology: {e}")))?;
        }
        if !(self.privacy.epsilon > 0.0) {
            return Err(config_err("privacy.epsilon must be positive"));
        }
        if let Some(s) = self.privacy.sensitivity {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(config_err("privacy.sensitivity must be nonnegative and finite"));
            }
        }
        let t = &self.targets;
        for (name, v) in [("alpha", t.alpha), ("beta", t.beta), ("eta", t.eta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(config_err(format!("targets.{name} must lie in (0, 1), got {v}")));
            }
        }
        let m = self.num_states();
        if m < 2 {
            return Err(config_err("model needs at least two states"));
        }
        if self.model.true_state >= m {
            return Err(config_err(format!("model.true_state must be below {m}")));
        }
        if !self.model.labels.is_empty() && self.model.labels.len() != m {
            return Err(config_err("model.labels must name every state"));
        }
        if !(0.0..1.0).contains(&self.model.censor_rate) {
            return Err(config_err("model.censor_rate must lie in [0, 1)"));
        }
        if !(self.algorithm.multiplier > 0.0) {
            return Err(config_err("algorithm.multiplier must be positive"));
        }
        if self.algorithm.mc < 2 {
            return Err(config_err("algorithm.mc must be at least 2"));
        }
        // Building the model validates its parameters.
        match self.model.kind {
            ModelKind::Bernoulli => self.bernoulli().map(|_| ()),
            ModelKind::Categorical => self.categorical().map(|_| ()),
            ModelKind::Gaussian => self.gaussian().map(|_| ()),
            ModelKind::Cox => self.cox().map(|_| ()),
        }
    }

    pub fn num_states(&self) -> usize {
        match self.model.kind {
            ModelKind::Categorical => self.model.table.len(),
            _ => self.model.states.len(),
        }
    }

    pub fn network(&self) -> Result<Network> {
        let n = self.network.n;
        if let Some(path) = &self.network.edges_file {
            let text = std::fs::read_to_string(path)?;
            let edges = parse_edge_list(&text)?;
            return build_network(&edges, n, self.network.weights);
        }
        let topology: Topology = self
            .network
            .topology
            .as_deref()
            .unwrap_or("complete")
            .parse()
            .map_err(|e: Error| config_err(e.to_string()))?;
        Network::from_topology(&topology, n)
    }

    pub fn bernoulli(&self) -> Result<BernoulliModel> {
        BernoulliModel::new(self.model.states.clone()).map_err(|e| config_err(format!("model: {e}")))
    }

    pub fn categorical(&self) -> Result<CategoricalModel> {
        CategoricalModel::new(self.model.table.clone()).map_err(|e| config_err(format!("model: {e}")))
    }

    pub fn gaussian(&self) -> Result<GaussianModel> {
        let sd = self.model.sd.ok_or_else(|| config_err("gaussian model needs sd"))?;
        GaussianModel::new(self.model.states.clone(), sd, self.model.bound).map_err(|e| config_err(format!("model: {e}")))
    }

    pub fn cox(&self) -> Result<CoxModel> {
        let mut m = CoxModel::new(self.model.states.clone(), self.model.b_theta, self.model.b_x)
            .map_err(|e| config_err(format!("model: {e}")))?;
        m.censor_rate = self.model.censor_rate;
        m.reference_size = self.model.signals_per_agent.max(2);
        Ok(m)
    }

    pub fn state_labels(&self) -> Vec<String> {
        if !self.model.labels.is_empty() {
            return self.model.labels.clone();
        }
        match self.model.kind {
            ModelKind::Categorical => (0..self.num_states()).map(|s| s.to_string()).collect(),
            _ => self.model.states.iter().map(|v| format!("{v}")).collect(),
        }
    }
}
