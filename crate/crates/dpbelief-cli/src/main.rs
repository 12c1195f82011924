//! `dpbelief`: run private distributed inference experiments from config files.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpbelief::harness::experiments::log_grid;
use dpbelief::harness::{
    run_baseline_experiment, run_htest_experiment, run_lower_bound_experiment, run_mle_experiment, run_online_experiment,
    run_power_experiment, run_synth, ExperimentConfig, ExperimentOutput, MleAlgorithm, TestMode,
};
use dpbelief::testing::Mechanism;
use dpbelief::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "dpbelief", version, about = "Differentially private distributed inference simulator")]
struct Cli {
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Number of replications; overrides the config.
    #[arg(long, global = true)]
    replications: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Algo {
    Amgm,
    TwoThreshold,
    Nonprivate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Simple,
    Composite,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mech {
    Rr,
    Laplace,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Private distributed maximum likelihood estimation.
    Mle {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_enum, default_value = "amgm")]
        algo: Algo,
    },
    /// Private online learning from signal streams.
    Online {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Distributed hypothesis tests.
    Htest {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_enum, default_value = "simple")]
        mode: Mode,
    },
    /// Collective versus individual power over a privacy budget grid.
    Power {
        #[arg(long, value_enum, default_value = "rr")]
        mech: Mech,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Monte Carlo draws (Laplace only).
        #[arg(long, default_value_t = 10_000)]
        mc: usize,
        #[arg(long, default_value_t = 0.01)]
        eps_min: f64,
        #[arg(long, default_value_t = 10.0)]
        eps_max: f64,
        #[arg(long, default_value_t = 60)]
        points: usize,
    },
    /// Belief exchange against the first-order private baseline.
    BaselineFo {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Communication lower bound against the schedule.
    LowerBound {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Write synthetic survival data.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(r) = cli.replications {
        cfg.replications = r;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(ExperimentOutput, PathBuf)> {
    let with_cfg = |c: &ConfigArg, f: &dyn Fn(&ExperimentConfig) -> Result<ExperimentOutput>| -> Result<(ExperimentOutput, PathBuf)> {
        let cfg = load(cli, &c.config)?;
        Ok((f(&cfg)?, cfg.output.dir.clone()))
    };
    match &cli.command {
        Command::Mle { config, algo } => {
            let algorithm = match algo {
                Algo::Amgm => MleAlgorithm::AmGm,
                Algo::TwoThreshold => MleAlgorithm::TwoThreshold,
                Algo::Nonprivate => MleAlgorithm::NonPrivate,
            };
            with_cfg(config, &|cfg| run_mle_experiment(cfg, algorithm))
        }
        Command::Online { config } => with_cfg(config, &run_online_experiment),
        Command::Htest { config, mode } => {
            let mode = match mode {
                Mode::Simple => TestMode::Simple,
                Mode::Composite => TestMode::Composite,
            };
            with_cfg(config, &|cfg| run_htest_experiment(cfg, mode))
        }
        Command::Power { mech, n, p, alpha, mc, eps_min, eps_max, points } => {
            if !(*eps_min > 0.0 && eps_max > eps_min) || *points == 0 {
                return Err(Error::Config("need 0 < eps-min < eps-max and at least one point".into()));
            }
            let mechanism = match mech {
                Mech::Rr => Mechanism::Rr,
                Mech::Laplace => Mechanism::Laplace,
            };
            let grid = log_grid(*eps_min, *eps_max, *points);
            let out = run_power_experiment(mechanism, *n, *p, *alpha, &grid, *mc, cli.seed.unwrap_or(0))?;
            Ok((out, cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))))
        }
        Command::BaselineFo { config } => with_cfg(config, &run_baseline_experiment),
        Command::LowerBound { config } => with_cfg(config, &run_lower_bound_experiment),
        Command::Synth { config } => with_cfg(config, &run_synth),
    }
}

fn summarize(out: &ExperimentOutput, dir: &Path) {
    let report = &out.report;
    println!("{}: {} replications, {} aborted", report.command, report.replications, report.aborts.len());
    for (name, r) in &report.rates {
        println!("  {name}: {}/{} = {:.4} [{:.4}, {:.4}]", r.successes, r.trials, r.rate, r.low, r.high);
    }
    for (name, v) in &report.means {
        println!("  mean {name}: {v:.6}");
    }
    println!("wrote {}", dir.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|(out, dir)| {
        out.write(&dir)?;
        Ok((out, dir))
    });
    match result {
        Ok((out, dir)) => {
            summarize(&out, &dir);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
