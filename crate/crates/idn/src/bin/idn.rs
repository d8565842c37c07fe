//! Command-line front end: run simulations, generate traces, run the
//! structural checks, or brute-force tiny instances.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasibility,
//! 4 check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use idn::harness::bruteforce::{brute_force_static_opt, BruteForceError};
use idn::harness::checks;
use idn::harness::config::{ConfigError, PolicyName, Scenario, SimulationConfig};
use idn::harness::sim::{run_simulation, SimError};
use idn::serving::ServingError;
use idn::workload::Trace;

#[derive(Parser)]
#[command(name = "idn", about = "Inference delivery network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a JSON config
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the policy (infida | infida_offline | sg | olag | omega)
        #[arg(long)]
        policy: Option<PolicyName>,
    },
    /// Generate a workload trace from a config and save it
    Trace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of slots (defaults to the config horizon)
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the structural property checks
    Check {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Sample-count multiplier
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Brute-force the best static allocation of a tiny instance
    Opt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum number of free coordinates to enumerate
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_CHECK: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, (u8, String)> {
    match command {
        Command::Simulate {
            config,
            seed,
            out,
            policy,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(policy) = policy {
                cfg.policy.name = policy;
            }
            if let Some(out) = out {
                cfg.run.out_dir = Some(out);
            }
            let scenario = build_scenario(cfg, seed)?;
            let output = run_simulation(&scenario).map_err(sim_error)?;
            let s = &output.summary;
            println!(
                "run {} policy={} T={} seed={} ntag={:.4} mu={:.2} latency={:.2}ms inaccuracy={:.2}",
                s.run_id, s.policy, s.horizon, s.seed, s.ntag, s.mu, s.mean_latency_ms,
                s.mean_inaccuracy
            );
            if let Some(dir) = &scenario.config.run.out_dir {
                println!("wrote {}", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Trace {
            config,
            out,
            slots,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(slots) = slots {
                cfg.run.horizon = slots;
            }
            let scenario = build_scenario(cfg, seed)?;
            let trace = Trace::from_batches(&scenario.inst, &scenario.batches);
            trace
                .save(&out)
                .map_err(|e| (EXIT_CONFIG, format!("cannot write trace: {e}")))?;
            println!(
                "wrote {} slots to {}",
                scenario.batches.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { seed, samples } => {
            let outcomes = checks::run_all(seed, samples);
            let mut failed = false;
            for outcome in &outcomes {
                let status = if outcome.passed { "PASS" } else { "FAIL" };
                println!("{status} {:<22} {}", outcome.name, outcome.details);
                failed |= !outcome.passed;
            }
            if failed {
                Ok(ExitCode::from(EXIT_CHECK))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Opt {
            config,
            seed,
            limit,
        } => {
            let cfg = load_config(&config)?;
            let scenario = build_scenario(cfg, seed)?;
            let (best, value) = brute_force_static_opt(
                &scenario.inst,
                &scenario.batches,
                scenario.fixed.as_deref(),
                scenario.config.policy.capacity_mode,
                limit,
            )
            .map_err(|e| match e {
                BruteForceError::Serving(err) => (EXIT_INFEASIBLE, err.to_string()),
                other => (EXIT_CONFIG, other.to_string()),
            })?;
            println!("optimal time-averaged gain: {value:.6}");
            let inst = &scenario.inst;
            for v in 0..inst.n_nodes {
                let models: Vec<usize> = (0..inst.n_models)
                    .filter(|&m| best.deployed(inst.idx(v, m)) && !inst.pinned[inst.idx(v, m)])
                    .collect();
                if !models.is_empty() {
                    println!("node {v}: models {models:?}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: &Path) -> Result<SimulationConfig, (u8, String)> {
    SimulationConfig::from_path(path).map_err(|e| (EXIT_CONFIG, e.to_string()))
}

fn build_scenario(cfg: SimulationConfig, seed: Option<u64>) -> Result<Scenario, (u8, String)> {
    Scenario::build(cfg, seed).map_err(|e| match &e {
        ConfigError::RepoInfeasible(_) => (EXIT_INFEASIBLE, e.to_string()),
        _ => (EXIT_CONFIG, e.to_string()),
    })
}

fn sim_error(e: SimError) -> (u8, String) {
    match &e {
        SimError::Infeasible { .. } => (EXIT_INFEASIBLE, e.to_string()),
        SimError::Policy(idn::infida::PolicyError::Serving(ServingError::Unserved { .. })) => {
            (EXIT_INFEASIBLE, e.to_string())
        }
        _ => (EXIT_CONFIG, e.to_string()),
    }
}
