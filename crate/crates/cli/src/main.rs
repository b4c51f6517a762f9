use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mcsme::config::ExperimentConfig;
use mcsme::harness::{self, Overrides, SCENARIOS};

/// Multi-observer quantum trajectory simulations.
#[derive(Debug, Parser)]
#[command(name = "mcsme", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Output directory; falls back to the config, then to $MCSME_OUT_DIR.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[command(flatten)]
        ensemble: EnsembleArgs,
    },
    /// Run a named scenario against its closed-form prediction.
    Verify {
        /// Scenario name; omit to list them.
        scenario: Option<String>,
        #[command(flatten)]
        ensemble: EnsembleArgs,
    },
    /// Print the names of all scenarios.
    ListScenarios,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long, value_name = "N")]
    traj: Option<u64>,
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

impl EnsembleArgs {
    fn overrides(&self, out: Option<PathBuf>) -> Overrides {
        Overrides {
            seed: self.seed,
            n_traj: self.traj,
            threads: self.threads,
            out,
        }
    }
}

fn list_scenarios() {
    for s in SCENARIOS {
        println!("{:<28} {}", s.name, s.summary);
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, ensemble: EnsembleArgs) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
    ensemble.overrides(out).apply(&mut cfg);
    let summary = harness::run(&cfg)?;
    println!("wrote {} files to {}", summary.files.len(), summary.out_dir.display());
    for a in &summary.asymptotes {
        let oracle = a.oracle.map(|o| format!("  oracle {o:.6}")).unwrap_or_default();
        println!(
            "{:<5} tail {:.6} ± {:.6}{oracle}",
            a.estimator.to_string(),
            a.estimate.mean,
            a.estimate.standard_error
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(scenario: Option<String>, ensemble: EnsembleArgs) -> Result<ExitCode> {
    let Some(name) = scenario else {
        list_scenarios();
        return Ok(ExitCode::SUCCESS);
    };
    let report = harness::verify(&name, &ensemble.overrides(None))?;
    println!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, ensemble } => run(config, out, ensemble),
        Command::Verify { scenario, ensemble } => verify(scenario, ensemble),
        Command::ListScenarios => {
            list_scenarios();
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
