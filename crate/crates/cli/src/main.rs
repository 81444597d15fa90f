//! `vbsim`: simulate branching Volterra-Gaussian systems and check their limits.
//!
//! Exit status: 0 pass, 1 tolerance violated, 2 invalid input or failed run,
//! 3 some replicate hit `max_particles`.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;
use config::{ExperimentConfig, InvalidInput};

#[derive(Parser)]
#[command(name = "vbsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment file.
    config: PathBuf,
    /// Override a config key, e.g. `--set kernel.hurst=0.7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `simulation.threads`.
    #[arg(long, env = "VBSIM_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicates and compare count and functional moments with their formulas.
    Simulate(Common),
    /// Print first and second moment formulas for each test function.
    Moments(Common),
    /// Tabulate σ²(t) and the kernel constants.
    Kernel(Common),
    /// Trace the convergence conditions.
    Conditions(Common),
    /// Run replicates and test the ratio statistic against its limit.
    Lln(Common),
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let (Command::Simulate(c) | Command::Moments(c) | Command::Kernel(c) | Command::Conditions(c) | Command::Lln(c)) = &cli.command;
    let mut cfg = ExperimentConfig::load(&c.config, &c.overrides)?;
    if let Some(dir) = &c.out {
        cfg.output.dir = dir.clone();
    }
    let threads = c.threads.or(cfg.simulation.threads.count()).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| match &cli.command {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Moments(_) => {
            let (o, doc) = commands::moments(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(o)
        }
        Command::Kernel(_) => commands::kernel(&cfg),
        Command::Conditions(_) => commands::conditions(&cfg),
        Command::Lln(_) => commands::lln(&cfg),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ToleranceViolated) => {
            eprintln!("vbsim: tolerance violated");
            ExitCode::from(1)
        }
        Ok(Outcome::Capped) => {
            eprintln!("vbsim: some replicates hit max_particles; artifacts are partial");
            ExitCode::from(3)
        }
        Err(e) => {
            if e.downcast_ref::<InvalidInput>().is_some() {
                eprintln!("vbsim: invalid input: {e:#}");
            } else {
                eprintln!("vbsim: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
