//! Command-line front end: configuration, subcommands and report writers.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use weaknull::par::Execution;
use weaknull::system::Fault;

pub use commands::Exit;
use commands::Context;
use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "weaknull", version, about = "Null-structure analysis and Fuchsian evolution near spatial infinity")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every sampled quantity (overrides the configured seeds).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectedFault {
    /// Flip the sign of the first diagonal entry of the `𝓑` operator.
    FlipBcalSign,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify the asymptotic flow of the configured coefficients.
    Analyze,
    /// Evolve the configured data and write snapshots, diagnostics and bound verdicts.
    Evolve,
    /// Run the algebraic identity suite.
    Verify {
        #[arg(long, value_enum)]
        inject_fault: Option<InjectedFault>,
        /// Score the sharp forms of the two operator bounds instead of the stated ones.
        #[arg(long)]
        sharp: bool,
    },
    /// Observed orders of convergence against the exact free waves.
    Convergence,
    /// Compare one evolution with the exact free waves.
    Oracle {
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
}

fn load(cli: &Cli) -> Result<RunConfig, ConfigError> {
    match &cli.config {
        Some(p) => RunConfig::load(p),
        None => Err(ConfigError::Invalid("--config is required for this command".into())),
    }
}

fn context(cli: &Cli) -> Context {
    let exec = if cli.threads == Some(1) { Execution::Sequential } else { Execution::Parallel };
    Context { out: cli.out.clone(), seed: cli.seed, exec }
}

/// Runs the parsed command; errors are printed and mapped to exit codes.
pub fn run(cli: &Cli) -> Exit {
    let ctx = context(cli);
    let result = match &cli.command {
        Command::Verify { inject_fault, sharp } => {
            let fault = inject_fault.map(|InjectedFault::FlipBcalSign| Fault::FlipBcalSign);
            let writer = match &cli.config {
                Some(_) => load(cli).map_err(anyhow::Error::new).and_then(|c| {
                    output::Writer::new(&c.output, cli.out.as_deref()).map(Some)
                }),
                None => match &cli.out {
                    Some(dir) => output::Writer::new(
                        &config::OutputSpec { directory: dir.clone(), ..Default::default() },
                        None,
                    )
                    .map(Some),
                    None => Ok(None),
                },
            };
            writer.and_then(|w| commands::verify(&ctx, fault, *sharp, w.as_ref()))
        }
        cmd => match load(cli) {
            Err(e) => Err(anyhow::Error::new(e)),
            Ok(cfg) => match cmd {
                Command::Analyze => commands::analyze(&cfg, &ctx),
                Command::Evolve => commands::evolve(&cfg, &ctx),
                Command::Convergence => commands::convergence(&cfg, &ctx),
                Command::Oracle { tolerance } => commands::oracle(&cfg, &ctx, *tolerance),
                Command::Verify { .. } => unreachable!(),
            },
        },
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                Exit::ConfigError
            } else {
                Exit::Failed
            }
        }
    }
}
