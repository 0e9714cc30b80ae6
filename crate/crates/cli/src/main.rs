//! `placebocil`: run experiments, ablation matrices and bandit benchmarks.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "placebocil", version, about = "Placebo-based class-incremental learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its reports.
    Run(RunArgs),
    /// Run the ablation matrix described in the config.
    Ablate(AblateArgs),
    /// Check a config and its data files without writing anything.
    Validate(ValidateArgs),
    /// Run the Exp3 policy on a stationary bandit.
    BanditBench(BenchArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, env = "PLACEBOCIL_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, env = "PLACEBOCIL_SEED")]
    seed: Option<u64>,
    /// Progress on stderr.
    #[arg(long, short, env = "PLACEBOCIL_VERBOSE")]
    verbose: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "PLACEBOCIL_OUT", default_value = "out")]
    out: PathBuf,
    /// Overwrite existing reports.
    #[arg(long, env = "PLACEBOCIL_FORCE")]
    force: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "PLACEBOCIL_OUT", default_value = "out")]
    out: PathBuf,
    #[arg(long, env = "PLACEBOCIL_FORCE")]
    force: bool,
    /// Cells run in parallel.
    #[arg(long, env = "PLACEBOCIL_JOBS", default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Bandit spec (JSON): `{"arms": [...], "rounds": N, "xi", "floor", "seed"}`.
    #[arg(long, env = "PLACEBOCIL_CONFIG")]
    config: PathBuf,
    #[arg(long, env = "PLACEBOCIL_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "PLACEBOCIL_OUT", default_value = "out")]
    out: PathBuf,
    #[arg(long, env = "PLACEBOCIL_FORCE")]
    force: bool,
}

/// Failure with its exit code: 1 for runtime errors, 2 for configuration errors.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<placebocil_core::Error> for CliError {
    fn from(e: placebocil_core::Error) -> Self {
        if e.is_config() {
            Self::config(e.to_string())
        } else {
            Self::runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(
            a.common.config.as_deref(),
            a.common.seed,
            &a.out,
            a.force,
            a.common.verbose,
        ),
        Command::Ablate(a) => commands::ablate(
            a.common.config.as_deref(),
            a.common.seed,
            &a.out,
            a.force,
            a.jobs,
            a.common.verbose,
        ),
        Command::Validate(a) => commands::validate(a.common.config.as_deref(), a.common.seed),
        Command::BanditBench(a) => commands::bandit_bench(&a.config, a.seed, &a.out, a.force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if e.code == 2 { "config" } else { "runtime" };
            eprintln!("error[{kind}]: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
