use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use disc_admm_cli::config::ExperimentConfig;
use disc_admm_cli::{run_experiment, sweep, CliError, RunOptions, SweepAxis};

#[derive(Parser)]
#[command(name = "disc-admm", version, about = "Run consensus ADMM experiments from a TOML config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run the experiment once per value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of T, sigma, tau1, tau2, rho.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the generated schedule to stdout.
    #[arg(long)]
    dump_schedule: bool,
    /// Fail instead of warning when rho does not exceed rho_min.
    #[arg(long)]
    strict_rho: bool,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            strict_rho: self.strict_rho,
            dump_schedule: self.dump_schedule,
            quiet: self.quiet,
            output: self.output.clone(),
        }
    }
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common } => {
            let (cfg, base) = ExperimentConfig::load(&common.config)?;
            run_experiment(cfg, &base, &common.options())?;
        }
        Command::Sweep { common, axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let (cfg, base) = ExperimentConfig::load(&common.config)?;
            sweep(cfg, &base, axis, &values, &common.options())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
