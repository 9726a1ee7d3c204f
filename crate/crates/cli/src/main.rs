//! Command-line runner for the collective NoC experiments.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use collnoc::collectives::CollectiveKind;
use commands::{CliError, Context};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "collnoc", version, about = "Collective NoC simulator and model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV files and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write a flit trace per collective cell under `<out>/traces`.
    #[arg(long, global = true)]
    trace: bool,
    /// Workload seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent simulations.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Calibration file written by `calibrate`; calibrates afresh if absent.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Software and hardware barrier runtime over participant counts.
    Barrier,
    /// One-row multicast: simulated and modeled runtime per implementation.
    Mcast,
    /// One-row reduction: simulated and modeled runtime per implementation.
    Reduce,
    /// Multicast over blocks of several rows.
    Mcast2d,
    /// Reduction over blocks of several rows.
    Reduce2d,
    /// SUMMA and FusedConcatLinear runtime, energy and primitive counts.
    Gemm,
    /// Fit the model parameters to the simulator.
    Calibrate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Barrier => "barrier",
            Command::Mcast => "mcast",
            Command::Reduce => "reduce",
            Command::Mcast2d => "mcast2d",
            Command::Reduce2d => "reduce2d",
            Command::Gemm => "gemm",
            Command::Calibrate => "calibrate",
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let sim = config.sim_config()?;
    let ctx = Context {
        sim,
        out: commands::out_dir(cli.out.as_deref()),
        trace: cli.trace,
        params: cli.params.clone(),
        config,
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(config::ConfigError::Invalid("--jobs must be positive".into()).into());
        }
        // Only fails if a global pool already exists, which keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let name = cli.command.name();
    let (tables, extra) = match cli.command {
        Command::Barrier => (commands::barrier(&ctx)?, vec![]),
        Command::Mcast => commands::collective(&ctx, CollectiveKind::Multicast, &[1], name)?,
        Command::Reduce => commands::collective(&ctx, CollectiveKind::Reduction, &[1], name)?,
        Command::Mcast2d => commands::collective(&ctx, CollectiveKind::Multicast, &ctx.config.rows_2d()?, name)?,
        Command::Reduce2d => commands::collective(&ctx, CollectiveKind::Reduction, &ctx.config.rows_2d()?, name)?,
        Command::Gemm => (commands::gemm(&ctx)?, vec![]),
        Command::Calibrate => commands::calibrate_cmd(&ctx)?,
    };
    output::write_all(&ctx.out, name, ctx.sim.seed, &ctx.config.canonical(), &tables, &extra)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
