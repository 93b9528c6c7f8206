//! `dpe` — driving-primitive energy/emission evaluation pipeline.
//!
//! Stages run in order against a shared artifact store:
//! `simulate → ingest → segment → cluster → couple → evaluate → report`.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dpe_core::coupling::MeasurementChannel;
use dpe_core::pipeline::{
    cmd_cluster, cmd_couple, cmd_evaluate, cmd_ingest, cmd_report, cmd_segment, cmd_simulate,
};
use dpe_core::{PipelineConfig, PipelineError};

#[derive(Debug, Parser)]
#[command(
    name = "dpe",
    version,
    about = "Driving-primitive energy and emission evaluation from fleet trip logs"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Pipeline configuration file (JSON); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Artifact store directory (overrides the config's `store_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Master seed (overrides the config's `seed`).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Reuse a store written under a different configuration.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic fleet as a raw trip-log input directory.
    Simulate {
        /// Output directory for `<vehicle>/<trip>.csv` logs.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Parse trip logs, apply the fleet query, fit per-vehicle standardization.
    Ingest {
        /// Input directory laid out as `<vehicle>/<trip>.csv`.
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
    },
    /// Segment each vehicle's trips into driving primitives.
    Segment,
    /// Cluster primitives across the fleet with cannot-link constraints.
    Cluster {
        /// Vehicle to hold out of cluster training (the one to evaluate).
        #[arg(long, value_name = "ID")]
        eval_vehicle: Option<String>,
    },
    /// Couple ranked clusters to the evaluated vehicle's primitives.
    Couple {
        #[arg(long, value_name = "ID")]
        eval_vehicle: String,
    },
    /// Compute the weighted energy/emission score for the evaluated vehicle.
    Evaluate {
        #[arg(long, value_name = "ID")]
        eval_vehicle: String,
        /// Measurement channel to aggregate.
        #[arg(long, value_enum, default_value_t = ChannelArg::Fuel)]
        channel: ChannelArg,
    },
    /// Write CSV tables and a human-readable run summary.
    Report {
        #[arg(long, value_name = "ID")]
        eval_vehicle: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChannelArg {
    /// Fuel consumption, gal/mi; MPG = 1/E.
    Fuel,
    /// Emission level, g/mi.
    Emission,
}

impl From<ChannelArg> for MeasurementChannel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Fuel => MeasurementChannel::Fuel,
            ChannelArg::Emission => MeasurementChannel::Emission,
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(store) = &global.store {
        config.store_dir = store.clone();
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let config = load_config(&cli.global)?;
    let force = cli.global.force;
    match &cli.command {
        Command::Simulate { out } => {
            cmd_simulate(&config, out)?;
        }
        Command::Ingest { input } => {
            cmd_ingest(&config, input, force)?;
        }
        Command::Segment => cmd_segment(&config, force)?,
        Command::Cluster { eval_vehicle } => {
            cmd_cluster(&config, eval_vehicle.as_deref(), force)?;
        }
        Command::Couple { eval_vehicle } => {
            cmd_couple(&config, eval_vehicle, force)?;
        }
        Command::Evaluate {
            eval_vehicle,
            channel,
        } => {
            let artifact = cmd_evaluate(&config, eval_vehicle, (*channel).into(), force)?;
            match artifact.result.mpg {
                Some(mpg) => println!("E = {:.6}  MPG = {mpg:.4}", artifact.result.e),
                None => println!("E = {:.6}", artifact.result.e),
            }
        }
        Command::Report { eval_vehicle } => {
            let dir = cmd_report(&config, eval_vehicle, force)?;
            println!("report written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
