//! `mwnet`: simulate → fit → train → infer → evaluate → bench.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing input,
//! 4 dimension mismatch, 5 degenerate or malformed data.

mod commands;
mod config;
mod maps;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mwnet_core::error::Error;
use mwnet_core::nn::HeadKind;

use crate::commands::Experiment;
use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::Parameter(_) | Error::Json(_) => 2,
                Error::MissingInput(_) => 3,
                Error::Io(_) => 3,
                Error::DimensionMismatch(_) => 4,
                Error::DegenerateDistribution
                | Error::DegenerateWindow { .. }
                | Error::DegenerateInput(_)
                | Error::NnlsConvergence { .. }
                | Error::NonFiniteLoss { .. }
                | Error::CorruptHeader(_)
                | Error::TruncatedPayload { .. }
                | Error::Csv(_) => 5,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "mwnet", version, about = "Myelin water imaging: conventional T2 fitting and neural surrogates")]
struct Cli {
    /// Run configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides MWNET_SEED, which overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Head {
    Mwf,
    Gmt2,
    Dist,
}

impl From<Head> for HeadKind {
    fn from(h: Head) -> Self {
        match h {
            Head::Mwf => HeadKind::ScalarMwf,
            Head::Gmt2 => HeadKind::ScalarGmt2,
            Head::Dist => HeadKind::Distribution,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Fast,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort of ECUBE1 files.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Conventional regularized NNLS fit of a cube.
    Fit {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply k-space Tukey apodization with this coefficient first.
        #[arg(long)]
        tukey: Option<f64>,
    },
    /// Train a surrogate on cubes labelled by the conventional fit.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        cubes: Vec<PathBuf>,
        /// Validation cubes for early stopping; without them every fifth
        /// labelled training voxel is held out.
        #[arg(long, num_args = 1..)]
        val: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "dist")]
        head: Head,
        /// Replace the config's training schedule with a named profile.
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a trained surrogate on a cube.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted maps with reference maps.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Cube manifest whose mask further restricts the comparison.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "compare")]
        experiment: Experiment,
        #[arg(long)]
        out: PathBuf,
        /// Also write scatter and Bland-Altman SVGs.
        #[arg(long)]
        svg: bool,
    },
    /// Time the conventional fit against the surrogate.
    Bench {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Worker counts to benchmark, e.g. `1,4`.
        #[arg(long, value_delimiter = ',')]
        threads: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print (or write) a config file with every default.
    ConfigInit {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::ConfigInit { out } = &cli.command {
        return commands::config_init(out.as_deref());
    }
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), cli.seed, cli.workers)?;
    match cli.command {
        Command::Simulate { out } => commands::simulate(&cfg, &out),
        Command::Fit { cube, out, tukey } => commands::fit(&cfg, &cube, &out, tukey),
        Command::Train {
            cubes,
            val,
            head,
            profile,
            out,
        } => {
            if let Some(p) = profile {
                let profile = match p {
                    ProfileArg::Fast => mwnet_core::nn::Profile::Fast,
                    ProfileArg::Paper => mwnet_core::nn::Profile::Paper,
                };
                cfg.train = mwnet_core::nn::TrainConfig::for_profile(profile).with_seed(cfg.seed);
            }
            commands::train(&cfg, &cubes, &val, head.into(), &out)
        }
        Command::Infer { model, cube, out } => commands::infer(&cfg, &model, &cube, &out),
        Command::Evaluate {
            pred,
            reference,
            mask,
            experiment,
            out,
            svg,
        } => commands::evaluate(&cfg, &pred, &reference, mask.as_deref(), experiment, &out, svg),
        Command::Bench {
            cube,
            model,
            threads,
            out,
        } => commands::bench(&cfg, &cube, &model, &threads, &out),
        Command::ConfigInit { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mwnet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
