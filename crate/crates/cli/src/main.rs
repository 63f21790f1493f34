//! `romix`: generate synthetic snapshots, train ROMs, fit mixtures and run
//! full experiments.
//!
//! Exit codes: 0 on success, 1 when a stage or model failed, 2 on usage errors.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use romix::bench::{CaseKind, MixtureKind};
use romix::dataset::Format;

use commands::{AggregateArgs, GenerateArgs, MissingInput, Outcome, ReportArgs, TrainArgs};
use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "romix", version, about = "Non-intrusive ROMs and space-dependent model mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; every random stream derives from it.
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
}

fn parse_with<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    match s {
        "json" => Ok(Format::Json),
        "csv" => Ok(Format::Csv),
        other => Err(format!("unknown format '{other}' (json or csv)")),
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic snapshot set.
    Generate {
        #[command(flatten)]
        common: Common,
        /// smooth_family or moving_front.
        #[arg(long, value_parser = parse_with::<CaseKind>)]
        case: Option<CaseKind>,
        /// Number of snapshots.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        nx: Option<usize>,
        /// Second grid dimension; 0 keeps the grid 1D.
        #[arg(long)]
        ny: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// json or csv.
        #[arg(long, value_parser = parse_format)]
        format: Option<Format>,
    },
    /// Train ROMs on a snapshot file.
    Train {
        #[command(flatten)]
        common: Common,
        /// Snapshot file written by `generate`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        latent_dim: Option<usize>,
        /// Comma-separated, e.g. pod-rbf,ae-gpr.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Fit a mixture over ROMs trained by `train`.
    Aggregate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory of `train`.
        #[arg(long)]
        roms: Option<PathBuf>,
        /// rbf-pair or two-best.
        #[arg(long, value_parser = parse_with::<MixtureKind>)]
        mixture: Option<MixtureKind>,
    },
    /// Run a full experiment and write its report.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_with::<CaseKind>)]
        case: Option<CaseKind>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Comma-separated mixtures to build.
        #[arg(long, value_delimiter = ',', value_parser = parse_with::<MixtureKind>)]
        mixture: Option<Vec<MixtureKind>>,
    },
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    let load = |common: &Common| -> anyhow::Result<FileConfig> {
        common.config.as_deref().map_or(Ok(FileConfig::default()), FileConfig::load)
    };
    match command {
        Command::Generate { common, case, n, nx, ny, noise, format } => {
            let file = load(&common)?;
            commands::generate(GenerateArgs { case, n, nx, ny, noise, format }, file, common.seed, &common.out)
        }
        Command::Train { common, data, latent_dim, models } => {
            let file = load(&common)?;
            commands::train(TrainArgs { data, latent_dim, models }, file, common.seed, &common.out)
        }
        Command::Aggregate { common, data, roms, mixture } => {
            let file = load(&common)?;
            commands::aggregate(AggregateArgs { data, roms, mixture }, file, common.seed, &common.out)
        }
        Command::Report { common, case, n, nx, latent_dim, models, mixture } => {
            let file = load(&common)?;
            let args = ReportArgs {
                case,
                n,
                nx,
                latent_dim,
                models,
                mixtures: mixture,
            };
            commands::report(args, file, common.seed, &common.out)
        }
    }
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Generate { common, .. }
        | Command::Train { common, .. }
        | Command::Aggregate { common, .. }
        | Command::Report { common, .. } => &common.out,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = out_dir(&cli.command).to_path_buf();
    match run(cli.command) {
        Ok(outcome) if outcome.failures.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("{} failure(s), outputs in {}:", outcome.failures.len(), out.display());
            for f in &outcome.failures {
                eprintln!("  {f}");
            }
            ExitCode::FAILURE
        }
        Err(err) => {
            if let Some(MissingInput(what)) = err.downcast_ref::<MissingInput>() {
                Cli::command()
                    .error(ErrorKind::MissingRequiredArgument, format!("{what} is required (flag or config file)"))
                    .exit();
            }
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
