//! Thin command-line front end; all logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mimic::config::PipelineConfig;
use mimic::error::Error;
use mimic::pipeline;

#[derive(Parser)]
#[command(
    name = "mimic",
    about = "MIMIC latent-index pipeline: estimation, diagnostics, scoring, ranking and curve checks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the raw CSV and write standardized per-period datasets.
    Ingest(CommonArgs),
    /// Fit the model per period; write parameter tables and fit_report.json.
    Fit(CommonArgs),
    /// Compute latent scores, the scaled index and ranks per period.
    Score(CommonArgs),
    /// Pair consecutive periods: joined index/rank rows plus correlations.
    Compare(CommonArgs),
    /// Smooth the index against income with a confidence band; also write
    /// the model-implied cubic trend.
    Ekc(CommonArgs),
    /// Generate one synthetic dataset from the [sim] section.
    Simulate(CommonArgs),
    /// Monte Carlo recovery study of the [sim] process.
    Recover(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Ingest(a)
            | Command::Fit(a)
            | Command::Score(a)
            | Command::Compare(a)
            | Command::Ekc(a)
            | Command::Simulate(a)
            | Command::Recover(a) => a,
        }
    }
}

fn failure_class(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Spec(_)
        | Error::Params(_)
        | Error::Data(_)
        | Error::Dimension(_)
        | Error::Violations(_)
        | Error::Config(_)
        | Error::Csv(_) => ("schema", 2),
        Error::Estimation(_) => ("convergence", 3),
        Error::Singular(_) => ("singularity", 4),
        Error::Io(_) | Error::Json(_) => ("io", 5),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = cli.command.common();

    let run = || -> mimic::Result<Vec<PathBuf>> {
        let cfg = PipelineConfig::load(&args.config)?;
        std::fs::create_dir_all(&args.out)?;
        match &cli.command {
            Command::Ingest(_) => pipeline::cmd_ingest(&cfg, &args.out),
            Command::Fit(_) => pipeline::cmd_fit(&cfg, &args.out),
            Command::Score(_) => pipeline::cmd_score(&cfg, &args.out),
            Command::Compare(_) => pipeline::cmd_compare(&cfg, &args.out),
            Command::Ekc(_) => pipeline::cmd_ekc(&cfg, &args.out),
            Command::Simulate(_) => pipeline::cmd_simulate(&cfg, &args.out),
            Command::Recover(_) => pipeline::cmd_recover(&cfg, &args.out),
        }
    };

    match run() {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (class, code) = failure_class(&e);
            eprintln!("error[{class}]: {e}");
            ExitCode::from(code)
        }
    }
}
