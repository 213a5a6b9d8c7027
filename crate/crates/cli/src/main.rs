use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};
use dkaj_cli::commands;

#[derive(Parser)]
#[command(
    name = "dkaj",
    version,
    about = "Competing-risks survival analysis with deep kernel Aalen-Johansen models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute C^td and IBS on a labeled CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain predictions for rows of a CSV, or dump cluster summaries.
    Explain(ExplainArgs),
    /// Draw a synthetic cohort from a JSON generator config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[command(group(ArgGroup::new("target").required(true).args(["data", "clusters"])))]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    clusters: bool,
    #[arg(long)]
    out: PathBuf,
    /// Largest clusters included in the kernel matrix.
    #[arg(long, default_value_t = 500)]
    max_kernel_clusters: usize,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DKAJ_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("DKAJ_THREADS: `{v}` is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let written = match cli.command {
        Command::Fit { config } => vec![commands::fit(&config)?],
        Command::Evaluate { model, data, out } => vec![commands::evaluate(&model, &data, &out)?],
        Command::Explain(a) => match a.data {
            Some(data) => vec![commands::explain_subjects(&a.model, &data, &a.out)?],
            None => commands::explain_clusters(&a.model, &a.out, a.max_kernel_clusters)?,
        },
        Command::Simulate { config, out } => {
            commands::simulate(&config, &out)?;
            vec![out]
        }
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
