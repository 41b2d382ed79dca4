use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pfconv::config::{ExperimentConfig, Runner};
use pfconv::experiments::run_experiment;
use pfconv::Error;

/// Run a parametric-conversion experiment and write its CSV tables and report.
#[derive(Debug, Parser)]
#[command(name = "pfconv", version)]
struct Cli {
    /// One of: splitting, chevron, power_sweep, store_retrieve, phase_sweep, custom_sequence
    runner: String,

    /// Flat `key = value` config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Worker threads for sweep points (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,

    /// Integrate in the lab frame (only practical for scaled-down frequencies).
    #[arg(long)]
    lab_frame: bool,
}

fn run(cli: &Cli) -> Result<(), Error> {
    let runner: Runner = cli.runner.parse()?;
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(runner, path)?,
        None => ExperimentConfig::parse(runner, "")?,
    };
    if cli.lab_frame {
        cfg.use_lab_frame();
    }
    let output = run_experiment(&cfg, cli.jobs)?;
    output.write(&cfg, &cli.out)?;
    for (k, v) in &output.results {
        println!("{k} = {v}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pfconv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
