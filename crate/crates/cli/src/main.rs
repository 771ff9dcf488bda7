use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use error::CliError;

#[derive(Parser)]
#[command(name = "wignerflux", version, about = "Wigner trajectory simulations of microcanonical flux correlations")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "WIGNERFLUX_WORKERS")]
    workers: Option<usize>,

    /// Output directory, overriding the config file.
    #[arg(long, global = true, env = "WIGNERFLUX_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the energy shell and write the samples.
    Sample { config: PathBuf },
    /// Estimate a time correlation or average.
    Correlate {
        config: PathBuf,
        /// Record the first N paths in full.
        #[arg(long, default_value_t = 0)]
        dump_trajectories: usize,
    },
    /// Damped Fourier transform of a correlation and its peaks.
    Spectrum { config: PathBuf },
    /// Position and momentum dispersions.
    Disperse { config: PathBuf },
    /// Grid diagonalization: levels and exact series.
    Oracle { config: PathBuf },
    /// Paraxial beam moments along z.
    Beam { config: PathBuf },
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let (name, path, dump) = match &cli.command {
        Command::Sample { config } => ("sample", config, 0),
        Command::Correlate { config, dump_trajectories } => ("correlate", config, *dump_trajectories),
        Command::Spectrum { config } => ("spectrum", config, 0),
        Command::Disperse { config } => ("disperse", config, 0),
        Command::Oracle { config } => ("oracle", config, 0),
        Command::Beam { config } => ("beam", config, 0),
    };
    let loaded = config::load(path)?;
    let dir = cli.output_dir.clone().unwrap_or_else(|| loaded.config.output.directory.clone());
    let mut sink = output::Sink::new(dir, loaded.config.output.prefix.clone(), name, loaded.config.seed, &loaded.hash)?;
    let opts = commands::Options { dump_trajectories: dump };
    let summary = match cli.command {
        Command::Sample { .. } => commands::sample(&loaded, &mut sink)?,
        Command::Correlate { .. } => commands::correlate(&loaded, &mut sink, &opts)?,
        Command::Spectrum { .. } => commands::spectrum(&loaded, &mut sink, &opts)?,
        Command::Disperse { .. } => commands::disperse(&loaded, &mut sink)?,
        Command::Oracle { .. } => commands::oracle(&loaded, &mut sink)?,
        Command::Beam { .. } => commands::beam(&loaded, &mut sink)?,
    };
    let files: Vec<String> = sink.written.iter().map(|p| p.display().to_string()).collect();
    Ok(format!(
        "{name}: {summary}\nconfig {} (sha256 {})\nwrote {}",
        loaded.path.display(),
        loaded.hash,
        files.join(", ")
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("wignerflux: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
