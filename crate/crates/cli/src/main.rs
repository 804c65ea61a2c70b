use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pct::{load_config, merge_reports, run, EXIT_INVALID_CONFIG, EXIT_RUNTIME};

#[derive(Parser)]
#[command(name = "pct", version, about = "Perception-coherence transfer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON configuration.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed, overriding `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for sweeps over batch sizes or widths.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a configuration and print it with every default filled in.
    Validate { config: PathBuf },
    /// Merge the results.csv files of several run directories to stdout.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, jobs } => {
            let cfg = match load_config(&config, seed, out) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("invalid config: {e}");
                    return ExitCode::from(EXIT_INVALID_CONFIG as u8);
                }
            };
            match run(&cfg, jobs) {
                Ok(rows) => {
                    eprintln!("{}: {} rows in {}", cfg.experiment, rows.len(), cfg.output_dir.join("results.csv").display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(EXIT_RUNTIME as u8)
                }
            }
        }
        Command::Validate { config } => match load_config(&config, None, None) {
            Ok(cfg) => {
                print!("{}", cfg.to_json());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid config: {e}");
                ExitCode::from(EXIT_INVALID_CONFIG as u8)
            }
        },
        Command::Report { dirs } => match merge_reports(&dirs) {
            Ok(csv) => {
                print!("{csv}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("report failed: {e}");
                ExitCode::from(EXIT_RUNTIME as u8)
            }
        },
    }
}
