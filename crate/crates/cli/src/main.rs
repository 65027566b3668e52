use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cavity_unravel_cli::{resolve, run_experiment, validate, CliError, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cavity-unravel", version, about = "Run engineered-reservoir and quantum-trajectory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a config, run it and write the CSV and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `ensemble.master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::load(path).map_err(|e| match e {
        CliError::Io { path, source } => CliError::Parse(format!("cannot read {}: {source}", path.display())),
        other => other,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out_dir } => load(&config).and_then(|cfg| {
            let cfg = resolve(cfg, seed, out_dir.as_deref());
            let (paths, out) = run_experiment(&cfg)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", paths.csv.display());
            println!("wrote {}", paths.manifest.display());
            Ok(())
        }),
        Command::Validate { config } => load(&config).and_then(|cfg| {
            for w in validate(&cfg)? {
                eprintln!("warning: {w}");
            }
            println!("{}: ok", config.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
