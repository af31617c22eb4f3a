use std::path::PathBuf;
use std::process::ExitCode;

use ambsc_core::config::ScenarioConfig;
use ambsc_core::harness::{run_experiment, version_string, Figure, SweepSpec};
use clap::{Parser, Subcommand};

/// Energy-efficiency experiments for backscatter-assisted cooperative NOMA.
#[derive(Parser)]
#[command(name = "ambsc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a figure sweep and write `<figure>.csv` and `<figure>.manifest.json`.
    Run {
        /// JSON scenario config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        figure: Figure,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        /// Worker threads (0 = all cores).
        #[arg(long, env = "AMBSC_WORKERS", default_value_t = 0)]
        workers: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Skip the non-cooperative baseline.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Parse and validate a config, then print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the version, including the git description when available.
    Version,
}

const EXIT_INVALID_CONFIG: u8 = 2;

fn load(path: Option<&PathBuf>) -> Result<ScenarioConfig, ExitCode> {
    let loaded = match path {
        Some(p) => ScenarioConfig::from_path(p),
        None => Ok(ScenarioConfig::default()),
    };
    loaded.map_err(|e| {
        eprintln!("invalid config: {e}");
        ExitCode::from(EXIT_INVALID_CONFIG)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("ambsc {}", version_string());
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(Some(&config)) {
            Ok(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run { config, figure, seeds, workers, out_dir, no_baseline } => {
            let cfg = match load(config.as_ref()) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let spec = SweepSpec::for_figure(figure, seeds, !no_baseline);
            match run_experiment(&cfg, &spec, &out_dir, workers) {
                Ok(manifest) => {
                    eprintln!(
                        "{}: {} jobs, {} failed, wrote {}",
                        manifest.figure,
                        manifest.jobs,
                        manifest.failed_jobs,
                        out_dir.join(&manifest.csv).display()
                    );
                    ExitCode::from(manifest.exit_code() as u8)
                }
                Err(ambsc_core::error::Error::Config(msg)) => {
                    eprintln!("invalid config: {msg}");
                    ExitCode::from(EXIT_INVALID_CONFIG)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
