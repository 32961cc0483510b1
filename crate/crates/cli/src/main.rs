use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use l3_cli::commands::{self, MANIFEST_FILE, MODEL_DIR};
use l3_cli::config::{DataSource, ExperimentConfig};
use l3_cli::{CliError, Result};

/// Learned lifting linearization and baseline system identification.
#[derive(Debug, Parser)]
#[command(name = "l3", version)]
struct Cli {
    /// Seed for data generation, splits and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the toy plant and write trajectory CSVs and a manifest.
    Datagen,
    /// Validate a directory of trajectory CSVs and write a manifest.
    Ingest {
        /// Directory of trajectory CSVs; defaults to the config's csv_dir.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fit the configured models.
    Train {
        /// Dataset manifest; defaults to <out>/manifest.json.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Roll out models on a test trajectory and report the ISE.
    Eval {
        /// Model files; defaults to every model in <out>/models.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Test trajectory CSV; defaults to the configured square wave.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Check analytic L3 gradients against finite differences.
    Gradcheck,
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn model_files(out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join(MODEL_DIR);
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::Io { path: dir.clone(), source: e })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Datagen => {
            let manifest = commands::datagen(&cfg, cfg.resolve_seed(cli.seed)?, &out)?;
            if cli.json {
                print_json(&manifest);
            } else {
                println!(
                    "wrote {} trajectories to {}",
                    manifest.trajectories.len(),
                    out.join(commands::TRAJECTORY_DIR).display()
                );
            }
        }
        Command::Ingest { data } => {
            let dir = match (data, &cfg.data) {
                (Some(d), _) => d,
                (None, DataSource::CsvDir(d)) => d.clone(),
                (None, DataSource::Plant(_)) => {
                    return Err(CliError::Config("ingest needs --data <dir> or a csv_dir data source".into()))
                }
            };
            let manifest = commands::ingest(&dir, cfg.resolve_seed(cli.seed)?, &out)?;
            if cli.json {
                print_json(&manifest);
            } else {
                println!(
                    "ingested {} trajectories (l = {}, n = {}, z = {}, dt = {}), DMDc dimension {}",
                    manifest.trajectories.len(),
                    manifest.state_dim,
                    manifest.input_dim,
                    manifest.observable_dim,
                    manifest.dt,
                    manifest.dmdc_dimension
                );
            }
        }
        Command::Train { manifest } => {
            let manifest = manifest.unwrap_or_else(|| out.join(MANIFEST_FILE));
            let paths = commands::train(&cfg, cfg.resolve_seed(cli.seed)?, &manifest, &out)?;
            if cli.json {
                print_json(&paths);
            } else {
                for p in paths {
                    println!("wrote {}", p.display());
                }
            }
        }
        Command::Eval { models, test } => {
            let models = if models.is_empty() { model_files(&out)? } else { models };
            let report = commands::eval(&cfg, &models, test.as_deref(), &out)?;
            if cli.json {
                print_json(&report);
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::Gradcheck => {
            let report = commands::gradcheck(cli.seed.or(cfg.seed).unwrap_or(0))?;
            if cli.json {
                print_json(&report);
            } else {
                println!(
                    "{} parameters, max relative error {:.3e}, max absolute error {:.3e}",
                    report.parameters, report.max_relative_error, report.max_absolute_error
                );
            }
            if report.max_relative_error > 1e-4 {
                return Err(CliError::Numeric("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
