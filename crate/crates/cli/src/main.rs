use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isac_track::evaluation::METRICS_CSV_HEADER;
use isac_track::pipeline::{self, ExperimentConfig};
use isac_track::scenario::scenario_preset;
use isac_track::Error;

/// Range-Doppler multi-object tracking workbench.
#[derive(Parser)]
#[command(name = "isac-track", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, process, track and evaluate one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dump_csi: bool,
        #[arg(long)]
        dump_periodogram: bool,
        /// Worker threads for the sensing stage.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Side-by-side table of two metrics files or run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Print CSV instead of markdown.
        #[arg(long)]
        csv: bool,
    },
    /// Scenario utilities.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Write a preset scenario as JSON.
    Gen {
        #[arg(long)]
        preset: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::Format { .. } => 2,
            _ => 1,
        };
        Failure { code, error: e.into() }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| {
        let io = matches!(e, Error::Io { .. });
        let mut f = Failure::from(e);
        if io {
            f.code = 2;
        }
        f
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            dump_csi,
            dump_periodogram,
            parallel,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output.dir = Some(out);
            }
            cfg.output.dump_csi |= dump_csi;
            cfg.output.dump_periodogram |= dump_periodogram;
            if parallel.is_some() {
                cfg.parallel = parallel;
            }
            cfg.validate()?;
            let out = pipeline::run(&cfg)?;
            println!("{METRICS_CSV_HEADER}\n{}", out.metrics.csv_row());
            Ok(())
        }
        Command::Compare { a, b, csv } => {
            let a = pipeline::load_metrics(&a)?;
            let b = pipeline::load_metrics(&b)?;
            if csv {
                print!("{}", pipeline::compare_csv(&a, &b));
            } else {
                print!("{}", pipeline::compare(&a, &b));
            }
            Ok(())
        }
        Command::Scenario {
            command: ScenarioCommand::Gen { preset, seed, out },
        } => {
            let s = scenario_preset(preset, seed).map_err(|e| match e {
                Error::Contract(msg) => Failure {
                    code: 2,
                    error: anyhow::anyhow!(msg),
                },
                other => other.into(),
            })?;
            s.save(&out)?;
            log::info!("wrote {} ({} objects)", out.display(), s.trajectories.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
