use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use levy_manifold::experiments::{run, ExperimentConfig};

/// Inertial manifolds for stochastic evolution equations driven by
/// alpha-stable Levy noise: reproducible simulation experiments.
#[derive(Parser)]
#[command(name = "levy-manifold", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run an experiment described by a TOML config file.
    ///
    /// Exit codes: 0 success, 2 config error, 3 spectral gap violation,
    /// 4 numerical failure.
    Run {
        /// Path to the experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = automatic).
        #[arg(long)]
        threads: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress the summary printout.
        #[arg(long)]
        quiet: bool,
    },
    /// Print the default config with every field documented by example.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Commands::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml());
            ExitCode::SUCCESS
        }
        Commands::Run {
            config,
            out,
            threads,
            seed,
            quiet,
        } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(e.exit_code() as u8);
                }
            };
            if let Some(out) = out {
                cfg.experiment.out_dir = out.to_string_lossy().into_owned();
            }
            if let Some(threads) = threads {
                cfg.experiment.threads = threads;
            }
            if let Some(seed) = seed {
                cfg.noise.seed = seed;
            }
            match run(&cfg) {
                Ok(manifest) => {
                    if !quiet {
                        println!(
                            "{}: wrote {} file(s) to {} in {:.2}s [config {}]",
                            manifest.experiment,
                            manifest.outputs.len(),
                            cfg.experiment.out_dir,
                            manifest.wall_time_secs,
                            &manifest.config_sha256[..12],
                        );
                        for (key, value) in &manifest.metrics {
                            println!("  {key} = {value}");
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
