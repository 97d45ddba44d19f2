use std::path::PathBuf;
use std::process::ExitCode;

use adadkrr::experiment::{emit_outputs, first_trial_data, preset, run_experiment, write_dataset_csv, ExperimentConfig, PRESETS};
use adadkrr::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adadkrr", version, about = "Distributed kernel ridge regression experiments")]
struct Cli {
    /// Worker threads (defaults to the number of logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (a file path or a preset name).
    Run {
        config: String,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Inspect the bundled presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Write the first trial's training data of a synthetic preset.
    GenData {
        preset: String,
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's JSON.
    Show { name: String },
}

const EXIT_ABORTED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn load_config(arg: &str) -> adadkrr::Result<ExperimentConfig> {
    let path = PathBuf::from(arg);
    if path.exists() {
        ExperimentConfig::from_path(&path)
    } else if PRESETS.iter().any(|(n, _)| *n == arg) {
        preset(arg)
    } else {
        Err(Error::Config(format!("`{arg}` is neither a file nor a preset")))
    }
}

fn fail(code: u8, e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn config_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Csv(_) => EXIT_ABORTED,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(EXIT_CONFIG, e);
        }
    }
    match cli.command {
        Command::Run { config, seed, out_dir } => {
            let mut config = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(config_code(&e), e),
            };
            if let Some(s) = seed {
                config.seed = s;
            }
            let dir = out_dir
                .or_else(|| config.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results").join(&config.name));
            let result = match run_experiment(&config) {
                Ok(r) => r,
                Err(e) => return fail(config_code(&e), e),
            };
            if let Err(e) = emit_outputs(&result, &dir) {
                return fail(EXIT_ABORTED, e);
            }
            println!(
                "{}: {} rows, {} aborted, written to {}",
                result.name,
                result.rows.len(),
                result.aborted.len(),
                dir.display()
            );
            if result.aborted.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_ABORTED)
            }
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for (name, _) in PRESETS {
                    println!("{name}");
                }
                ExitCode::SUCCESS
            }
            PresetAction::Show { name } => match PRESETS.iter().find(|(n, _)| *n == name) {
                Some((_, text)) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                None => fail(EXIT_CONFIG, format!("unknown preset `{name}`")),
            },
        },
        Command::GenData { preset: name, out, seed } => {
            let mut config = match load_config(&name) {
                Ok(c) => c,
                Err(e) => return fail(config_code(&e), e),
            };
            if let Some(s) = seed {
                config.seed = s;
            }
            match first_trial_data(&config).and_then(|d| write_dataset_csv(&d, &out)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(config_code(&e), e),
            }
        }
    }
}
