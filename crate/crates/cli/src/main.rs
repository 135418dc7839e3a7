mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::settings::Settings;

/// Pre-train a reduced-resolution network, resize it, keep training.
#[derive(Parser, Debug)]
#[command(name = "sptrain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer multiplication counts and speedup bounds, as JSON.
    Analyze {
        #[arg(long)]
        arch: PathBuf,
    },
    /// Write the pre-train architecture and its scale plan.
    Derive {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plan output; defaults to `<out>.plan.json`.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// scale | preserve
        #[arg(long)]
        amplitude: Option<String>,
    },
    /// Train the target or pre-train network from scratch (or resume).
    Train(Settings),
    /// Resize a pre-train checkpoint and keep training the target.
    ResizeContinue(Settings),
    /// Pre-train once, resize at several epochs, compare against a baseline.
    Experiment(Settings),
    /// Write a generated 10-class image set in cifar-binary layout.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        train_count: usize,
        #[arg(long, default_value_t = 2_000)]
        test_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze { arch } => commands::analyze(&arch),
        Command::Derive {
            arch,
            out,
            plan,
            amplitude,
        } => {
            let amplitude = Settings {
                amplitude,
                ..Settings::default()
            }
            .amplitude()?;
            commands::derive(&arch, &out, plan.as_deref(), amplitude)
        }
        Command::Train(s) => commands::train(&s.resolve()?),
        Command::ResizeContinue(s) => commands::resize_continue(&s.resolve()?),
        Command::Experiment(s) => commands::experiment(&s.resolve()?),
        Command::GenData {
            out,
            train_count,
            test_count,
            seed,
        } => commands::gen_data(&out, train_count, test_count, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::Usage(e.kind().to_string());
            eprintln!("{}", err.json_line());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.exit_code())
        }
    }
}
