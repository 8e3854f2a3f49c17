use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsketch_cli::{cmd_report, cmd_run, cmd_sweep, CliError};

/// Federated averaging simulator with compressed uplink updates.
///
/// Log verbosity is read from FEDSKETCH_LOG (e.g. `info`, `debug`).
#[derive(Parser)]
#[command(name = "fedsketch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics CSV and final model.
    Run { config: PathBuf },
    /// Run the experiment once per local learning rate.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lrs: Vec<f32>,
    },
    /// Compare metrics CSVs against a target accuracy.
    Report {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.85)]
        target_accuracy: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDSKETCH_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config).map(|out| {
            println!("wrote {} ({} rows) and {}", out.csv.display(), out.rows.len(), out.model.display());
        }),
        Command::Sweep { config, lrs } => cmd_sweep(&config, &lrs).map(|s| {
            for e in &s.entries {
                match &e.outcome {
                    Ok(Some(acc)) => println!("lr[{}]={}: final accuracy {acc:.4} ({})", e.index, e.lr, e.csv.display()),
                    Ok(None) => println!("lr[{}]={}: no evaluated rounds", e.index, e.lr),
                    Err(msg) => println!("lr[{}]={}: failed: {msg}", e.index, e.lr),
                }
            }
            match s.best {
                Some(b) => println!("best: lr[{}]={}", s.entries[b].index, s.entries[b].lr),
                None => println!("best: none"),
            }
            println!("summary: {}", s.summary_csv.display());
        }),
        Command::Report { csvs, target_accuracy } => cmd_report(&csvs, target_accuracy).map(|t| print!("{t}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
