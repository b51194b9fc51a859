use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use offerfarm_cli::{
    cmd_compare, cmd_replay, cmd_run, compare_table, require_dominance, CliError, CompareOptions,
    Format, RunOptions,
};

/// Simulate a resource-offer cluster running service and CI-build frameworks.
#[derive(Parser, Debug)]
#[command(name = "offerfarm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write events.ndjson, metrics and summary.txt.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Check every invariant after every event.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run a scenario under both policies and write compare.csv.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Repeat for several seeds; defaults to five seeds from the scenario's.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute metrics from an event log and check them against the stored file.
    Replay { events: PathBuf },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            verify,
            out,
            format,
        } => cmd_run(&RunOptions {
            scenario,
            seed,
            verify,
            out,
            format,
        })
        .map(|summary| print!("{summary}")),
        Command::Compare {
            scenario,
            seeds,
            verify,
            out,
        } => {
            let rows = cmd_compare(&CompareOptions {
                scenario,
                seeds,
                verify,
                out,
            })?;
            print!("{}", compare_table(&rows));
            require_dominance(&rows)
        }
        Command::Replay { events } => {
            let replay = cmd_replay(&events)?;
            print!("{}", replay.report.summary());
            for path in replay.matched {
                println!("{}: match", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("offerfarm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
