//! `decisiondb` command-line tool.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decisiondb_core::store::DB_PATH_ENV;

#[derive(Parser)]
#[command(
    name = "decisiondb",
    version,
    about = "Decision-valued maps with replayable provenance"
)]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = DB_PATH_ENV)]
    db: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty store, or check an existing one.
    Init {
        #[arg(long)]
        json: bool,
    },
    /// Freeze JSON artifacts into a snapshot.
    Freeze(FreezeArgs),
    /// Plan, declare and execute sweeps, or report on them.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// List map entries of an experiment.
    Map(MapArgs),
    /// Recompute decision identities from stored artifacts.
    Replay(ReplayArgs),
    /// Show a stored record, spec or blob, or table counts when no id is given.
    Inspect {
        id: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Seeded routing demo.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Args)]
struct FreezeArgs {
    /// `name=path` of a JSON artifact; repeatable.
    #[arg(long = "artifact", required = true, value_name = "NAME=PATH")]
    artifacts: Vec<String>,
    #[arg(long)]
    window_start: String,
    #[arg(long)]
    window_end: String,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Run all stages of a plan file.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Policy spec file to register before planning.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        json: bool,
    },
    /// Persistence regions and boundaries of stored sweeps.
    Report {
        /// Defaults to every plan of the experiment.
        #[arg(long = "plan-id")]
        plan_ids: Vec<String>,
        #[arg(long, default_value = "demo")]
        experiment: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct MapArgs {
    #[arg(long, default_value = "demo")]
    experiment: String,
    #[arg(long = "plan-id")]
    plan_id: Option<String>,
    #[arg(long = "snapshot-id")]
    snapshot_id: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, conflicts_with = "experiment", required_unless_present = "experiment")]
    decision: Option<String>,
    #[arg(long)]
    experiment: Option<String>,
    /// Also recheck snapshot, representation, run and plan identifiers and
    /// every blob on the chain.
    #[arg(long)]
    deep: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum DemoCommand {
    /// Freeze the demo graph and register its policy and plans.
    Generate {
        #[arg(long, default_value_t = decisiondb_core::routing::DEMO_SEED)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Run both demo sweeps and print the report.
    Sweep {
        #[arg(long, default_value_t = decisiondb_core::routing::DEMO_SEED)]
        seed: u64,
        #[arg(long, default_value = decisiondb_core::routing::DEMO_EXPERIMENT)]
        experiment: String,
        #[arg(long)]
        json: bool,
    },
    /// Replay every decision of the demo experiment.
    Replay {
        #[arg(long, default_value = decisiondb_core::routing::DEMO_EXPERIMENT)]
        experiment: String,
        #[arg(long)]
        deep: bool,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
