//! `dtcontrol` — command-line front end for the decision-transformer
//! control pipeline.
//!
//! Every artifact-producing subcommand writes its outputs under
//! `<outdir>/<command>-<label>/` together with a `resolved_config.json`
//! snapshot that suffices to rerun the command identically. Exit codes:
//! 0 success, 1 validation error (bad flags, configs, or inputs), 2
//! runtime fault.

mod cmd;
mod run;

use clap::Parser;

#[derive(Parser)]
#[command(
    name = "dtcontrol",
    version,
    about = "Decision-transformer control: data generation, training, evaluation, and baselines",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Roll a static-gain policy on a task and dump the state trajectory as CSV.
    EnvSim(cmd::env_sim::Args),
    /// Fit expert and medium demonstrator gains by derivative-free search.
    FitDemonstrator(cmd::fit_demonstrator::Args),
    /// Collect demonstrator trajectories into a dataset file (with anchors).
    GenData(cmd::gen_data::Args),
    /// Train a decision transformer offline on a dataset.
    Train(cmd::train::Args),
    /// Evaluate a checkpoint, BC model, or demonstrator on a task.
    Eval(cmd::eval::Args),
    /// Few-shot adapt a checkpoint on demonstration trajectories (LoRA).
    Adapt(cmd::adapt::Args),
    /// Scan the H-infinity gamma grid and compare against the nominal task.
    HinfCompare(cmd::hinf_compare::Args),
    /// Aggregate JSON reports into CSV tables.
    Report(cmd::report::Args),
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // --help/--version surface as "errors" but are successes; real
            // usage errors print the usage text and exit 1.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::EnvSim(args) => cmd::env_sim::run(args),
        Command::FitDemonstrator(args) => cmd::fit_demonstrator::run(args),
        Command::GenData(args) => cmd::gen_data::run(args),
        Command::Train(args) => cmd::train::run(args),
        Command::Eval(args) => cmd::eval::run(args),
        Command::Adapt(args) => cmd::adapt::run(args),
        Command::HinfCompare(args) => cmd::hinf_compare::run(args),
        Command::Report(args) => cmd::report::run(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
