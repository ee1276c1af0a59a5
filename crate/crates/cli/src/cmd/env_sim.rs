//! `env-sim`: roll a static-gain policy on a task and dump the state
//! trajectory as CSV.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use dtcontrol::classical::{StaticGain, StaticPolicy};
use dtcontrol::protocol::field_trajectory_csv;

use crate::run::{
    load_config, load_json, resolve_seed, resolve_task, validation, CliError, OutArgs, RunDir,
};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Task: builtin name (e.g. `he1`, `burgers`) or a task JSON file.
    #[arg(long)]
    task: Option<String>,

    /// Static gain JSON file (`{"F": [[..]], "bias": [..]}`); omit for the
    /// zero policy.
    #[arg(long)]
    gain: Option<PathBuf>,

    /// Exploration noise standard deviation added to actions.
    #[arg(long)]
    noise: Option<f64>,

    /// Episode seed (initial state and noise streams).
    #[arg(long)]
    seed: Option<u64>,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Cfg {
    task: String,
    gain: Option<PathBuf>,
    noise: f64,
    seed: Option<u64>,
}

impl Default for Cfg {
    fn default() -> Self {
        Cfg {
            task: "he1".into(),
            gain: None,
            noise: 0.0,
            seed: None,
        }
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut cfg: Cfg = load_config(args.out.config.as_deref())?;
    crate::run::overlay(&mut cfg.task, args.task);
    if args.gain.is_some() {
        cfg.gain = args.gain;
    }
    crate::run::overlay(&mut cfg.noise, args.noise);
    let seed = resolve_seed(args.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(validation("--noise must be finite and >= 0"));
    }

    let task = resolve_task(&cfg.task)?;
    let gain = match &cfg.gain {
        Some(path) => {
            let g: StaticGain = load_json(path, "gain file")?;
            if g.f.ncols() != task.env.n_o() || g.f.nrows() != task.env.n_a() {
                return Err(validation(format!(
                    "gain is {}x{} but task `{}` has n_a={} n_o={}",
                    g.f.nrows(),
                    g.f.ncols(),
                    task.task_id,
                    task.env.n_a(),
                    task.env.n_o()
                )));
            }
            g
        }
        None => StaticGain::zeros(task.env.n_a(), task.env.n_o()),
    };

    let run = RunDir::prepare(&args.out, "env-sim")?;
    run.write_snapshot("env-sim", &cfg)?;

    let mut policy = StaticPolicy::new(gain, cfg.noise);
    let csv = field_trajectory_csv(&task, &mut policy, seed).map_err(crate::run::classify)?;
    run.write_text("trajectory.csv", &csv)?;

    println!(
        "env-sim: task `{}`, {} rows -> {}",
        task.task_id,
        csv.lines().count().saturating_sub(1),
        run.path.join("trajectory.csv").display()
    );
    Ok(())
}
