//! `fit-demonstrator`: fit expert and medium static-gain demonstrators on
//! a task by derivative-free search.

use serde::{Deserialize, Serialize};

use dtcontrol::protocol::Demonstrators;

use crate::cmd::SearchPatch;
use crate::run::{load_config, resolve_seed, resolve_task, validation, CliError, OutArgs, RunDir};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Task: builtin name or a task JSON file.
    #[arg(long)]
    task: Option<String>,

    /// Exploration noise the expert demonstrator will carry.
    #[arg(long)]
    expert_noise: Option<f64>,

    /// Exploration noise the medium demonstrator will carry.
    #[arg(long)]
    medium_noise: Option<f64>,

    /// Search seed (perturbations and evaluation episodes).
    #[arg(long)]
    seed: Option<u64>,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Cfg {
    task: String,
    expert_noise: f64,
    medium_noise: f64,
    search: SearchPatch,
    seed: Option<u64>,
}

impl Default for Cfg {
    fn default() -> Self {
        Cfg {
            task: "he1".into(),
            expert_noise: 0.1,
            medium_noise: 0.1,
            search: SearchPatch::default(),
            seed: None,
        }
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut cfg: Cfg = load_config(args.out.config.as_deref())?;
    crate::run::overlay(&mut cfg.task, args.task);
    crate::run::overlay(&mut cfg.expert_noise, args.expert_noise);
    crate::run::overlay(&mut cfg.medium_noise, args.medium_noise);
    let seed = resolve_seed(args.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    for (name, v) in [("expert_noise", cfg.expert_noise), ("medium_noise", cfg.medium_noise)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(validation(format!("{name} must be finite and >= 0")));
        }
    }

    let task = resolve_task(&cfg.task)?;
    let search = cfg.search.apply(seed);

    let run = RunDir::prepare(&args.out, "fit-demonstrator")?;
    run.write_snapshot("fit-demonstrator", &cfg)?;

    let demos = Demonstrators::fit(&task, &search, cfg.expert_noise, cfg.medium_noise)
        .map_err(crate::run::classify)?;
    run.write_json("demonstrators.json", &demos)?;

    println!(
        "fit-demonstrator: task `{}` -> {}",
        task.task_id,
        run.path.join("demonstrators.json").display()
    );
    Ok(())
}
