//! `gen-data`: collect demonstrator trajectories into a dataset file,
//! estimating normalization anchors along the way.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use dtcontrol::classical::{StaticGain, StaticPolicy};
use dtcontrol::data::{rollout_collect, write_dataset, Anchors};
use dtcontrol::protocol::{assemble_dataset, rollout_policy, EvalConfig, ProtocolTag};
use dtcontrol::rng::StreamKey;

use crate::run::{
    classify, load_config, load_json, resolve_seed, resolve_task, validation, CliError, OutArgs,
    RunDir,
};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Task: builtin name or a task JSON file.
    #[arg(long)]
    task: Option<String>,

    /// Demonstrators JSON produced by `fit-demonstrator`.
    #[arg(long)]
    demonstrators: Option<PathBuf>,

    /// Which demonstrator generates the data: `expert` or `medium`.
    #[arg(long)]
    which: Option<String>,

    /// Number of trajectories to collect.
    #[arg(long)]
    n_traj: Option<usize>,

    /// Episodes per demonstrator for anchor estimation (0 skips anchors).
    #[arg(long)]
    anchor_episodes: Option<usize>,

    /// Data seed (collection and anchor streams derive from it).
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for anchor evaluation; 1 is bit-reproducible (and so
    /// is any other value, by construction).
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Cfg {
    task: String,
    demonstrators: Option<PathBuf>,
    which: String,
    n_traj: usize,
    anchor_episodes: usize,
    seed: Option<u64>,
}

impl Default for Cfg {
    fn default() -> Self {
        Cfg {
            task: "he1".into(),
            demonstrators: None,
            which: "expert".into(),
            n_traj: 100,
            anchor_episodes: 100,
            seed: None,
        }
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut cfg: Cfg = load_config(args.out.config.as_deref())?;
    crate::run::overlay(&mut cfg.task, args.task);
    if args.demonstrators.is_some() {
        cfg.demonstrators = args.demonstrators;
    }
    crate::run::overlay(&mut cfg.which, args.which);
    crate::run::overlay(&mut cfg.n_traj, args.n_traj);
    crate::run::overlay(&mut cfg.anchor_episodes, args.anchor_episodes);
    let seed = resolve_seed(args.seed, cfg.seed)?;
    cfg.seed = Some(seed);

    if cfg.n_traj == 0 {
        return Err(validation("--n-traj must be >= 1"));
    }
    if args.jobs == 0 {
        return Err(validation("--jobs must be >= 1"));
    }
    if cfg.which != "expert" && cfg.which != "medium" {
        return Err(validation(format!(
            "--which must be `expert` or `medium`, got `{}`",
            cfg.which
        )));
    }

    let task = resolve_task(&cfg.task)?;
    let demos_path = cfg
        .demonstrators
        .as_ref()
        .ok_or_else(|| validation("--demonstrators <path> is required (from fit-demonstrator)"))?;
    let demos: dtcontrol::protocol::Demonstrators = load_json(demos_path, "demonstrators file")?;

    let (gain, noise): (&StaticGain, f64) = if cfg.which == "expert" {
        (&demos.expert, demos.expert_noise)
    } else {
        (&demos.medium, demos.medium_noise)
    };

    let run = RunDir::prepare(&args.out, "gen-data")?;
    run.write_snapshot("gen-data", &cfg)?;

    // Collect the behavior data.
    let mut policy = StaticPolicy::new(gain.clone(), noise);
    let collect_seed = StreamKey::new(seed).with("collect").seed();
    let batch = rollout_collect(&task, &mut policy, cfg.n_traj, collect_seed).map_err(classify)?;

    // Estimate anchors with both demonstrators (identity anchors make the
    // normalized score equal the raw return).
    let mut anchors = BTreeMap::new();
    if cfg.anchor_episodes > 0 {
        let identity = Anchors::new(1.0, 0.0).map_err(classify)?;
        let mean_of = |which: &str, gain: &StaticGain, noise: f64| -> Result<f64, CliError> {
            let eval = EvalConfig::new(
                cfg.anchor_episodes,
                0.0,
                StreamKey::new(seed).with(&format!("anchor-{which}")).seed(),
            );
            let report = rollout_policy(
                || Ok(StaticPolicy::new(gain.clone(), noise)),
                &task,
                &eval,
                &identity,
                ProtocolTag::Single,
                args.jobs,
            )
            .map_err(classify)?;
            Ok(report.mean_return)
        };
        let j_expert = mean_of("expert", &demos.expert, demos.expert_noise)?;
        let j_medium = mean_of("medium", &demos.medium, demos.medium_noise)?;
        anchors.insert(
            task.task_id.clone(),
            Anchors::new(j_expert, j_medium).map_err(classify)?,
        );
    }

    let behavior = format!("static-gain-{}(noise={})", cfg.which, noise);
    let dataset = assemble_dataset(vec![task.clone()], anchors, &behavior, seed, batch.trajectories);
    let path = run.path.join("dataset.json");
    write_dataset(&path, &dataset.header, &dataset.trajectories)
        .map_err(|e| crate::run::runtime(e.to_string()))?;

    println!(
        "gen-data: {} trajectories from `{}` ({}) -> {}",
        dataset.trajectories.len(),
        task.task_id,
        behavior,
        path.display()
    );
    Ok(())
}
