//! `eval`: closed-loop evaluation of a decision-transformer checkpoint, a
//! behavior-cloning model, or a fitted demonstrator.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use dtcontrol::classical::StaticPolicy;
use dtcontrol::data::Anchors;
use dtcontrol::model::load_checkpoint;
use dtcontrol::protocol::{
    bc_from_json, default_target_return, rollout_dt, rollout_policy, BcPolicy, Demonstrators,
    EvalConfig, EvalReport, ProtocolTag,
};

use crate::run::{
    classify, input_error, load_config, load_json, resolve_seed, resolve_task, validation,
    CliError, OutArgs, RunDir,
};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Task: builtin name or a task JSON file.
    #[arg(long)]
    task: Option<String>,

    /// Decision-transformer checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Behavior-cloning model JSON to evaluate.
    #[arg(long)]
    bc_model: Option<PathBuf>,

    /// Demonstrators JSON to evaluate (see `--which`).
    #[arg(long)]
    demonstrators: Option<PathBuf>,

    /// Which demonstrator when `--demonstrators` is given: `expert`/`medium`.
    #[arg(long)]
    which: Option<String>,

    /// Evaluation episodes.
    #[arg(long)]
    episodes: Option<usize>,

    /// Target return prompt (defaults to the task family's pinned value).
    #[arg(long)]
    target_return: Option<f64>,

    /// Expert anchor J* (pass with --j-medium; default identity anchors).
    #[arg(long)]
    j_expert: Option<f64>,

    /// Medium anchor J0 (pass with --j-expert; default identity anchors).
    #[arg(long)]
    j_medium: Option<f64>,

    /// Clamp normalized episode scores to [lo, hi].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    score_cap: Option<Vec<f64>>,

    /// Evaluation seed (per-episode substreams derive from it).
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; results are identical for any value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Cfg {
    task: String,
    checkpoint: Option<PathBuf>,
    bc_model: Option<PathBuf>,
    demonstrators: Option<PathBuf>,
    which: String,
    episodes: usize,
    target_return: Option<f64>,
    j_expert: Option<f64>,
    j_medium: Option<f64>,
    score_cap: Option<(f64, f64)>,
    seed: Option<u64>,
}

impl Default for Cfg {
    fn default() -> Self {
        Cfg {
            task: "he1".into(),
            checkpoint: None,
            bc_model: None,
            demonstrators: None,
            which: "expert".into(),
            episodes: 20,
            target_return: None,
            j_expert: None,
            j_medium: None,
            score_cap: None,
            seed: None,
        }
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut cfg: Cfg = load_config(args.out.config.as_deref())?;
    crate::run::overlay(&mut cfg.task, args.task);
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint;
    }
    if args.bc_model.is_some() {
        cfg.bc_model = args.bc_model;
    }
    if args.demonstrators.is_some() {
        cfg.demonstrators = args.demonstrators;
    }
    crate::run::overlay(&mut cfg.which, args.which);
    crate::run::overlay(&mut cfg.episodes, args.episodes);
    if args.target_return.is_some() {
        cfg.target_return = args.target_return;
    }
    if args.j_expert.is_some() {
        cfg.j_expert = args.j_expert;
    }
    if args.j_medium.is_some() {
        cfg.j_medium = args.j_medium;
    }
    if let Some(cap) = &args.score_cap {
        cfg.score_cap = Some((cap[0], cap[1]));
    }
    let seed = resolve_seed(args.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    if args.jobs == 0 {
        return Err(validation("--jobs must be >= 1"));
    }

    let sources = [
        cfg.checkpoint.is_some(),
        cfg.bc_model.is_some(),
        cfg.demonstrators.is_some(),
    ]
    .iter()
    .filter(|&&b| b)
    .count();
    if sources != 1 {
        return Err(validation(
            "exactly one of --checkpoint, --bc-model, --demonstrators is required",
        ));
    }

    let task = resolve_task(&cfg.task)?;
    let anchors = match (cfg.j_expert, cfg.j_medium) {
        (Some(je), Some(jm)) => Anchors::new(je, jm).map_err(input_error)?,
        (None, None) => Anchors::new(1.0, 0.0).unwrap(),
        _ => {
            return Err(validation(
                "--j-expert and --j-medium must be passed together",
            ))
        }
    };

    let target = match cfg.target_return {
        Some(t) => t,
        // Only the decision transformer consumes the prompt; other policies
        // evaluate fine with the placeholder 0.
        None => default_target_return(&task.task_id).unwrap_or(0.0),
    };
    let mut eval = EvalConfig::new(cfg.episodes, target, seed);
    eval.score_cap = cfg.score_cap;
    eval.validate().map_err(input_error)?;

    let run = RunDir::prepare(&args.out, "eval")?;
    run.write_snapshot("eval", &cfg)?;

    let report: EvalReport = if let Some(path) = &cfg.checkpoint {
        if cfg.target_return.is_none() {
            // A DT evaluation needs a real prompt; an unknown task family
            // with no explicit target is a configuration error.
            default_target_return(&task.task_id).map_err(|_| {
                validation(format!(
                    "task `{}` has no default target return: pass --target-return",
                    task.task_id
                ))
            })?;
        }
        let ckpt = load_checkpoint(path).map_err(input_error)?;
        rollout_dt(&ckpt, &task, &eval, &anchors, ProtocolTag::Single, args.jobs)
            .map_err(classify)?
    } else if let Some(path) = &cfg.bc_model {
        let text = std::fs::read_to_string(path)
            .map_err(|e| validation(format!("cannot read bc model {}: {e}", path.display())))?;
        let model = bc_from_json(&text).map_err(input_error)?;
        rollout_policy(
            || Ok(BcPolicy::new(model.clone())),
            &task,
            &eval,
            &anchors,
            ProtocolTag::Bc,
            args.jobs,
        )
        .map_err(classify)?
    } else {
        let path = cfg.demonstrators.as_ref().unwrap();
        let demos: Demonstrators = load_json(path, "demonstrators file")?;
        let (gain, noise) = match cfg.which.as_str() {
            "expert" => (demos.expert.clone(), demos.expert_noise),
            "medium" => (demos.medium.clone(), demos.medium_noise),
            other => {
                return Err(validation(format!(
                    "--which must be `expert` or `medium`, got `{other}`"
                )))
            }
        };
        rollout_policy(
            || Ok(StaticPolicy::new(gain.clone(), noise)),
            &task,
            &eval,
            &anchors,
            ProtocolTag::Single,
            args.jobs,
        )
        .map_err(classify)?
    };

    run.write_json("eval_report.json", &report)?;
    println!(
        "eval: task `{}`, {} episodes ({} diverged), mean return {:.4}, mean normalized {:.4} -> {}",
        report.task_id,
        report.episodes.len(),
        report.n_diverged,
        report.mean_return,
        report.mean_normalized,
        run.path.join("eval_report.json").display()
    );
    Ok(())
}
