//! `train`: offline decision-transformer training on a dataset file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use dtcontrol::data::read_dataset;
use dtcontrol::model::{save_checkpoint, train_log_to_csv, ModelConfig, TrainableSet};
use dtcontrol::protocol::{train_offline, TrainConfig};

use crate::run::{
    classify, input_error, load_config, resolve_seed, runtime, validation, CliError, OutArgs,
    RunDir,
};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dataset JSON produced by `gen-data`.
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Model preset when no full model config is given: `tiny` or `desk`.
    #[arg(long)]
    preset: Option<String>,

    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,

    /// Minibatch size (windows per optimizer step).
    #[arg(long)]
    batch_size: Option<usize>,

    /// AdamW learning rate.
    #[arg(long)]
    lr: Option<f64>,

    /// AdamW decoupled weight decay.
    #[arg(long)]
    weight_decay: Option<f64>,

    /// Which parameters train: `all` or `adapters_only`.
    #[arg(long)]
    trainable: Option<String>,

    /// Seed for initialization, shuffling, and dropout streams.
    #[arg(long)]
    seed: Option<u64>,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Cfg {
    dataset: Option<PathBuf>,
    /// Full model architecture; when absent, `preset` sized from the data.
    model: Option<ModelConfig>,
    preset: String,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    trainable: String,
    seed: Option<u64>,
}

impl Default for Cfg {
    fn default() -> Self {
        let hyper = dtcontrol::model::AdamWHyper::default();
        Cfg {
            dataset: None,
            model: None,
            preset: "desk".into(),
            epochs: 10,
            batch_size: 64,
            lr: hyper.lr,
            weight_decay: hyper.weight_decay,
            trainable: "all".into(),
            seed: None,
        }
    }
}

pub fn parse_trainable(s: &str) -> Result<TrainableSet, CliError> {
    match s {
        "all" => Ok(TrainableSet::All),
        "adapters_only" => Ok(TrainableSet::AdaptersOnly),
        other => Err(validation(format!(
            "--trainable must be `all` or `adapters_only`, got `{other}`"
        ))),
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut cfg: Cfg = load_config(args.out.config.as_deref())?;
    if args.dataset.is_some() {
        cfg.dataset = args.dataset;
    }
    crate::run::overlay(&mut cfg.preset, args.preset);
    crate::run::overlay(&mut cfg.epochs, args.epochs);
    crate::run::overlay(&mut cfg.batch_size, args.batch_size);
    crate::run::overlay(&mut cfg.lr, args.lr);
    crate::run::overlay(&mut cfg.weight_decay, args.weight_decay);
    crate::run::overlay(&mut cfg.trainable, args.trainable);
    let seed = resolve_seed(args.seed, cfg.seed)?;
    cfg.seed = Some(seed);

    let trainable = parse_trainable(&cfg.trainable)?;
    let dataset_path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| validation("--dataset <path> is required"))?;
    let dataset = read_dataset(dataset_path).map_err(input_error)?;
    let first = dataset
        .trajectories
        .first()
        .ok_or_else(|| validation("dataset contains no trajectories"))?;
    let (n_o, n_a) = (first.obs[0].len(), first.act[0].len());

    let model_cfg = match cfg.model.clone() {
        Some(m) => m,
        None => {
            let mut m = match cfg.preset.as_str() {
                "tiny" => ModelConfig::tiny(n_o, n_a),
                "desk" => ModelConfig::desk(n_o, n_a),
                other => {
                    return Err(validation(format!(
                        "--preset must be `tiny` or `desk`, got `{other}`"
                    )))
                }
            };
            m.seed = seed;
            m
        }
    };
    // Snapshot carries the fully resolved architecture.
    cfg.model = Some(model_cfg.clone());

    let mut train = TrainConfig::new(cfg.epochs, seed);
    train.batch_size = cfg.batch_size;
    train.trainable = trainable;
    train.hyper.lr = cfg.lr;
    train.hyper.weight_decay = cfg.weight_decay;

    let run = RunDir::prepare(&args.out, "train")?;
    run.write_snapshot("train", &cfg)?;

    let outcome = train_offline(&dataset, &model_cfg, &train).map_err(classify)?;

    let ckpt_path = run.path.join("model.ckpt");
    save_checkpoint(
        &ckpt_path,
        &outcome.checkpoint.config,
        &outcome.checkpoint.params,
        outcome.checkpoint.adapters.as_ref(),
        outcome.checkpoint.opt_state.as_ref(),
    )
    .map_err(|e| runtime(e.to_string()))?;
    run.write_text("train_log.csv", &train_log_to_csv(&outcome.log))?;

    if let Some(reason) = outcome.aborted {
        return Err(runtime(format!(
            "training aborted after {} steps (last-good checkpoint saved to {}): {reason}",
            outcome.steps_run,
            ckpt_path.display()
        )));
    }
    let final_loss = outcome.log.last().map(|r| r.loss);
    println!(
        "train: {} steps on {} trajectories, final loss {} -> {}",
        outcome.steps_run,
        dataset.trajectories.len(),
        final_loss.map_or("n/a".into(), |l| format!("{l:.6}")),
        ckpt_path.display()
    );
    Ok(())
}
