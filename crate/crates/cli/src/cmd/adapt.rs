//! `adapt`: few-shot adaptation of a trained checkpoint on demonstration
//! trajectories (fresh LoRA adapters over a frozen base by default).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use dtcontrol::data::read_dataset;
use dtcontrol::model::{load_checkpoint, save_checkpoint, train_log_to_csv};
use dtcontrol::protocol::{adapt_k_shot, AdaptConfig};

use crate::run::{
    classify, input_error, load_config, resolve_seed, runtime, validation, CliError, OutArgs,
    RunDir,
};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Base checkpoint to adapt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Dataset JSON whose trajectories serve as the k demonstrations.
    #[arg(long)]
    demos: Option<PathBuf>,

    /// Adaptation epochs over the demonstration windows.
    #[arg(long)]
    epochs: Option<usize>,

    /// Minibatch size.
    #[arg(long)]
    batch_size: Option<usize>,

    /// AdamW learning rate.
    #[arg(long)]
    lr: Option<f64>,

    /// Fine-tune all weights instead of LoRA adapters (escape hatch).
    #[arg(long)]
    adapt_all: bool,

    /// Seed for adapter initialization, shuffling, and dropout.
    #[arg(long)]
    seed: Option<u64>,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Cfg {
    checkpoint: Option<PathBuf>,
    demos: Option<PathBuf>,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    adapt_all: bool,
    seed: Option<u64>,
}

impl Default for Cfg {
    fn default() -> Self {
        let base = AdaptConfig::default();
        Cfg {
            checkpoint: None,
            demos: None,
            epochs: base.epochs,
            batch_size: base.batch_size,
            lr: base.hyper.lr,
            weight_decay: base.hyper.weight_decay,
            adapt_all: false,
            seed: None,
        }
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut cfg: Cfg = load_config(args.out.config.as_deref())?;
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint;
    }
    if args.demos.is_some() {
        cfg.demos = args.demos;
    }
    crate::run::overlay(&mut cfg.epochs, args.epochs);
    crate::run::overlay(&mut cfg.batch_size, args.batch_size);
    crate::run::overlay(&mut cfg.lr, args.lr);
    if args.adapt_all {
        cfg.adapt_all = true;
    }
    let seed = resolve_seed(args.seed, cfg.seed)?;
    cfg.seed = Some(seed);

    let ckpt_path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| validation("--checkpoint <path> is required"))?;
    let demos_path = cfg
        .demos
        .as_ref()
        .ok_or_else(|| validation("--demos <dataset path> is required"))?;
    let base = load_checkpoint(ckpt_path).map_err(input_error)?;
    let demos = read_dataset(demos_path).map_err(input_error)?;
    if demos.trajectories.is_empty() {
        return Err(validation("demonstration dataset contains no trajectories"));
    }

    let mut adapt = AdaptConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
        adapt_all: cfg.adapt_all,
        ..AdaptConfig::default()
    };
    adapt.hyper.lr = cfg.lr;
    adapt.hyper.weight_decay = cfg.weight_decay;

    let run = RunDir::prepare(&args.out, "adapt")?;
    run.write_snapshot("adapt", &cfg)?;

    let outcome = adapt_k_shot(&base, &demos.trajectories, &adapt).map_err(classify)?;

    let out_ckpt = run.path.join("model.ckpt");
    save_checkpoint(
        &out_ckpt,
        &outcome.checkpoint.config,
        &outcome.checkpoint.params,
        outcome.checkpoint.adapters.as_ref(),
        outcome.checkpoint.opt_state.as_ref(),
    )
    .map_err(|e| runtime(e.to_string()))?;
    run.write_text("train_log.csv", &train_log_to_csv(&outcome.log))?;

    if let Some(reason) = outcome.aborted {
        return Err(runtime(format!(
            "adaptation aborted after {} steps (last-good checkpoint saved to {}): {reason}",
            outcome.steps_run,
            out_ckpt.display()
        )));
    }
    println!(
        "adapt: {} demonstrations, {} steps ({}) -> {}",
        demos.trajectories.len(),
        outcome.steps_run,
        if cfg.adapt_all { "full fine-tune" } else { "LoRA adapters" },
        out_ckpt.display()
    );
    Ok(())
}
