//! Offline training on context windows and few-shot adapter fine-tuning.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, ContextWindow, Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::model::{
    adamw_step, init_adapters, init_params, loss_and_grad, lora_merge, AdamWHyper, AdamWState,
    Batch, Checkpoint, ModelConfig, TrainLogRow, TrainableSet,
};
use crate::rng::StreamKey;

/// Settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Passes over the shuffled window set; 0 leaves the model at its
    /// initialization.
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives epoch shuffles and per-step dropout streams.
    pub seed: u64,
    pub trainable: TrainableSet,
    pub hyper: AdamWHyper,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 64,
            seed,
            trainable: TrainableSet::All,
            hyper: AdamWHyper::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.hyper.validate()
    }
}

/// Result of a training or adaptation run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
    /// `Some(reason)` when a non-finite loss or update aborted the run; the
    /// checkpoint is then the last epoch-boundary state.
    pub aborted: Option<String>,
    pub steps_run: u64,
}

/// Run `train.epochs` passes of minibatch AdamW over `windows`, mutating the
/// checkpoint in place. The window order reshuffles every epoch from the
/// substream `seed/"shuffle"/epoch`; step `s` uses the dropout substream
/// `seed/"step"/s`. A non-finite loss or parameter aborts the run and rolls
/// the checkpoint back to the start of the aborting epoch.
pub fn train_windows(
    ckpt: &mut Checkpoint,
    windows: &[ContextWindow],
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    train.validate()?;
    if windows.is_empty() {
        return Err(Error::invalid("training needs at least one context window"));
    }
    let cfg = ckpt.config.clone();
    if ckpt.opt_state.is_none() {
        ckpt.opt_state = Some(AdamWState::new());
    }

    let start = Instant::now();
    let mut log = Vec::new();
    let mut aborted = None;
    let mut global_step: u64 = 0;

    'epochs: for epoch in 0..train.epochs {
        // Last-good state to roll back to if this epoch goes non-finite.
        let snapshot = (
            ckpt.params.clone(),
            ckpt.adapters.clone(),
            ckpt.opt_state.clone(),
        );

        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut rng = StreamKey::new(train.seed)
            .with("shuffle")
            .with_index(epoch as u64)
            .rng();
        order.shuffle(&mut rng);

        for chunk in order.chunks(train.batch_size) {
            let batch = Batch::from_windows(chunk.iter().map(|&i| &windows[i]))?;
            let dropout_seed = StreamKey::new(train.seed)
                .with("step")
                .with_index(global_step)
                .seed();
            let grad = match loss_and_grad(
                &cfg,
                &ckpt.params,
                ckpt.adapters.as_ref(),
                &batch,
                train.trainable,
                true,
                dropout_seed,
            ) {
                Ok(g) => g,
                Err(e @ Error::NonFinite(_)) => {
                    (ckpt.params, ckpt.adapters, ckpt.opt_state) = snapshot;
                    aborted = Some(e.to_string());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            match adamw_step(
                &mut ckpt.params,
                ckpt.adapters.as_mut(),
                &grad.grads,
                ckpt.opt_state.as_mut().expect("opt state installed above"),
                &train.hyper,
            ) {
                Ok(()) => {}
                Err(e @ Error::NonFinite(_)) => {
                    (ckpt.params, ckpt.adapters, ckpt.opt_state) = snapshot;
                    aborted = Some(e.to_string());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            global_step += 1;
            log.push(TrainLogRow {
                step: global_step,
                loss: grad.loss,
                lr: train.hyper.lr,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
    }

    Ok(TrainOutcome {
        checkpoint: ckpt.clone(),
        log,
        aborted,
        steps_run: global_step,
    })
}

fn check_traj_dims(cfg: &ModelConfig, traj: &Trajectory) -> Result<()> {
    let (n_o, n_a) = (traj.obs[0].len(), traj.act[0].len());
    if n_o != cfg.n_o || n_a != cfg.n_a {
        return Err(Error::dim(format!(
            "trajectory for task {} has dims (n_o {}, n_a {}) but the model expects ({}, {})",
            traj.task_id, n_o, n_a, cfg.n_o, cfg.n_a
        )));
    }
    Ok(())
}

/// Every context window of every trajectory, in dataset order.
pub fn dataset_windows(cfg: &ModelConfig, trajectories: &[Trajectory]) -> Result<Vec<ContextWindow>> {
    let mut windows = Vec::new();
    for traj in trajectories {
        check_traj_dims(cfg, traj)?;
        windows.extend(make_windows(traj, cfg.k)?);
    }
    Ok(windows)
}

/// Train a freshly initialized model on an offline dataset.
///
/// Parameters (and adapters, when `trainable` is `AdaptersOnly`) initialize
/// from `cfg.seed`; `train.seed` drives shuffling and dropout. With
/// `epochs = 0` the returned checkpoint is exactly the initialization.
pub fn train_offline(
    dataset: &Dataset,
    cfg: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    let windows = dataset_windows(cfg, &dataset.trajectories)?;
    let params = init_params(cfg, cfg.seed)?;
    let adapters = match train.trainable {
        TrainableSet::All => None,
        TrainableSet::AdaptersOnly => Some(init_adapters(
            cfg,
            StreamKey::new(cfg.seed).with("adapters").seed(),
        )?),
    };
    let mut ckpt = Checkpoint {
        config: cfg.clone(),
        params,
        adapters,
        opt_state: Some(AdamWState::new()),
    };
    if train.epochs == 0 {
        return Ok(TrainOutcome {
            checkpoint: ckpt,
            log: Vec::new(),
            aborted: None,
            steps_run: 0,
        });
    }
    train_windows(&mut ckpt, &windows, train)
}

/// Settings for few-shot adaptation of a pretrained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Escape hatch: fine-tune every base weight instead of low-rank
    /// adapters. Results must be reported as full fine-tuning.
    pub adapt_all: bool,
    pub hyper: AdamWHyper,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            epochs: 50,
            batch_size: 64,
            seed: 0,
            adapt_all: false,
            hyper: AdamWHyper::default(),
        }
    }
}

/// Adapt a pretrained checkpoint to `demos` trajectories.
///
/// The default path attaches fresh low-rank adapters (seeded from
/// `adapt.seed/"adapters"`) and trains only them with a fresh optimizer: the
/// base weights are bit-for-bit unchanged, and with `epochs = 0` the result
/// behaves exactly like the base model (fresh adapters are an exact
/// identity). With `adapt_all` the base (with any existing adapters merged)
/// is cloned and every weight trains.
pub fn adapt_k_shot(
    base: &Checkpoint,
    demos: &[Trajectory],
    adapt: &AdaptConfig,
) -> Result<TrainOutcome> {
    if demos.is_empty() {
        return Err(Error::invalid("adaptation needs at least one demonstration"));
    }
    let cfg = base.config.clone();
    let windows = dataset_windows(&cfg, demos)?;

    let (params, adapters, trainable) = if adapt.adapt_all {
        let params = match &base.adapters {
            Some(ad) => lora_merge(&cfg, &base.params, ad)?,
            None => base.params.clone(),
        };
        (params, None, TrainableSet::All)
    } else {
        let adapters = init_adapters(&cfg, StreamKey::new(adapt.seed).with("adapters").seed())?;
        (base.params.clone(), Some(adapters), TrainableSet::AdaptersOnly)
    };

    let mut ckpt = Checkpoint {
        config: cfg,
        params,
        adapters,
        opt_state: Some(AdamWState::new()),
    };
    let train = TrainConfig {
        epochs: adapt.epochs,
        batch_size: adapt.batch_size,
        seed: adapt.seed,
        trainable,
        hyper: adapt.hyper.clone(),
    };
    if adapt.epochs == 0 {
        return Ok(TrainOutcome {
            checkpoint: ckpt,
            log: Vec::new(),
            aborted: None,
            steps_run: 0,
        });
    }
    train_windows(&mut ckpt, &windows, &train)
}
