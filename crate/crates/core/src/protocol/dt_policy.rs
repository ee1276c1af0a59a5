//! The trained sequence model wrapped as a closed-loop [`Policy`].

use nalgebra::DVector;

use crate::data::ContextWindow;
use crate::env::Policy;
use crate::error::{Error, Result};
use crate::model::{forward, Batch, Checkpoint, LoraAdapters, ModelConfig, ModelParameters};

/// Dimension compatibility between a model and a task: the model's
/// observation/action widths must equal the environment's. Context length
/// is unconstrained (windows slide over any horizon), which is what lets a
/// checkpoint trained on one environment family evaluate or adapt on
/// another with matching widths.
pub fn check_dim_compat(cfg: &ModelConfig, task: &crate::data::TaskSpec) -> Result<()> {
    let (n_o, n_a) = (task.env.n_o(), task.env.n_a());
    if cfg.n_o != n_o || cfg.n_a != n_a {
        return Err(Error::dim(format!(
            "model maps {} observations to {} actions but task `{}` has n_o {} / n_a {}",
            cfg.n_o, cfg.n_a, task.task_id, n_o, n_a
        )));
    }
    Ok(())
}

/// Return-prompted rollout policy.
///
/// Keeps the episode history (prompts, observations, actions), assembles the
/// same left-padded K-step windows used in training, and reads the action
/// prediction at the newest position. The running prompt starts at the
/// target return and decreases by each realized reward
/// (`R̂_{t+1} = R̂_t − r_t`), fed back through [`Policy::observe_reward`].
#[derive(Debug, Clone)]
pub struct DtPolicy {
    cfg: ModelConfig,
    params: ModelParameters,
    adapters: Option<LoraAdapters>,
    target_return: f64,
    current_rtg: f64,
    rtg_hist: Vec<f64>,
    obs_hist: Vec<DVector<f64>>,
    act_hist: Vec<DVector<f64>>,
    prompts: Vec<f64>,
}

impl DtPolicy {
    pub fn new(ckpt: &Checkpoint, target_return: f64) -> Result<Self> {
        if !target_return.is_finite() {
            return Err(Error::invalid("target return must be finite"));
        }
        Ok(DtPolicy {
            cfg: ckpt.config.clone(),
            params: ckpt.params.clone(),
            adapters: ckpt.adapters.clone(),
            target_return,
            current_rtg: target_return,
            rtg_hist: Vec::new(),
            obs_hist: Vec::new(),
            act_hist: Vec::new(),
            prompts: Vec::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// The prompt R̂_t recorded before each action of the current episode.
    pub fn prompts(&self) -> &[f64] {
        &self.prompts
    }

    /// Assemble the current K-step window: real steps right-aligned, left
    /// slots padded out, timesteps relative (always 0..K), and the current
    /// position's unknown action zero-filled (the causal mask keeps it
    /// invisible to the prediction anyway).
    fn window(&self) -> ContextWindow {
        let k = self.cfg.k;
        let steps = self.obs_hist.len(); // includes the current step
        let real = steps.min(k);
        let pad = k - real;
        let start = steps - real;
        let mut rtg = vec![0.0; k];
        let mut obs = vec![DVector::zeros(self.cfg.n_o); k];
        let mut act = vec![DVector::zeros(self.cfg.n_a); k];
        let mut mask = vec![false; k];
        for slot in pad..k {
            let idx = start + (slot - pad);
            rtg[slot] = self.rtg_hist[idx];
            obs[slot] = self.obs_hist[idx].clone();
            if idx < self.act_hist.len() {
                act[slot] = self.act_hist[idx].clone();
            }
            mask[slot] = true;
        }
        ContextWindow {
            rtg,
            obs,
            act,
            timesteps: (0..k).collect(),
            mask,
        }
    }
}

impl Policy for DtPolicy {
    fn reset_episode(&mut self, _episode_seed: u64) {
        self.current_rtg = self.target_return;
        self.rtg_hist.clear();
        self.obs_hist.clear();
        self.act_hist.clear();
        self.prompts.clear();
    }

    fn act(&mut self, obs: &DVector<f64>) -> DVector<f64> {
        self.prompts.push(self.current_rtg);
        self.rtg_hist.push(self.current_rtg);
        self.obs_hist.push(obs.clone());
        let window = self.window();
        let batch = Batch::from_windows(std::iter::once(&window))
            .expect("self-assembled window is consistent");
        let pred = forward(&self.cfg, &self.params, self.adapters.as_ref(), &batch, false, 0)
            .expect("dimensions validated at construction");
        let last = self.cfg.k - 1;
        let action = DVector::from_iterator(
            self.cfg.n_a,
            (0..self.cfg.n_a).map(|j| pred.data()[last * self.cfg.n_a + j]),
        );
        self.act_hist.push(action.clone());
        action
    }

    fn observe_reward(&mut self, reward: f64) {
        self.current_rtg -= reward;
    }
}

/// Scripted policy that replays a fixed action sequence (the "oracle model"
/// used to validate the rollout harness against recorded trajectories).
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    actions: Vec<DVector<f64>>,
    cursor: usize,
}

impl ReplayPolicy {
    pub fn new(actions: Vec<DVector<f64>>) -> Self {
        ReplayPolicy { actions, cursor: 0 }
    }
}

impl Policy for ReplayPolicy {
    fn reset_episode(&mut self, _episode_seed: u64) {
        self.cursor = 0;
    }

    fn act(&mut self, _obs: &DVector<f64>) -> DVector<f64> {
        let a = self.actions[self.cursor.min(self.actions.len() - 1)].clone();
        self.cursor += 1;
        a
    }
}
