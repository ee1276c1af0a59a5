//! Trajectory collection, reward-to-go, context windows, score
//! normalization, task generation, and the `.djsonl` dataset format.
//!
//! A [`Trajectory`] stores one episode as `{o_t, a_t, r_t}` for
//! `t = 0..=T` (so each sequence has `T+1 = n_steps` entries, with `o_t`
//! observed *before* `a_t` is applied). [`make_windows`] slices a trajectory
//! into left-padded context windows of length `K` whose return-to-go channel
//! is the suffix sum of rewards, and [`normalize_score`] maps raw returns to
//! the expert = 1 / medium = 0 scale used throughout the evaluation
//! protocols.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::env::{rollout_episode, EnvSpec, EpisodeRecord, Policy, RewardSpec};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

pub mod io;
pub mod tasks;

pub use io::{read_dataset, write_dataset, Dataset, DatasetHeader, DATASET_FORMAT_VERSION};
pub use tasks::{
    builtin_task, builtin_task_names, in_dist_perturbation, out_dist_perturbation,
    perturb_linear_task, sample_pde_task, SampleMode, BURGERS_OUT_DIST, CDR_OUT_DIST,
};

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

/// One recorded episode: `{o₀, a₀, r₀, …, o_T, a_T, r_T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: String,
    pub obs: Vec<DVector<f64>>,
    pub act: Vec<DVector<f64>>,
    pub rew: Vec<f64>,
}

impl Trajectory {
    /// Validates equal non-empty sequence lengths and finite entries.
    pub fn new(
        task_id: String,
        obs: Vec<DVector<f64>>,
        act: Vec<DVector<f64>>,
        rew: Vec<f64>,
    ) -> Result<Self> {
        if obs.is_empty() || obs.len() != act.len() || obs.len() != rew.len() {
            return Err(Error::invalid(format!(
                "trajectory sequences must be non-empty and equal length \
                 (obs {}, act {}, rew {})",
                obs.len(),
                act.len(),
                rew.len()
            )));
        }
        let finite_vecs =
            |vs: &[DVector<f64>]| vs.iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !finite_vecs(&obs) || !finite_vecs(&act) || !rew.iter().all(|r| r.is_finite()) {
            return Err(Error::NonFinite("trajectory contains non-finite entries".to_string()));
        }
        Ok(Self {
            task_id,
            obs,
            act,
            rew,
        })
    }

    pub fn from_episode(task_id: String, episode: EpisodeRecord) -> Result<Self> {
        Self::new(task_id, episode.obs, episode.actions, episode.rewards)
    }

    /// Number of recorded steps, `T + 1`.
    pub fn len(&self) -> usize {
        self.rew.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rew.is_empty()
    }

    /// Undiscounted episode return `Σ_t r_t`.
    pub fn episode_return(&self) -> f64 {
        self.rew.iter().sum()
    }
}

// ---------------------------------------------------------------------------
// TaskSpec
// ---------------------------------------------------------------------------

/// How a task came to exist; together with the nominal task this fully
/// reconstructs the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Provenance {
    /// The nominal (unperturbed) task.
    Nominal,
    /// Linear task with Gaussian matrix perturbations of exact Frobenius
    /// norms `delta_a_norm` / `delta_b2_norm` drawn from `seed`.
    Perturbed {
        delta_a_norm: f64,
        delta_b2_norm: f64,
        seed: u64,
    },
    /// PDE task with parameters sampled (or enumerated) by
    /// [`sample_pde_task`]; the record alone pins the physics.
    Sampled {
        nu: f64,
        c: f64,
        zeta: f64,
        phi: f64,
        mode: String,
        seed: u64,
    },
}

/// An environment + reward pairing with a unique id and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawTaskSpec", into = "RawTaskSpec")]
pub struct TaskSpec {
    pub env: EnvSpec,
    pub reward: RewardSpec,
    pub task_id: String,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaskSpec {
    task_id: String,
    env: EnvSpec,
    reward: RewardSpec,
    provenance: Provenance,
}

impl TaskSpec {
    pub fn new(
        task_id: String,
        env: EnvSpec,
        reward: RewardSpec,
        provenance: Provenance,
    ) -> Result<Self> {
        if reward.n_s() != env.n_s() || reward.n_a() != env.n_a() {
            return Err(Error::dim(format!(
                "task `{task_id}`: reward weights are {}×{} but the environment is {}×{}",
                reward.n_s(),
                reward.n_a(),
                env.n_s(),
                env.n_a()
            )));
        }
        Ok(Self {
            env,
            reward,
            task_id,
            provenance,
        })
    }
}

impl TryFrom<RawTaskSpec> for TaskSpec {
    type Error = Error;
    fn try_from(raw: RawTaskSpec) -> Result<Self> {
        TaskSpec::new(raw.task_id, raw.env, raw.reward, raw.provenance)
    }
}

impl From<TaskSpec> for RawTaskSpec {
    fn from(t: TaskSpec) -> Self {
        RawTaskSpec {
            task_id: t.task_id,
            env: t.env,
            reward: t.reward,
            provenance: t.provenance,
        }
    }
}

// ---------------------------------------------------------------------------
// Collection
// ---------------------------------------------------------------------------

/// Result of [`rollout_collect`]: the kept trajectories plus how many
/// diverged episodes were discarded and resampled along the way.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub discarded: usize,
}

/// Collect `n_traj` full episodes of `task` under `policy`.
///
/// Episode `i` (counting every attempt, discarded or kept) runs on the seed
/// substream `seed / "collect" / i`, so the whole batch is deterministic.
/// Episodes that hit the divergence fault are discarded and resampled; once
/// the discards outnumber `n_traj` (a discard rate above 50%) collection
/// fails.
pub fn rollout_collect(
    task: &TaskSpec,
    policy: &mut dyn Policy,
    n_traj: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    let mut trajectories = Vec::with_capacity(n_traj);
    let mut discarded = 0usize;
    let mut attempt = 0u64;
    while trajectories.len() < n_traj {
        let ep_seed = StreamKey::new(seed)
            .with("collect")
            .with_index(attempt)
            .seed();
        attempt += 1;
        match rollout_episode(&task.env, &task.reward, policy, ep_seed) {
            Ok(episode) => {
                trajectories.push(Trajectory::from_episode(task.task_id.clone(), episode)?);
            }
            Err(Error::Diverged { .. }) => {
                discarded += 1;
                if discarded > n_traj {
                    return Err(Error::Protocol(format!(
                        "collection on task `{}` discarded {discarded} episodes while \
                         gathering {n_traj}: discard rate exceeds 50%",
                        task.task_id
                    )));
                }
            }
            Err(other) => return Err(other),
        }
    }
    Ok(RolloutBatch {
        trajectories,
        discarded,
    })
}

// ---------------------------------------------------------------------------
// Reward-to-go and context windows
// ---------------------------------------------------------------------------

/// Suffix sums: `out[t] = Σ_{τ≥t} rew[τ]`.
pub fn reward_to_go(rew: &[f64]) -> Result<Vec<f64>> {
    if rew.is_empty() {
        return Err(Error::invalid("reward_to_go needs a non-empty sequence"));
    }
    let mut out = vec![0.0; rew.len()];
    let mut acc = 0.0;
    for (slot, r) in out.iter_mut().rev().zip(rew.iter().rev()) {
        acc += r;
        *slot = acc;
    }
    Ok(out)
}

/// A fixed-length slice of a trajectory: `K` steps of (return-to-go,
/// observation, action), left-padded with zeros where the episode start
/// truncates the history. `timesteps` are the relative positions `0..K-1`
/// (absolute time is deliberately not encoded).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub rtg: Vec<f64>,
    pub obs: Vec<DVector<f64>>,
    pub act: Vec<DVector<f64>>,
    pub timesteps: Vec<usize>,
    pub mask: Vec<bool>,
}

impl ContextWindow {
    /// Context length `K`.
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Number of real (unpadded) steps.
    pub fn real_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// One window per end index `t ∈ [0, T]`, containing steps
/// `max(0, t−K+1)..=t` left-padded to length `K`.
pub fn make_windows(traj: &Trajectory, k: usize) -> Result<Vec<ContextWindow>> {
    if k == 0 {
        return Err(Error::invalid("context length K must be at least 1"));
    }
    let rtg = reward_to_go(&traj.rew)?;
    let n_o = traj.obs[0].len();
    let n_a = traj.act[0].len();
    let mut windows = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let first = (t + 1).saturating_sub(k);
        let real = t - first + 1;
        let pad = k - real;
        let mut w = ContextWindow {
            rtg: vec![0.0; k],
            obs: vec![DVector::zeros(n_o); k],
            act: vec![DVector::zeros(n_a); k],
            timesteps: (0..k).collect(),
            mask: vec![false; k],
        };
        for (slot, step) in (pad..k).zip(first..=t) {
            w.rtg[slot] = rtg[step];
            w.obs[slot] = traj.obs[step].clone();
            w.act[slot] = traj.act[step].clone();
            w.mask[slot] = true;
        }
        windows.push(w);
    }
    Ok(windows)
}

// ---------------------------------------------------------------------------
// Normalization anchors
// ---------------------------------------------------------------------------

/// Per-task return anchors: the converged demonstrator scores 1 and the
/// early-stopped one scores 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAnchors", into = "RawAnchors")]
pub struct Anchors {
    j_expert: f64,
    j_medium: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnchors {
    #[serde(rename = "J_expert")]
    j_expert: f64,
    #[serde(rename = "J_medium")]
    j_medium: f64,
}

impl Anchors {
    pub fn new(j_expert: f64, j_medium: f64) -> Result<Self> {
        if !j_expert.is_finite() || !j_medium.is_finite() {
            return Err(Error::NonFinite("normalization anchors".to_string()));
        }
        if j_expert <= j_medium {
            return Err(Error::invalid(format!(
                "anchors need J_expert > J_medium, got {j_expert} <= {j_medium}"
            )));
        }
        Ok(Self { j_expert, j_medium })
    }

    pub fn j_expert(&self) -> f64 {
        self.j_expert
    }

    pub fn j_medium(&self) -> f64 {
        self.j_medium
    }
}

impl TryFrom<RawAnchors> for Anchors {
    type Error = Error;
    fn try_from(raw: RawAnchors) -> Result<Self> {
        Anchors::new(raw.j_expert, raw.j_medium)
    }
}

impl From<Anchors> for RawAnchors {
    fn from(a: Anchors) -> Self {
        RawAnchors {
            j_expert: a.j_expert,
            j_medium: a.j_medium,
        }
    }
}

/// Affine score: `(J − J_medium) / (J_expert − J_medium)`; may exceed 1 or
/// fall below 0.
pub fn normalize_score(j: f64, anchors: &Anchors) -> f64 {
    (j - anchors.j_medium) / (anchors.j_expert - anchors.j_medium)
}
