//! Partially observable discrete-time environments.
//!
//! Two families share one interface: generic linear state-space systems
//! (`s' = A·s + B2·a + w`, `o = C·s' + v`) and 1-D periodic PDEs (Burgers,
//! convection–diffusion–reaction) discretized on a uniform grid. Both expose
//! the quadratic tracking reward
//!
//! ```text
//! r(s, a) = −(s−s_r)ᵀ Q1 (s−s_r) − aᵀ Q2 a − 2 (s−s_r)ᵀ Q3 a
//! ```
//!
//! evaluated on the *pre-transition* state, and both are bit-reproducible
//! given an episode seed: every random draw comes from the [`EnvState`]'s own
//! ChaCha8 stream in a fixed documented order (see [`Environment::reset`] and
//! the step functions).

mod linear;
mod pde;
mod spec;

pub use linear::linear_step;
pub use pde::{
    initial_field, make_actuation_matrix, observe_field, pde_step, sensor_indices,
    substep_schedule,
};
pub use spec::{
    mat_from_rows, rows_from_mat, EnvSpec, LinearSystemSpec, PdeKind, PdeParams, PdeSpec,
    RewardSpec,
};

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Divergence threshold: any state with `|s|_∞` above this is a fault.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Mutable simulation state: current state/field, step index, random stream.
#[derive(Debug, Clone)]
pub struct EnvState {
    /// Current state (linear) or discretized field (PDE), length `n_s`.
    pub s: DVector<f64>,
    /// Step index, `0 ≤ t ≤ n_steps`.
    pub t: usize,
    /// Per-episode deterministic random stream.
    pub rng: ChaCha8Rng,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// Noisy observation of the post-transition state, length `n_o`.
    pub obs: DVector<f64>,
    /// Reward of the (pre-transition state, action) pair.
    pub reward: f64,
    /// True iff the step index reached `n_steps`.
    pub done: bool,
}

/// An output-feedback policy evaluated in closed loop.
///
/// `act` receives the current observation; policies that condition on rewards
/// (return-prompted models) additionally receive each realized reward via
/// `observe_reward` after the corresponding step.
pub trait Policy {
    /// Reset internal state (estimators, histories, exploration stream) for a
    /// new episode. `episode_seed` feeds any stochastic policy components.
    fn reset_episode(&mut self, episode_seed: u64);
    /// Produce the action for the current observation.
    fn act(&mut self, obs: &DVector<f64>) -> DVector<f64>;
    /// Feed back the realized reward of the last action (default: ignored).
    fn observe_reward(&mut self, _reward: f64) {}
}

/// Quadratic tracking reward `−(s−s_r)ᵀQ1(s−s_r) − aᵀQ2a − 2(s−s_r)ᵀQ3a`.
pub fn reward(s: &DVector<f64>, a: &DVector<f64>, spec: &RewardSpec) -> Result<f64> {
    if s.len() != spec.n_s() {
        return Err(Error::dim(format!(
            "reward: state length {} != n_s {}",
            s.len(),
            spec.n_s()
        )));
    }
    if a.len() != spec.n_a() {
        return Err(Error::dim(format!(
            "reward: action length {} != n_a {}",
            a.len(),
            spec.n_a()
        )));
    }
    let e = s - spec.s_r();
    let state_cost = (spec.q1() * &e).dot(&e);
    let action_cost = (spec.q2() * a).dot(a);
    let cross_cost = 2.0 * (spec.q3() * a).dot(&e);
    Ok(-state_cost - action_cost - cross_cost)
}

/// A concrete environment: spec + reward + mutable state.
///
/// Distinct instances may run concurrently; a single instance is exclusively
/// mutated by one thread.
pub struct Environment<'a> {
    spec: &'a EnvSpec,
    reward_spec: &'a RewardSpec,
    state: EnvState,
}

impl<'a> Environment<'a> {
    /// Reset to a seeded initial state and return the initial observation.
    ///
    /// Draw order from the episode stream: (1) the initial state — linear:
    /// `n_s` i.i.d. N(0, init_std²) entries; PDE: the 8 low-frequency Fourier
    /// coefficients α₁,β₁,…,α₄,β₄ ~ N(0, 0.1²) of
    /// `Σ_m αₘ sin(2πmx/L) + βₘ cos(2πmx/L)` — then (2) the initial
    /// observation noise (`n_o` draws). All scales may be zero; draws always
    /// happen so streams do not depend on noise settings.
    pub fn reset(
        spec: &'a EnvSpec,
        reward_spec: &'a RewardSpec,
        seed: u64,
    ) -> Result<(Self, DVector<f64>)> {
        check_compat(spec, reward_spec)?;
        let mut stream = rng::StreamKey::new(seed).with("episode").rng();
        let (s0, obs0) = match spec {
            EnvSpec::Linear(sys) => {
                let mut s0 = DVector::zeros(sys.n_s());
                for v in s0.iter_mut() {
                    *v = rng::gaussian(&mut stream, sys.init_std());
                }
                let mut obs = sys.c() * &s0;
                let vstd = sys.noise_cov().sqrt();
                for v in obs.iter_mut() {
                    *v += rng::gaussian(&mut stream, vstd);
                }
                (s0, obs)
            }
            EnvSpec::Pde(p) => {
                let s0 = pde::initial_field(p, &mut stream);
                let obs = observe_field(&s0, p, &mut stream);
                (s0, obs)
            }
        };
        let env = Environment {
            spec,
            reward_spec,
            state: EnvState {
                s: s0,
                t: 0,
                rng: stream,
            },
        };
        Ok((env, obs0))
    }

    /// Advance one step. Errors if called after `done` or on divergence.
    pub fn step(&mut self, a: &DVector<f64>) -> Result<StepResult> {
        match self.spec {
            EnvSpec::Linear(sys) => linear_step(&mut self.state, a, sys, self.reward_spec),
            EnvSpec::Pde(p) => pde_step(&mut self.state, a, p, self.reward_spec),
        }
    }

    /// Current simulation state (read-only).
    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Episode horizon (number of steps until `done`).
    pub fn n_steps(&self) -> usize {
        self.spec.n_steps()
    }
}

/// Raw closed-loop episode record: `obs[t]`, `actions[t]`, `rewards[t]` for
/// `t = 0 … T−1`. `obs[t]` is what the policy saw when choosing `actions[t]`
/// (the observation returned by the final step is dropped — nothing
/// conditions on it).
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub obs: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub rewards: Vec<f64>,
}

impl EpisodeRecord {
    /// Undiscounted episode return.
    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Roll one closed-loop episode. The environment stream and the policy's
/// own stream (exploration noise, sampling) both derive from `seed`, through
/// distinct substream labels.
pub fn rollout_episode(
    spec: &EnvSpec,
    reward_spec: &RewardSpec,
    policy: &mut dyn Policy,
    seed: u64,
) -> Result<EpisodeRecord> {
    let (mut env, o0) = Environment::reset(spec, reward_spec, seed)?;
    policy.reset_episode(seed);
    let t_max = spec.n_steps();
    let mut record = EpisodeRecord {
        obs: Vec::with_capacity(t_max),
        actions: Vec::with_capacity(t_max),
        rewards: Vec::with_capacity(t_max),
    };
    let mut obs = o0;
    loop {
        let action = policy.act(&obs);
        let res = env.step(&action)?;
        policy.observe_reward(res.reward);
        record.obs.push(obs);
        record.actions.push(action);
        record.rewards.push(res.reward);
        if res.done {
            break;
        }
        obs = res.obs;
    }
    Ok(record)
}

fn check_compat(spec: &EnvSpec, reward_spec: &RewardSpec) -> Result<()> {
    if spec.n_s() != reward_spec.n_s() || spec.n_a() != reward_spec.n_a() {
        return Err(Error::dim(format!(
            "environment ({}x{}) and reward spec ({}x{}) disagree",
            spec.n_s(),
            spec.n_a(),
            reward_spec.n_s(),
            reward_spec.n_a()
        )));
    }
    Ok(())
}

/// Reset by spec + seed without constructing an [`Environment`].
///
/// Exposed for callers that manage stepping themselves.
pub fn reset_state(spec: &EnvSpec, seed: u64) -> EnvState {
    let mut stream = rng::StreamKey::new(seed).with("episode").rng();
    let s0 = match spec {
        EnvSpec::Linear(sys) => {
            let mut s0 = DVector::zeros(sys.n_s());
            for v in s0.iter_mut() {
                *v = rng::gaussian(&mut stream, sys.init_std());
            }
            s0
        }
        EnvSpec::Pde(p) => pde::initial_field(p, &mut stream),
    };
    EnvState {
        s: s0,
        t: 0,
        rng: stream,
    }
}

pub(crate) fn check_finite_state(s: &DVector<f64>, t: usize) -> Result<()> {
    let mut max = 0.0f64;
    for &v in s.iter() {
        if !v.is_finite() {
            return Err(Error::Diverged {
                step: t,
                detail: "non-finite state entry".into(),
            });
        }
        max = max.max(v.abs());
    }
    if max > DIVERGENCE_BOUND {
        return Err(Error::Diverged {
            step: t,
            detail: format!("|s|_inf = {max:.3e} exceeds bound {DIVERGENCE_BOUND:.1e}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
