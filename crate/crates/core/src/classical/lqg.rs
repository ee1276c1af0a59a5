//! Certainty-equivalent LQG output feedback: Kalman estimate + LQR gain.

use nalgebra::{DMatrix, DVector};

use crate::env::{LinearSystemSpec, Policy, RewardSpec};
use crate::error::Result;

use super::kalman::{kalman_predict, kalman_update, KalmanState};
use super::riccati::{solve_lqr, Horizon};

/// Compute the LQG action after processing an observation/action history.
///
/// `obs` holds `o_0 … o_t` and `acts` holds `a_0 … a_{t−1}` (one shorter).
/// The filter starts from the reset prior (`x̂ = 0`, `Σ = init_std²·I`),
/// consumes the history in order — `o_0` is an update-only step since the
/// initial observation precedes any transition — and the returned action is
/// the certainty-equivalent `a = −K·(x̂_t − s_r)` with the stationary
/// infinite-horizon gain.
pub fn lqg_policy(
    obs: &[DVector<f64>],
    acts: &[DVector<f64>],
    sys: &LinearSystemSpec,
    reward_spec: &RewardSpec,
) -> Result<DVector<f64>> {
    if obs.len() != acts.len() + 1 {
        return Err(crate::Error::invalid(format!(
            "lqg_policy: need one more observation than action, got {} obs / {} acts",
            obs.len(),
            acts.len()
        )));
    }
    let mut policy = LqgPolicy::new_infinite(sys, reward_spec)?;
    policy.reset_episode(0);
    let mut action = DVector::zeros(sys.n_a());
    for (i, o) in obs.iter().enumerate() {
        action = policy.act(o);
        if i < acts.len() {
            // Replay the action that was actually taken, not the one the
            // policy would have chosen.
            policy.last_action = Some(acts[i].clone());
        }
    }
    Ok(action)
}

/// Incremental LQG policy for closed-loop rollouts.
pub struct LqgPolicy {
    sys: LinearSystemSpec,
    /// Stationary gain, or stage gains indexed by step for finite horizons.
    gains: GainSchedule,
    s_r: DVector<f64>,
    kstate: KalmanState,
    last_action: Option<DVector<f64>>,
    t: usize,
    /// When set, the filter runs with this constant predicted covariance
    /// (stationary-gain mode).
    frozen_sigma: Option<DMatrix<f64>>,
}

enum GainSchedule {
    Stationary(DMatrix<f64>),
    Staged(Vec<DMatrix<f64>>),
}

impl LqgPolicy {
    /// Infinite-horizon (stationary-gain) LQG.
    pub fn new_infinite(sys: &LinearSystemSpec, reward_spec: &RewardSpec) -> Result<Self> {
        let sol = solve_lqr(
            sys.a(),
            sys.b2(),
            reward_spec.q1(),
            reward_spec.q2(),
            reward_spec.q3(),
            Horizon::Infinite,
        )?;
        Ok(Self::with_schedule(
            sys,
            reward_spec,
            GainSchedule::Stationary(sol.k),
        ))
    }

    /// Fully stationary LQG: stationary LQR gain and a Kalman filter frozen
    /// at its steady-state predicted covariance. This is the exact `γ → ∞`
    /// limit of the central H∞ controller (the time-varying filter of
    /// [`Self::new_infinite`] differs from it only in the transient).
    pub fn new_stationary(sys: &LinearSystemSpec, reward_spec: &RewardSpec) -> Result<Self> {
        let mut policy = Self::new_infinite(sys, reward_spec)?;
        // Iterate the predicted-covariance Riccati map to its fixed point.
        let mut sigma = DMatrix::identity(sys.n_s(), sys.n_s()) * sys.noise_cov().max(1e-6);
        for _ in 0..100_000 {
            let pred = KalmanState {
                x_hat: DVector::zeros(sys.n_s()),
                sigma: sigma.clone(),
            };
            let updated = kalman_update(&pred, &DVector::zeros(sys.n_o()), sys)?;
            let next = kalman_predict(&updated, &DVector::zeros(sys.n_a()), sys).sigma;
            let residual = (&next - &sigma).norm();
            let scale = next.norm().max(1.0);
            sigma = next;
            if residual <= 1e-12 * scale {
                policy.frozen_sigma = Some(sigma);
                policy.reset_episode(0);
                return Ok(policy);
            }
        }
        Err(crate::Error::NoConvergence {
            solver: "kalman steady state",
            residual: f64::NAN,
            iterations: 100_000,
        })
    }

    /// Finite-horizon LQG with stage-indexed gains over the episode length.
    pub fn new_finite(sys: &LinearSystemSpec, reward_spec: &RewardSpec) -> Result<Self> {
        let sol = solve_lqr(
            sys.a(),
            sys.b2(),
            reward_spec.q1(),
            reward_spec.q2(),
            reward_spec.q3(),
            Horizon::Finite(sys.n_steps()),
        )?;
        let gains = sol.stage_gains.expect("finite horizon returns stage gains");
        Ok(Self::with_schedule(sys, reward_spec, GainSchedule::Staged(gains)))
    }

    fn with_schedule(
        sys: &LinearSystemSpec,
        reward_spec: &RewardSpec,
        gains: GainSchedule,
    ) -> Self {
        LqgPolicy {
            sys: sys.clone(),
            gains,
            s_r: reward_spec.s_r().clone(),
            kstate: KalmanState::prior(sys),
            last_action: None,
            t: 0,
            frozen_sigma: None,
        }
    }

    /// Current state estimate (for diagnostics/tests).
    pub fn estimate(&self) -> &KalmanState {
        &self.kstate
    }
}

impl Policy for LqgPolicy {
    fn reset_episode(&mut self, _episode_seed: u64) {
        self.kstate = KalmanState::prior(&self.sys);
        if let Some(sigma) = &self.frozen_sigma {
            self.kstate.sigma = sigma.clone();
        }
        self.last_action = None;
        self.t = 0;
    }

    fn act(&mut self, obs: &DVector<f64>) -> DVector<f64> {
        // o_0 is an update-only step (it observes the reset state);
        // subsequent observations follow a transition driven by last_action.
        if let Some(a_prev) = self.last_action.take() {
            self.kstate = kalman_predict(&self.kstate, &a_prev, &self.sys);
            if let Some(sigma) = &self.frozen_sigma {
                self.kstate.sigma = sigma.clone();
            }
        }
        self.kstate = kalman_update(&self.kstate, obs, &self.sys)
            .expect("innovation covariance singular during LQG rollout");
        let k = match &self.gains {
            GainSchedule::Stationary(k) => k,
            GainSchedule::Staged(ks) => {
                let idx = self.t.min(ks.len().saturating_sub(1));
                &ks[idx]
            }
        };
        let action = -(k * (&self.kstate.x_hat - &self.s_r));
        self.last_action = Some(action.clone());
        self.t += 1;
        action
    }
}
