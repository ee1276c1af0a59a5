//! Model-based baselines and demonstrator generators: LQR/LQG, Kalman
//! filtering, the central H∞ output-feedback controller, and a
//! derivative-free static output-feedback search.

mod hinf;
mod kalman;
mod lqg;
mod riccati;
mod search;

pub use hinf::{
    hinf_gamma_bisection, solve_hinf_central, HinfController, HinfOutcome, HinfPolicy,
};
pub use kalman::{kalman_predict, kalman_step, kalman_update, KalmanState};
pub use lqg::{lqg_policy, LqgPolicy};
pub use riccati::{riccati_map, solve_lqr, Horizon, RiccatiSolution, RICCATI_MAX_ITER, RICCATI_TOL};
pub use search::{fit_static_gain, trace_to_csv, SearchConfig, SearchOutcome, TraceRow};

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{mat_from_rows, rows_from_mat, Policy};
use crate::error::{Error, Result};
use crate::rng::{self, StreamKey};

/// Static output-feedback gain: `a = F·o + bias`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawStaticGain", into = "RawStaticGain")]
pub struct StaticGain {
    pub f: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl StaticGain {
    pub fn zeros(n_a: usize, n_o: usize) -> Self {
        StaticGain {
            f: DMatrix::zeros(n_a, n_o),
            bias: DVector::zeros(n_a),
        }
    }

    pub fn act(&self, obs: &DVector<f64>) -> DVector<f64> {
        &self.f * obs + &self.bias
    }
}

#[derive(Serialize, Deserialize)]
struct RawStaticGain {
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl TryFrom<RawStaticGain> for StaticGain {
    type Error = Error;
    fn try_from(r: RawStaticGain) -> Result<Self> {
        let f = mat_from_rows(&r.f, "F")?;
        if r.bias.len() != f.nrows() {
            return Err(Error::parse("StaticGain", "bias length != F rows"));
        }
        if r.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("StaticGain bias".into()));
        }
        Ok(StaticGain {
            f,
            bias: DVector::from_vec(r.bias),
        })
    }
}

impl From<StaticGain> for RawStaticGain {
    fn from(g: StaticGain) -> Self {
        RawStaticGain {
            f: rows_from_mat(&g.f),
            bias: g.bias.iter().cloned().collect(),
        }
    }
}

/// Behavior policy wrapping a [`StaticGain`] with optional Gaussian
/// exploration noise (`a = F·o + bias + ε`, `ε ~ N(0, noise_std²·I)`).
///
/// The noise stream is derived from the episode seed, so rollouts remain
/// bit-reproducible. Deterministic evaluation uses `noise_std = 0`.
pub struct StaticPolicy {
    pub gain: StaticGain,
    pub noise_std: f64,
    rng: ChaCha8Rng,
}

impl StaticPolicy {
    pub fn new(gain: StaticGain, noise_std: f64) -> Self {
        StaticPolicy {
            gain,
            noise_std,
            rng: StreamKey::new(0).with("policy").rng(),
        }
    }

    pub fn deterministic(gain: StaticGain) -> Self {
        Self::new(gain, 0.0)
    }
}

impl Policy for StaticPolicy {
    fn reset_episode(&mut self, episode_seed: u64) {
        self.rng = StreamKey::new(episode_seed).with("policy").rng();
    }

    fn act(&mut self, obs: &DVector<f64>) -> DVector<f64> {
        let mut a = self.gain.act(obs);
        if self.noise_std > 0.0 {
            for v in a.iter_mut() {
                *v += rng::gaussian(&mut self.rng, self.noise_std);
            }
        }
        a
    }
}

#[cfg(test)]
mod tests;
