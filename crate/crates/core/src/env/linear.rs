//! Linear state-space stepping.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::rng;

use super::{check_finite_state, reward, EnvState, LinearSystemSpec, RewardSpec, StepResult};

/// One step of `s' = A·s + B2·a + w`, `obs = C·s' + v`.
///
/// The reward is computed on the pre-transition `(s, a)` pair. Noise draw
/// order per step: `w` (`n_s` entries), then `v` (`n_o` entries); draws
/// always happen (scaled by `√noise_cov`, possibly zero) so the stream
/// position is independent of the noise setting.
pub fn linear_step(
    state: &mut EnvState,
    a: &DVector<f64>,
    sys: &LinearSystemSpec,
    reward_spec: &RewardSpec,
) -> Result<StepResult> {
    if state.t >= sys.n_steps() {
        return Err(Error::invalid(format!(
            "step called after episode end (t = {} = n_steps)",
            state.t
        )));
    }
    if state.s.len() != sys.n_s() {
        return Err(Error::dim(format!(
            "state length {} != n_s {}",
            state.s.len(),
            sys.n_s()
        )));
    }
    if a.len() != sys.n_a() {
        return Err(Error::dim(format!(
            "action length {} != n_a {}",
            a.len(),
            sys.n_a()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action".into()));
    }

    let r = reward(&state.s, a, reward_spec)?;

    let std = sys.noise_cov().sqrt();
    let mut s_next = sys.a() * &state.s + sys.b2() * a;
    for v in s_next.iter_mut() {
        *v += rng::gaussian(&mut state.rng, std);
    }
    check_finite_state(&s_next, state.t)?;

    let mut obs = sys.c() * &s_next;
    for v in obs.iter_mut() {
        *v += rng::gaussian(&mut state.rng, std);
    }

    state.s = s_next;
    state.t += 1;

    Ok(StepResult {
        obs,
        reward: r,
        done: state.t == sys.n_steps(),
    })
}
