//! 1-D periodic PDE stepping: Burgers and convection–diffusion–reaction.
//!
//! Spatial discretization on the uniform periodic grid `x_i = i·Δx`,
//! `Δx = L/n_s`:
//!
//! - diffusion `ν·u_xx`: central second difference, solved implicitly
//!   (backward Euler) through a periodic tridiagonal system, so small ν never
//!   constrains the step size and the discrete mean is conserved exactly
//!   (the difference operator has zero column sums);
//! - Burgers convection `−u·u_x`: conservative flux form `−(½u²)_x` with
//!   central differencing of the flux — the periodic telescoping sum makes
//!   the discrete mean invariant to machine precision;
//! - CDR convection `−c·u_x`: central difference (also telescoping);
//! - reaction `ζ·u` and actuation `Φ·a`: explicit.
//!
//! Each env step integrates over `sample_time` with adaptive substeps
//! `dt ≤ 0.2·Δx / max(|u|_∞, |c|, 1)` (explicit CFL guard), applying the
//! explicit terms first and the implicit diffusion second within every
//! substep. Process noise is added once per env step, after integration, so
//! its variance does not depend on the substep count.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::{check_finite_state, EnvState, PdeKind, PdeSpec, RewardSpec, StepResult};

/// CFL safety factor for the explicit substep.
const CFL_FACTOR: f64 = 0.2;

/// Seeded smooth initial field `Σ_{m=1..4} αₘ sin(2πmx/L) + βₘ cos(2πmx/L)`
/// with `αₘ, βₘ ~ N(0, 0.1²)` drawn in the order α₁, β₁, α₂, β₂, …
pub fn initial_field(spec: &PdeSpec, stream: &mut ChaCha8Rng) -> DVector<f64> {
    let n = spec.n_s();
    let l = spec.domain_len();
    let mut coeffs = [0.0f64; 8];
    rng::fill_gaussian(stream, 0.1, &mut coeffs);
    let mut u = DVector::zeros(n);
    for i in 0..n {
        let x = i as f64 * l / n as f64;
        let mut v = 0.0;
        for m in 1..=4 {
            let phase = 2.0 * std::f64::consts::PI * m as f64 * x / l;
            v += coeffs[2 * (m - 1)] * phase.sin() + coeffs[2 * (m - 1) + 1] * phase.cos();
        }
        u[i] = v;
    }
    u
}

/// Actuation matrix Φ (`n_s × n_a`): actuator `j` contributes 1 on the
/// `round(φ·n_s/L)` grid cells centered (after rounding) at
/// `x_j = (j + ½)·L/n_a`, wrapped periodically, and 0 elsewhere.
pub fn make_actuation_matrix(n_s: usize, n_a: usize, phi: f64, l: f64) -> Result<DMatrix<f64>> {
    if n_a < 1 {
        return Err(Error::invalid("n_a must be >= 1"));
    }
    if !(phi > 0.0 && phi <= l) {
        return Err(Error::invalid("phi must lie in (0, L]"));
    }
    if n_s < 1 {
        return Err(Error::invalid("n_s must be >= 1"));
    }
    let cells_f = phi * n_s as f64 / l;
    let cells = (cells_f.round() as usize).clamp(1, n_s);
    let mut m = DMatrix::zeros(n_s, n_a);
    for j in 0..n_a {
        let center = (j as f64 + 0.5) * n_s as f64 / n_a as f64;
        let start = (center - cells as f64 / 2.0).round() as i64;
        for k in 0..cells {
            let idx = (start + k as i64).rem_euclid(n_s as i64) as usize;
            m[(idx, j)] = 1.0;
        }
    }
    Ok(m)
}

/// Equally spaced sensor indices `⌊i·n_s/n_o⌋` for `i = 0..n_o`.
pub fn sensor_indices(n_s: usize, n_o: usize) -> Vec<usize> {
    (0..n_o).map(|i| i * n_s / n_o).collect()
}

/// Read the field at the sensor indices plus `N(0, sensor_noise_cov)` noise.
pub fn observe_field(u: &DVector<f64>, spec: &PdeSpec, stream: &mut ChaCha8Rng) -> DVector<f64> {
    let std = spec.sensor_noise_cov().sqrt();
    let idx = sensor_indices(spec.n_s(), spec.n_o());
    DVector::from_iterator(
        idx.len(),
        idx.iter().map(|&i| u[i] + rng::gaussian(stream, std)),
    )
}

/// Solve the periodic tridiagonal system `(I − β·S) x = d` where `S` is the
/// periodic second-difference stencil `(1, −2, 1)` (so the matrix has
/// diagonal `1+2β`, off-diagonals `−β`, and corners `−β`).
///
/// Sherman–Morrison splitting: `M = T + q·vᵀ` with
/// `q = (γ, 0, …, 0, −β)ᵀ`, `v = (1, 0, …, 0, −β/γ)ᵀ`, `γ = −(1+2β)`,
/// which leaves `T` strictly diagonally dominant, so the Thomas algorithm is
/// stable without pivoting. Then `M⁻¹d = y − z·(vᵀy)/(1 + vᵀz)` with
/// `T y = d`, `T z = q`.
pub(crate) fn solve_periodic_diffusion(beta: f64, d: &[f64], out: &mut [f64], scratch: &mut Scratch) {
    let n = d.len();
    debug_assert!(n >= 4);
    if beta == 0.0 {
        out.copy_from_slice(d);
        return;
    }
    let diag = 1.0 + 2.0 * beta;
    let off = -beta;
    let gamma = -diag;

    // Modified diagonal of T.
    let t0 = diag - gamma; // = 2·diag
    let tn = diag - (off * off) / gamma; // = diag + β²/diag

    // Thomas factorization of T (same for both right-hand sides).
    // cp[i]: modified super-diagonal multipliers; dp: modified rhs.
    let Scratch { cp, y, z, q } = scratch;
    cp.resize(n, 0.0);
    y.resize(n, 0.0);
    z.resize(n, 0.0);
    q.resize(n, 0.0);

    q.fill(0.0);
    q[0] = gamma;
    q[n - 1] = off;

    // Forward sweep computing cp and the two transformed rhs in lockstep.
    let mut denom = t0;
    cp[0] = off / denom;
    y[0] = d[0] / denom;
    z[0] = q[0] / denom;
    for i in 1..n {
        let diag_i = if i == n - 1 { tn } else { diag };
        denom = diag_i - off * cp[i - 1];
        cp[i] = off / denom;
        y[i] = (d[i] - off * y[i - 1]) / denom;
        z[i] = (q[i] - off * z[i - 1]) / denom;
    }
    // Back substitution.
    for i in (0..n - 1).rev() {
        y[i] -= cp[i] * y[i + 1];
        z[i] -= cp[i] * z[i + 1];
    }

    // Sherman–Morrison correction with v = (1, 0, …, 0, off/gamma).
    let vy = y[0] + (off / gamma) * y[n - 1];
    let vz = z[0] + (off / gamma) * z[n - 1];
    let factor = vy / (1.0 + vz);
    for i in 0..n {
        out[i] = y[i] - factor * z[i];
    }
}

#[derive(Default)]
pub(crate) struct Scratch {
    cp: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    q: Vec<f64>,
}

/// One env step of the semi-discrete PDE over `sample_time`.
///
/// Reward is computed on the pre-transition `(field, a)` pair against the
/// spec's `target_field`. After integration the process noise
/// `N(0, process_noise_cov·I)` is added (one draw of `n_s` entries), then the
/// observation noise (`n_o` entries) — both always drawn, scaled by the
/// respective standard deviations.
pub fn pde_step(
    state: &mut EnvState,
    a: &DVector<f64>,
    spec: &PdeSpec,
    reward_spec: &RewardSpec,
) -> Result<StepResult> {
    if state.t >= spec.n_steps() {
        return Err(Error::invalid(format!(
            "step called after episode end (t = {} = n_steps)",
            state.t
        )));
    }
    if state.s.len() != spec.n_s() {
        return Err(Error::dim(format!(
            "field length {} != n_s {}",
            state.s.len(),
            spec.n_s()
        )));
    }
    if a.len() != spec.n_a() {
        return Err(Error::dim(format!(
            "action length {} != n_a {}",
            a.len(),
            spec.n_a()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action".into()));
    }

    // Reward on the pre-transition field, tracking the spec's target field.
    let err = &state.s - spec.target_field();
    let r = {
        let state_cost = (reward_spec.q1() * &err).dot(&err);
        let action_cost = (reward_spec.q2() * a).dot(a);
        let cross_cost = 2.0 * (reward_spec.q3() * a).dot(&err);
        -state_cost - action_cost - cross_cost
    };

    let phi = make_actuation_matrix(spec.n_s(), spec.n_a(), spec.phi(), spec.domain_len())?;
    let forcing = phi * a;

    let n = spec.n_s();
    let dx = spec.dx();
    let nu = spec.nu();
    let mut u: Vec<f64> = state.s.iter().cloned().collect();
    let mut u_star = vec![0.0f64; n];
    let mut scratch = Scratch::default();

    let mut remaining = spec.sample_time();
    while remaining > 1e-14 {
        let umax = u.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if !umax.is_finite() || umax > super::DIVERGENCE_BOUND {
            return Err(Error::Diverged {
                step: state.t,
                detail: format!("|u|_inf = {umax:.3e} during substepping"),
            });
        }
        let speed = match spec.kind() {
            PdeKind::Burgers => umax.max(1.0),
            PdeKind::Cdr => umax.max(spec.c().abs()).max(1.0),
        };
        let dt = (CFL_FACTOR * dx / speed).min(remaining);

        // Explicit part: convection, reaction, actuation.
        match spec.kind() {
            PdeKind::Burgers => {
                // −(½u²)_x with central differencing of the flux.
                for i in 0..n {
                    let ip = if i + 1 == n { 0 } else { i + 1 };
                    let im = if i == 0 { n - 1 } else { i - 1 };
                    let conv = (0.5 * u[ip] * u[ip] - 0.5 * u[im] * u[im]) / (2.0 * dx);
                    u_star[i] = u[i] + dt * (-conv + forcing[i]);
                }
            }
            PdeKind::Cdr => {
                let c = spec.c();
                let zeta = spec.zeta();
                for i in 0..n {
                    let ip = if i + 1 == n { 0 } else { i + 1 };
                    let im = if i == 0 { n - 1 } else { i - 1 };
                    let conv = c * (u[ip] - u[im]) / (2.0 * dx);
                    u_star[i] = u[i] + dt * (-conv + zeta * u[i] + forcing[i]);
                }
            }
        }

        // Implicit diffusion: (I − dt·ν/Δx²·S) u = u*.
        let beta = dt * nu / (dx * dx);
        solve_periodic_diffusion(beta, &u_star, &mut u, &mut scratch);

        remaining -= dt;
    }

    // Process noise once per env step.
    let pstd = spec.process_noise_cov().sqrt();
    let mut s_next = DVector::from_vec(u);
    for v in s_next.iter_mut() {
        *v += rng::gaussian(&mut state.rng, pstd);
    }
    check_finite_state(&s_next, state.t)?;

    let obs = observe_field(&s_next, spec, &mut state.rng);

    state.s = s_next;
    state.t += 1;

    Ok(StepResult {
        obs,
        reward: r,
        done: state.t == spec.n_steps(),
    })
}

/// Substep sizes the integrator will take for a given field — exposed so
/// tests can replay the adaptive schedule against closed-form recursions.
pub fn substep_schedule(spec: &PdeSpec, u: &DVector<f64>) -> Vec<f64> {
    let dx = spec.dx();
    let umax = u.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let speed = match spec.kind() {
        PdeKind::Burgers => umax.max(1.0),
        PdeKind::Cdr => umax.max(spec.c().abs()).max(1.0),
    };
    // For a constant-in-time CFL bound (e.g. constant fields under CDR with
    // zero forcing) this reproduces the integrator's schedule exactly.
    let mut steps = Vec::new();
    let mut remaining = spec.sample_time();
    while remaining > 1e-14 {
        let dt = (CFL_FACTOR * dx / speed).min(remaining);
        steps.push(dt);
        remaining -= dt;
    }
    steps
}
