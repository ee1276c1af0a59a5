//! Built-in tasks and task generation: seeded stand-in linear systems with
//! the published dimensions, nominal PDE tasks, exact-norm matrix
//! perturbations, and PDE parameter sampling for multi-task datasets.

use nalgebra::{DMatrix, DVector};

use crate::env::{EnvSpec, LinearSystemSpec, PdeKind, PdeParams, PdeSpec, RewardSpec};
use crate::error::{Error, Result};
use crate::rng::{self, StreamKey};

use super::{Provenance, TaskSpec};

/// Root seed for the committed stand-in linear systems. Changing it changes
/// every builtin task, so it is fixed once and for all.
const BUILTIN_SEED: u64 = 90;

/// Spectral radius the stand-in `A` matrices are scaled to; marginally
/// stable open loops keep every static gain near zero viable while leaving
/// clear room for control to help.
const BUILTIN_SPECTRAL_RADIUS: f64 = 0.95;

/// Names accepted by [`builtin_task`].
pub fn builtin_task_names() -> [&'static str; 5] {
    ["he1", "ac4", "cm3", "burgers", "cdr"]
}

/// Construct a built-in task by name (`he1`, `ac4`, `cm3`, `burgers`,
/// `cdr`). Deterministic: repeated calls return identical specs.
pub fn builtin_task(name: &str) -> Result<TaskSpec> {
    match name {
        "he1" => builtin_linear(name, 4, 2, 1),
        "ac4" => builtin_linear(name, 9, 1, 2),
        "cm3" => builtin_linear(name, 120, 1, 2),
        "burgers" => builtin_pde(PdeKind::Burgers),
        "cdr" => builtin_pde(PdeKind::Cdr),
        other => Err(Error::invalid(format!(
            "unknown builtin task `{other}` (expected one of {:?})",
            builtin_task_names()
        ))),
    }
}

/// Seeded stand-in for a named linear benchmark: Gaussian `A` scaled to
/// spectral radius 0.95, Gaussian `B2`/`C`, noise_cov 0.01, 50 steps,
/// unit-variance initial state, identity quadratic weights.
fn builtin_linear(name: &str, n_s: usize, n_a: usize, n_o: usize) -> Result<TaskSpec> {
    let mut stream = StreamKey::new(BUILTIN_SEED).with(name).rng();
    // Row-major draws: A, then B2, then C.
    let mut a = DMatrix::zeros(n_s, n_s);
    for i in 0..n_s {
        for j in 0..n_s {
            a[(i, j)] = rng::gaussian(&mut stream, 1.0);
        }
    }
    let radius = a
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max);
    a *= BUILTIN_SPECTRAL_RADIUS / radius;
    let mut b2 = DMatrix::zeros(n_s, n_a);
    for i in 0..n_s {
        for j in 0..n_a {
            b2[(i, j)] = rng::gaussian(&mut stream, 1.0);
        }
    }
    let mut c = DMatrix::zeros(n_o, n_s);
    for i in 0..n_o {
        for j in 0..n_s {
            c[(i, j)] = rng::gaussian(&mut stream, 1.0);
        }
    }
    let sys = LinearSystemSpec::new(a, b2, c, 0.01, 50, 1.0)?;
    TaskSpec::new(
        name.to_string(),
        EnvSpec::Linear(sys),
        RewardSpec::identity_weights(n_s, n_a),
        Provenance::Nominal,
    )
}

fn builtin_pde(kind: PdeKind) -> Result<TaskSpec> {
    let n_s = 64;
    let length = 1.0;
    let grid_x = |i: usize| i as f64 * length / n_s as f64;
    let (name, params) = match kind {
        PdeKind::Burgers => (
            "burgers",
            PdeParams {
                kind,
                nu: 1e-2,
                c: 0.0,
                zeta: 0.0,
                phi: 0.125,
                domain_len: length,
                n_s,
                n_a: 5,
                n_o: 10,
                sample_time: 0.05,
                process_noise_cov: 0.0,
                sensor_noise_cov: 0.25,
                n_steps: 100,
                target_field: DVector::from_fn(n_s, |i, _| {
                    -0.1 * (2.0 * std::f64::consts::PI * grid_x(i) / length).cos()
                }),
            },
        ),
        PdeKind::Cdr => (
            "cdr",
            PdeParams {
                kind,
                nu: 1e-2,
                c: 0.1,
                zeta: 0.0,
                phi: 0.1,
                domain_len: length,
                n_s,
                n_a: 5,
                n_o: 10,
                sample_time: 0.1,
                process_noise_cov: 0.0,
                sensor_noise_cov: 0.25,
                n_steps: 100,
                target_field: DVector::from_fn(n_s, |i, _| {
                    let arg = 20.0 * grid_x(i) - 10.0 * length;
                    0.5 - 0.5 / arg.cosh()
                }),
            },
        ),
    };
    let spec = PdeSpec::new(params)?;
    TaskSpec::new(
        name.to_string(),
        EnvSpec::Pde(spec),
        RewardSpec::identity_weights(n_s, 5),
        Provenance::Nominal,
    )
}

/// Published in-distribution perturbation sizes `(‖ΔA‖_F, ‖ΔB₂‖_F)` for the
/// linear benchmarks.
pub fn in_dist_perturbation(name: &str) -> Result<(f64, f64)> {
    match name {
        "he1" => Ok((0.05, 0.05)),
        "ac4" | "cm3" => Ok((0.1, 0.1)),
        other => Err(Error::invalid(format!(
            "no in-distribution perturbation sizes for task `{other}`"
        ))),
    }
}

/// Published out-of-distribution perturbation sizes for the linear
/// benchmarks.
pub fn out_dist_perturbation(name: &str) -> Result<(f64, f64)> {
    match name {
        "he1" | "cm3" => Ok((0.15, 0.15)),
        "ac4" => Ok((0.2, 0.2)),
        other => Err(Error::invalid(format!(
            "no out-of-distribution perturbation sizes for task `{other}`"
        ))),
    }
}

/// Perturb a linear task: `ΔA`, `ΔB₂` sampled entrywise i.i.d. standard
/// Gaussian (row-major, `ΔA` first), then rescaled so their Frobenius norms
/// equal `sizes.0` / `sizes.1` exactly.
pub fn perturb_linear_task(nominal: &TaskSpec, sizes: (f64, f64), seed: u64) -> Result<TaskSpec> {
    let sys = match &nominal.env {
        EnvSpec::Linear(sys) => sys,
        EnvSpec::Pde(_) => {
            return Err(Error::invalid(
                "perturb_linear_task needs a linear task; PDE tasks use sample_pde_task",
            ))
        }
    };
    let (delta_a, delta_b) = sizes;
    if !(delta_a >= 0.0 && delta_b >= 0.0) {
        return Err(Error::invalid("perturbation sizes must be >= 0"));
    }
    let mut stream = StreamKey::new(seed).with("perturb").rng();
    let mut sample_scaled = |rows: usize, cols: usize, size: f64| {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = rng::gaussian(&mut stream, 1.0);
            }
        }
        if size == 0.0 {
            return DMatrix::zeros(rows, cols);
        }
        let norm = m.norm();
        m * (size / norm)
    };
    let da = sample_scaled(sys.n_s(), sys.n_s(), delta_a);
    let db = sample_scaled(sys.n_s(), sys.n_a(), delta_b);
    let perturbed = LinearSystemSpec::new(
        sys.a() + da,
        sys.b2() + db,
        sys.c().clone(),
        sys.noise_cov(),
        sys.n_steps(),
        sys.init_std(),
    )?;
    TaskSpec::new(
        format!("{}/pert-{seed}", nominal.task_id),
        EnvSpec::Linear(perturbed),
        nominal.reward.clone(),
        Provenance::Perturbed {
            delta_a_norm: delta_a,
            delta_b2_norm: delta_b,
            seed,
        },
    )
}

/// Where a sampled PDE task sits relative to the training distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Training draw.
    Train,
    /// Held-out draw from the same distribution.
    InDist,
    /// One of the 9 deterministic out-of-distribution parameter tuples.
    OutDist(usize),
}

impl SampleMode {
    fn label(&self) -> &'static str {
        match self {
            SampleMode::Train => "train",
            SampleMode::InDist => "in_dist",
            SampleMode::OutDist(_) => "out_dist",
        }
    }
}

/// The 9 out-of-distribution Burgers `(ν, φ)` pairs: row-major over
/// ν ∈ {1e−3, 5.5e−4, 1e−4} × φ ∈ {0.09, 0.08, 0.07}.
pub const BURGERS_OUT_DIST: [(f64, f64); 9] = [
    (1e-3, 0.09),
    (1e-3, 0.08),
    (1e-3, 0.07),
    (5.5e-4, 0.09),
    (5.5e-4, 0.08),
    (5.5e-4, 0.07),
    (1e-4, 0.09),
    (1e-4, 0.08),
    (1e-4, 0.07),
];

/// The 9 out-of-distribution CDR `(ν, c, ζ, φ)` tuples, verbatim.
pub const CDR_OUT_DIST: [(f64, f64, f64, f64); 9] = [
    (5e-4, 0.25, 0.15, 0.1),
    (5e-4, 0.25, 0.2, 0.1),
    (5e-4, 0.3, 0.15, 0.1),
    (5e-4, 0.3, 0.2, 0.1),
    (1e-4, 0.25, 0.15, 0.1),
    (1e-4, 0.25, 0.2, 0.1),
    (1e-4, 0.3, 0.15, 0.1),
    (1e-4, 0.3, 0.2, 0.1),
    (1e-4, 0.3, 0.2, 0.08),
];

fn uniform(rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    lo + (hi - lo) * rng.random::<f64>()
}

/// Sample (or enumerate) a PDE task around the built-in nominal of `kind`.
///
/// Train/in-dist draws: ν log-uniform on [1e−3, 1e−1]; Burgers φ uniform on
/// [0.09, 0.16]; CDR c uniform on [0, 0.2], ζ uniform on [−0.1, 0.1], φ
/// uniform on [0.08, 0.12]. Draw order is ν, (c, ζ for CDR), φ on the
/// substream `seed / "sample-pde" / mode-label`. Out-dist ignores the seed
/// and returns the indexed tuple.
pub fn sample_pde_task(kind: PdeKind, mode: SampleMode, seed: u64) -> Result<TaskSpec> {
    let nominal = match kind {
        PdeKind::Burgers => builtin_task("burgers")?,
        PdeKind::Cdr => builtin_task("cdr")?,
    };
    let spec = match &nominal.env {
        EnvSpec::Pde(spec) => spec.clone(),
        EnvSpec::Linear(_) => unreachable!("builtin PDE task is a PDE"),
    };
    let defaults = spec.params();

    let (nu, c, zeta, phi) = match (kind, mode) {
        (_, SampleMode::OutDist(index)) => {
            if index >= 9 {
                return Err(Error::invalid(format!(
                    "out-of-distribution index must be in [0, 9), got {index}"
                )));
            }
            match kind {
                PdeKind::Burgers => {
                    let (nu, phi) = BURGERS_OUT_DIST[index];
                    (nu, defaults.c, defaults.zeta, phi)
                }
                PdeKind::Cdr => {
                    let (nu, c, zeta, phi) = CDR_OUT_DIST[index];
                    (nu, c, zeta, phi)
                }
            }
        }
        (PdeKind::Burgers, _) => {
            let mut stream = StreamKey::new(seed)
                .with("sample-pde")
                .with(mode.label())
                .rng();
            let nu = 10f64.powf(uniform(&mut stream, -3.0, -1.0));
            let phi = uniform(&mut stream, 0.09, 0.16);
            (nu, defaults.c, defaults.zeta, phi)
        }
        (PdeKind::Cdr, _) => {
            let mut stream = StreamKey::new(seed)
                .with("sample-pde")
                .with(mode.label())
                .rng();
            let nu = 10f64.powf(uniform(&mut stream, -3.0, -1.0));
            let c = uniform(&mut stream, 0.0, 0.2);
            let zeta = uniform(&mut stream, -0.1, 0.1);
            let phi = uniform(&mut stream, 0.08, 0.12);
            (nu, c, zeta, phi)
        }
    };

    let sampled = spec.with_params(nu, c, zeta, phi)?;
    let suffix = match mode {
        SampleMode::OutDist(index) => format!("out_dist-{index}"),
        _ => format!("{}-{seed}", mode.label()),
    };
    TaskSpec::new(
        format!("{}/{suffix}", nominal.task_id),
        EnvSpec::Pde(sampled),
        nominal.reward,
        Provenance::Sampled {
            nu,
            c,
            zeta,
            phi,
            mode: mode.label().to_string(),
            seed,
        },
    )
}
