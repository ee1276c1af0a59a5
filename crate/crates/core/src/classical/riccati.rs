//! Discrete-time Riccati recursion for LQR with cross weight.
//!
//! Backward step for the stage cost `sᵀQ1s + aᵀQ2a + 2sᵀQ3a`:
//!
//! ```text
//! G   = Q2 + BᵀPB
//! K   = G⁻¹ (BᵀPA + Q3ᵀ)            (action law a = −K·s)
//! P⁻  = Q1 + AᵀPA − (AᵀPB + Q3)·K
//! ```
//!
//! Finite horizon runs `T` backward steps from `P_T = 0` (zero terminal
//! cost); infinite horizon iterates the same map to its fixed point.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Fixed-point tolerance for the infinite-horizon iteration.
pub const RICCATI_TOL: f64 = 1e-10;
/// Iteration cap for the infinite-horizon iteration.
pub const RICCATI_MAX_ITER: usize = 100_000;

/// Horizon selector for [`solve_lqr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// `T` backward steps from zero terminal cost.
    Finite(usize),
    /// Stationary fixed point.
    Infinite,
}

/// Value matrix and gain(s) produced by [`solve_lqr`].
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Value matrix: fixed point (infinite) or `P_0` (finite).
    pub p: DMatrix<f64>,
    /// Stationary gain (infinite) or first-stage gain `K_0` (finite);
    /// the optimal action is `a = −K·s`.
    pub k: DMatrix<f64>,
    /// Per-stage gains `K_0 … K_{T−1}` for finite horizons, `None` otherwise.
    pub stage_gains: Option<Vec<DMatrix<f64>>>,
    /// Iterations performed (backward steps or fixed-point sweeps).
    pub iterations: usize,
    /// Final fixed-point residual `‖P − Riccati(P)‖_F` (infinite horizon).
    pub residual: f64,
}

fn riccati_backward_step(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    q3: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let btp = b.transpose() * p;
    let g = q2 + &btp * b;
    let g_chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Riccati gain denominator Q2 + BᵀPB".into()))?;
    let k = g_chol.solve(&(&btp * a + q3.transpose()));
    let p_new = q1 + a.transpose() * p * a - (a.transpose() * p * b + q3) * &k;
    // Symmetrize to keep rounding from accumulating skew.
    let p_sym = (&p_new + p_new.transpose()) * 0.5;
    Ok((p_sym, k))
}

/// Solve the LQR problem for `s' = A·s + B·a` with the quadratic stage cost.
///
/// Preconditions: `Q2 ≻ 0` (validated through the Cholesky factorization);
/// `(A, B)` stabilizable for the infinite horizon (otherwise the iteration
/// fails to converge and reports a solver failure).
pub fn solve_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    q3: &DMatrix<f64>,
    horizon: Horizon,
) -> Result<RiccatiSolution> {
    let n_s = a.nrows();
    let n_a = b.ncols();
    if a.ncols() != n_s || b.nrows() != n_s {
        return Err(Error::dim("solve_lqr: A must be square and B row-compatible"));
    }
    if q1.nrows() != n_s || q1.ncols() != n_s || q2.nrows() != n_a || q2.ncols() != n_a {
        return Err(Error::dim("solve_lqr: weight dimensions inconsistent"));
    }
    if q3.nrows() != n_s || q3.ncols() != n_a {
        return Err(Error::dim("solve_lqr: Q3 must be n_s×n_a"));
    }

    match horizon {
        Horizon::Finite(t) => {
            if t == 0 {
                return Err(Error::invalid("finite horizon must be >= 1"));
            }
            let mut p = DMatrix::zeros(n_s, n_s);
            let mut gains_rev: Vec<DMatrix<f64>> = Vec::with_capacity(t);
            for _ in 0..t {
                let (p_new, k) = riccati_backward_step(&p, a, b, q1, q2, q3)?;
                gains_rev.push(k);
                p = p_new;
            }
            gains_rev.reverse(); // now K_0 … K_{T−1}
            let k0 = gains_rev[0].clone();
            Ok(RiccatiSolution {
                p,
                k: k0,
                stage_gains: Some(gains_rev),
                iterations: t,
                residual: f64::NAN,
            })
        }
        Horizon::Infinite => {
            let mut p = DMatrix::zeros(n_s, n_s);
            let mut residual = f64::INFINITY;
            for iter in 1..=RICCATI_MAX_ITER {
                let (p_new, k_new) = riccati_backward_step(&p, a, b, q1, q2, q3)?;
                residual = (&p_new - &p).norm();
                let scale = p_new.norm().max(1.0);
                p = p_new;
                if residual <= RICCATI_TOL * scale {
                    return Ok(RiccatiSolution {
                        p,
                        k: k_new,
                        stage_gains: None,
                        iterations: iter,
                        residual,
                    });
                }
                if !residual.is_finite() {
                    break;
                }
            }
            Err(Error::NoConvergence {
                solver: "riccati",
                residual,
                iterations: RICCATI_MAX_ITER,
            })
        }
    }
}

/// One application of the Riccati map (used by residual checks in tests).
pub fn riccati_map(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    q3: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    riccati_backward_step(p, a, b, q1, q2, q3).map(|(p, _)| p)
}
