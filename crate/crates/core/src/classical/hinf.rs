//! Central (minimum-entropy) H∞ output-feedback controller, discrete time,
//! infinite horizon.
//!
//! # Problem
//!
//! Plant (after folding the cross weight, see below):
//!
//! ```text
//! x⁺ = A x + B u + D w̃        D = √noise_cov·I   (process channel)
//! y  = C x + E ṽ              E = √noise_cov·I,  N = EEᵀ  (sensor channel)
//! z  = [Q^{1/2} x; R^{1/2} u]
//! ```
//!
//! The controller guarantees the ℓ₂-gain bound `Σ|z|² ≤ γ²·Σ(|w̃|² + |ṽ|²)`
//! whenever the synthesis conditions below hold (soft-constrained dynamic
//! game, saddle-point solution).
//!
//! # Recursions
//!
//! **Control DGRE** (full-information game value `xᵀMx`):
//!
//! ```text
//! Γ = [ R + BᵀMB      BᵀMD        ]          L = [ BᵀMA ]
//!     [ DᵀMB          DᵀMD − γ²I  ]              [ DᵀMA ]
//! M⁺ = Q + AᵀMA − Lᵀ Γ⁻¹ L
//! ```
//!
//! with minimizer/maximizer gains `[u; w*] = −Γ⁻¹ L x`; the saddle condition
//! is that the disturbance block of Γ is negative definite after eliminating
//! u: `S_w = (DᵀMD − γ²I) − DᵀMB (R + BᵀMB)⁻¹ BᵀMD ≺ 0`.
//!
//! **Filter DGRE** (worst-case cost-to-come `−γ²·|x − x̂|²_{Σ⁻¹}`):
//!
//! ```text
//! H  = Σ⁻¹ + CᵀN⁻¹C − γ⁻²Q        (must stay ≻ 0)
//! Σ̄  = H⁻¹
//! Σ⁺ = A Σ̄ Aᵀ + DDᵀ
//! ```
//!
//! **Coupling condition**: `ρ(ΣM) < γ²`, which also makes the worst-case
//! certainty-equivalent estimate below well defined.
//!
//! # Online law (per step, measurement `y` first)
//!
//! ```text
//! x̌  = (Σ⁻¹ + CᵀN⁻¹C − γ⁻²M)⁻¹ (Σ⁻¹ x̂ + CᵀN⁻¹ y)    (CE state for control)
//! u  = F_u x̌
//! x̄  = Σ̄ (Σ⁻¹ x̂ + CᵀN⁻¹ y)                           (tilted filter update)
//! x̂⁺ = A x̄ + B u
//! ```
//!
//! `x̌` maximizes cost-to-come + current-measurement penalty + cost-to-go
//! (`M`, stage cost included once); `x̄` maximizes cost-to-come + measurement
//! + *stage* cost only (`Q` tilt), which is what the cost-to-come recursion
//! propagates. As `γ → ∞` both collapse to the Kalman measurement update and
//! the law reduces exactly to LQG — asserted by tests.
//!
//! # Cross weight
//!
//! A stage cost with cross term `2xᵀQ3u` is folded away by the substitution
//! `u = ũ − Q2⁻¹Q3ᵀx`: the game in `(x, ũ)` has dynamics
//! `A' = A − B·Q2⁻¹Q3ᵀ`, state weight `Q' = Q1 − Q3·Q2⁻¹·Q3ᵀ` (must remain
//! PSD) and no cross term. The synthesis runs on `(A', Q')`; the physical
//! action adds the fold-back `u = ũ − Q2⁻¹Q3ᵀ x̌`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{mat_from_rows, rows_from_mat, LinearSystemSpec, Policy, RewardSpec};
use crate::error::{Error, Result};

/// Fixed-point tolerance for both DGREs.
const DGRE_TOL: f64 = 1e-10;
/// Iteration cap for both DGREs.
const DGRE_MAX_ITER: usize = 100_000;

/// Synthesis verdict: a controller, or a typed infeasibility report.
#[derive(Debug)]
pub enum HinfOutcome {
    Feasible(Box<HinfController>),
    Infeasible { gamma: f64, reason: String },
}

impl HinfOutcome {
    pub fn feasible(self) -> Option<Box<HinfController>> {
        match self {
            HinfOutcome::Feasible(c) => Some(c),
            HinfOutcome::Infeasible { .. } => None,
        }
    }
    pub fn is_feasible(&self) -> bool {
        matches!(self, HinfOutcome::Feasible(_))
    }
}

/// Synthesized central controller with its feasibility certificate.
///
/// The realization maps measurements to actions:
/// `x̂⁺ = Â x̂ + B̂ y`, `u = Ĉ x̂ + D̂ y` (strictly proper in the internal
/// state, with feedthrough from the current measurement).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawHinfController", into = "RawHinfController")]
pub struct HinfController {
    pub gamma: f64,
    /// Control DGRE solution (folded coordinates).
    pub m: DMatrix<f64>,
    /// Filter DGRE solution.
    pub sigma: DMatrix<f64>,
    /// Realization.
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub d_hat: DMatrix<f64>,
    /// Physical control gain on the CE estimate (fold-back included).
    pub f_u: DMatrix<f64>,
    /// Certificate details.
    pub coupling_spectral_radius: f64,
    pub control_iterations: usize,
    pub filter_iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct RawHinfController {
    gamma: f64,
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    sigma: Vec<Vec<f64>>,
    #[serde(rename = "A_hat")]
    a_hat: Vec<Vec<f64>>,
    #[serde(rename = "B_hat")]
    b_hat: Vec<Vec<f64>>,
    #[serde(rename = "C_hat")]
    c_hat: Vec<Vec<f64>>,
    #[serde(rename = "D_hat")]
    d_hat: Vec<Vec<f64>>,
    #[serde(rename = "F_u")]
    f_u: Vec<Vec<f64>>,
    coupling_spectral_radius: f64,
    control_iterations: usize,
    filter_iterations: usize,
}

impl TryFrom<RawHinfController> for HinfController {
    type Error = Error;
    fn try_from(r: RawHinfController) -> Result<Self> {
        Ok(HinfController {
            gamma: r.gamma,
            m: mat_from_rows(&r.m, "M")?,
            sigma: mat_from_rows(&r.sigma, "Sigma")?,
            a_hat: mat_from_rows(&r.a_hat, "A_hat")?,
            b_hat: mat_from_rows(&r.b_hat, "B_hat")?,
            c_hat: mat_from_rows(&r.c_hat, "C_hat")?,
            d_hat: mat_from_rows(&r.d_hat, "D_hat")?,
            f_u: mat_from_rows(&r.f_u, "F_u")?,
            coupling_spectral_radius: r.coupling_spectral_radius,
            control_iterations: r.control_iterations,
            filter_iterations: r.filter_iterations,
        })
    }
}

impl From<HinfController> for RawHinfController {
    fn from(c: HinfController) -> Self {
        RawHinfController {
            gamma: c.gamma,
            m: rows_from_mat(&c.m),
            sigma: rows_from_mat(&c.sigma),
            a_hat: rows_from_mat(&c.a_hat),
            b_hat: rows_from_mat(&c.b_hat),
            c_hat: rows_from_mat(&c.c_hat),
            d_hat: rows_from_mat(&c.d_hat),
            f_u: rows_from_mat(&c.f_u),
            coupling_spectral_radius: c.coupling_spectral_radius,
            control_iterations: c.control_iterations,
            filter_iterations: c.filter_iterations,
        }
    }
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    symmetrized(m.clone())
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    symmetrized(m.clone())
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral radius of `Σ·M` for symmetric PSD `Σ`, `M`, computed through the
/// symmetric similarity `Σ^{1/2} M Σ^{1/2}`.
fn coupling_radius(sigma: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    let eig = symmetrized(sigma.clone()).symmetric_eigen();
    let n = sigma.nrows();
    let mut half = DMatrix::zeros(n, n);
    for i in 0..n {
        let ev = eig.eigenvalues[i].max(0.0).sqrt();
        let v = eig.eigenvectors.column(i);
        half += ev * &v * v.transpose();
    }
    let sym = symmetrized(&half * m * &half);
    max_eig(&sym).max(0.0)
}

fn invert_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    symmetrized(m.clone())
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or_else(|| Error::Singular(what.into()))
}

struct Folded {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    /// `Q2⁻¹ Q3ᵀ`: the fold-back term (`u = ũ − fold·x̌`).
    fold: DMatrix<f64>,
}

fn fold_cross_term(sys: &LinearSystemSpec, reward_spec: &RewardSpec) -> Result<Folded> {
    let q2_inv = invert_spd(reward_spec.q2(), "Q2")?;
    let fold = &q2_inv * reward_spec.q3().transpose();
    let a = sys.a() - sys.b2() * &fold;
    let q = symmetrized(reward_spec.q1() - reward_spec.q3() * &q2_inv * reward_spec.q3().transpose());
    if min_eig(&q) < -1e-8 * q.amax().max(1.0) {
        return Err(Error::invalid(
            "Q1 − Q3 Q2⁻¹ Q3ᵀ is not PSD; cross term too large for H∞ synthesis",
        ));
    }
    Ok(Folded { a, q, fold })
}

/// Solve for the central H∞ controller at attenuation level `gamma`.
///
/// Requires `noise_cov > 0` (the sensor channel must be full rank) and
/// `s_r = 0` (nonzero targets make the ℓ₂-gain problem affine).
/// Infeasibility — either DGRE diverging, the saddle condition failing, the
/// cost-to-come Hessian losing definiteness, or the coupling condition
/// failing — is reported as a typed [`HinfOutcome::Infeasible`], not an error.
pub fn solve_hinf_central(
    sys: &LinearSystemSpec,
    reward_spec: &RewardSpec,
    gamma: f64,
) -> Result<HinfOutcome> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma must be > 0"));
    }
    if sys.noise_cov() <= 0.0 {
        return Err(Error::invalid(
            "H∞ synthesis requires noise_cov > 0 (full-rank sensor channel)",
        ));
    }
    if reward_spec.s_r().iter().any(|&v| v != 0.0) {
        return Err(Error::invalid("H∞ synthesis requires s_r = 0"));
    }
    if reward_spec.n_s() != sys.n_s() || reward_spec.n_a() != sys.n_a() {
        return Err(Error::dim("H∞ synthesis: reward/system dimensions disagree"));
    }

    let folded = fold_cross_term(sys, reward_spec)?;
    let n_s = sys.n_s();
    let n_a = sys.n_a();
    let a = &folded.a;
    let b = sys.b2();
    let c = sys.c();
    let q = &folded.q;
    let r = reward_spec.q2();
    let g2 = gamma * gamma;
    let nc = sys.noise_cov();
    // D = √nc·I so DᵀMD = nc·M, DDᵀ = nc·I; N⁻¹ = I/nc.
    let infeasible = |reason: String| {
        Ok(HinfOutcome::Infeasible { gamma, reason })
    };

    // --- Control DGRE ---------------------------------------------------
    let mut m = DMatrix::<f64>::zeros(n_s, n_s);
    let mut control_iterations = 0;
    let f_u_folded = loop {
        control_iterations += 1;
        if control_iterations > DGRE_MAX_ITER {
            return Err(Error::NoConvergence {
                solver: "hinf control DGRE",
                residual: f64::NAN,
                iterations: DGRE_MAX_ITER,
            });
        }
        // Γ blocks (D = √nc·I).
        let btm = b.transpose() * &m;
        let g11 = r + &btm * b;
        let g12 = &btm * nc.sqrt(); // BᵀMD, n_a×n_s
        let g22 = &m * nc - DMatrix::identity(n_s, n_s) * g2; // DᵀMD − γ²I

        // Saddle condition on this iterate: S_w ≺ 0 keeps the max in (u,w)
        // well posed; if it ever fails the game value is unbounded → γ too
        // small. (Checking every iterate catches divergence early.)
        let g11_inv = match invert_spd(&g11, "R + BᵀMB") {
            Ok(v) => v,
            Err(_) => return infeasible("control Γ11 lost definiteness".into()),
        };
        let s_w = &g22 - g12.transpose() * &g11_inv * &g12;
        if max_eig(&s_w) >= 0.0 {
            return infeasible(format!(
                "saddle condition failed (max eig of S_w = {:.3e} ≥ 0)",
                max_eig(&s_w)
            ));
        }

        // Assemble and invert Γ ((n_a+n_s)²). Invert via LU; Γ is symmetric
        // indefinite by construction.
        let dim = n_a + n_s;
        let mut gamma_mat = DMatrix::zeros(dim, dim);
        gamma_mat.view_mut((0, 0), (n_a, n_a)).copy_from(&g11);
        gamma_mat.view_mut((0, n_a), (n_a, n_s)).copy_from(&g12);
        gamma_mat
            .view_mut((n_a, 0), (n_s, n_a))
            .copy_from(&g12.transpose());
        gamma_mat.view_mut((n_a, n_a), (n_s, n_s)).copy_from(&g22);

        let mta = &m * a;
        let mut l = DMatrix::zeros(dim, n_s);
        l.view_mut((0, 0), (n_a, n_s)).copy_from(&(b.transpose() * &mta));
        l.view_mut((n_a, 0), (n_s, n_s)).copy_from(&(&mta * nc.sqrt()));

        let lu = gamma_mat.clone().lu();
        let gamma_inv_l = match lu.solve(&l) {
            Some(v) => v,
            None => return infeasible("control Γ singular".into()),
        };
        let m_new = symmetrized(q + a.transpose() * &m * a - l.transpose() * &gamma_inv_l);

        if m_new.iter().any(|v| !v.is_finite()) || m_new.amax() > 1e14 {
            return infeasible("control DGRE diverged".into());
        }
        let residual = (&m_new - &m).norm();
        let scale = m_new.norm().max(1.0);
        m = m_new;
        if residual <= DGRE_TOL * scale {
            // Gains [u; w*] = −Γ⁻¹ L x; take the u block.
            break -gamma_inv_l.view((0, 0), (n_a, n_s)).into_owned();
        }
    };

    // --- Filter DGRE ------------------------------------------------------
    // Σ⁺ = A Σ̄ Aᵀ + nc·I, Σ̄ = (Σ⁻¹ + CᵀC/nc − γ⁻²Q)⁻¹.
    let ctc_over_nc = c.transpose() * c / nc;
    let mut sigma = DMatrix::identity(n_s, n_s) * sys.init_std().powi(2).max(nc);
    let mut filter_iterations = 0;
    loop {
        filter_iterations += 1;
        if filter_iterations > DGRE_MAX_ITER {
            return Err(Error::NoConvergence {
                solver: "hinf filter DGRE",
                residual: f64::NAN,
                iterations: DGRE_MAX_ITER,
            });
        }
        let sigma_inv = match invert_spd(&sigma, "Σ") {
            Ok(v) => v,
            Err(_) => return infeasible("filter covariance lost definiteness".into()),
        };
        let h = symmetrized(&sigma_inv + &ctc_over_nc - q / g2);
        if min_eig(&h) <= 0.0 {
            return infeasible(format!(
                "cost-to-come Hessian lost definiteness (min eig {:.3e})",
                min_eig(&h)
            ));
        }
        // The eigenvalue check above can pass with a marginally positive
        // minimum while Cholesky still breaks down; both mean the same
        // thing — γ sits on the feasibility boundary.
        let sigma_bar = match invert_spd(&h, "H") {
            Ok(v) => v,
            Err(_) => return infeasible("cost-to-come Hessian numerically singular".into()),
        };
        let sigma_new = symmetrized(a * &sigma_bar * a.transpose() + DMatrix::identity(n_s, n_s) * nc);
        if sigma_new.iter().any(|v| !v.is_finite()) || sigma_new.amax() > 1e14 {
            return infeasible("filter DGRE diverged".into());
        }
        let residual = (&sigma_new - &sigma).norm();
        let scale = sigma_new.norm().max(1.0);
        sigma = sigma_new;
        if residual <= DGRE_TOL * scale {
            break;
        }
    }
    // Recompute Σ̄ at the fixed point.
    let sigma_inv = match invert_spd(&sigma, "Σ") {
        Ok(v) => v,
        Err(_) => return infeasible("filter covariance lost definiteness at fixed point".into()),
    };
    let h = symmetrized(&sigma_inv + &ctc_over_nc - q / g2);
    if min_eig(&h) <= 0.0 {
        return infeasible("cost-to-come Hessian lost definiteness at fixed point".into());
    }
    let sigma_bar = match invert_spd(&h, "H") {
        Ok(v) => v,
        Err(_) => return infeasible("cost-to-come Hessian numerically singular at fixed point".into()),
    };

    // --- Coupling condition ----------------------------------------------
    let rho = coupling_radius(&sigma, &m);
    if rho >= g2 {
        return infeasible(format!(
            "coupling condition failed: ρ(ΣM) = {rho:.6e} ≥ γ² = {g2:.6e}"
        ));
    }

    // --- Realization -------------------------------------------------------
    // W = (Σ⁻¹ + CᵀN⁻¹C − γ⁻²M)⁻¹  (PD follows from the coupling condition).
    let w_mat = symmetrized(&sigma_inv + &ctc_over_nc - &m / g2);
    if min_eig(&w_mat) <= 0.0 {
        return infeasible("CE Hessian lost definiteness".into());
    }
    let w_inv = match invert_spd(&w_mat, "W") {
        Ok(v) => v,
        Err(_) => return infeasible("CE Hessian numerically singular".into()),
    };

    // Physical gain on x̌ (fold-back included).
    let f_u = &f_u_folded - &folded.fold;

    // x̌ = W⁻¹(Σ⁻¹ x̂ + Cᵀy/nc)
    let ce_x = &w_inv * &sigma_inv;
    let ce_y = &w_inv * c.transpose() / nc;
    // x̄ = Σ̄(Σ⁻¹ x̂ + Cᵀy/nc)
    let xb_x = &sigma_bar * &sigma_inv;
    let xb_y = &sigma_bar * c.transpose() / nc;
    // ũ = F̃ x̌ (folded control enters propagation; physical u = F_u x̌).
    let c_hat = &f_u * &ce_x;
    let d_hat = &f_u * &ce_y;
    let a_hat = a * &xb_x + b * &f_u_folded * &ce_x;
    let b_hat = a * &xb_y + b * &f_u_folded * &ce_y;

    Ok(HinfOutcome::Feasible(Box::new(HinfController {
        gamma,
        m,
        sigma,
        a_hat,
        b_hat,
        c_hat,
        d_hat,
        f_u,
        coupling_spectral_radius: rho,
        control_iterations,
        filter_iterations,
    })))
}

/// Bisection for the attenuation threshold γ*: smallest feasible γ within
/// `tol`, bracketed by an infeasible `lo` and a feasible `hi`.
pub fn hinf_gamma_bisection(
    sys: &LinearSystemSpec,
    reward_spec: &RewardSpec,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    if solve_hinf_central(sys, reward_spec, lo)?.is_feasible() {
        return Err(Error::invalid("bisection: lo must be infeasible"));
    }
    if !solve_hinf_central(sys, reward_spec, hi)?.is_feasible() {
        return Err(Error::invalid("bisection: hi must be feasible"));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if solve_hinf_central(sys, reward_spec, mid)?.is_feasible() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

/// Closed-loop H∞ policy for rollouts.
pub struct HinfPolicy {
    controller: HinfController,
    x_hat: DVector<f64>,
}

impl HinfPolicy {
    pub fn new(controller: HinfController) -> Self {
        let n = controller.a_hat.nrows();
        HinfPolicy {
            controller,
            x_hat: DVector::zeros(n),
        }
    }

    pub fn controller(&self) -> &HinfController {
        &self.controller
    }
}

impl Policy for HinfPolicy {
    fn reset_episode(&mut self, _episode_seed: u64) {
        self.x_hat = DVector::zeros(self.controller.a_hat.nrows());
    }

    fn act(&mut self, obs: &DVector<f64>) -> DVector<f64> {
        let u = &self.controller.c_hat * &self.x_hat + &self.controller.d_hat * obs;
        self.x_hat = &self.controller.a_hat * &self.x_hat + &self.controller.b_hat * obs;
        u
    }
}
