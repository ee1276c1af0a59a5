//! Kalman filter for [`LinearSystemSpec`] dynamics.
//!
//! Process and measurement noise share the spec's scalar variance:
//! `W = noise_cov·I` (n_s), `V = noise_cov·I` (n_o). The covariance update
//! uses the Joseph form and explicit symmetrization so `Σ` stays symmetric
//! PSD under rounding.

use nalgebra::{DMatrix, DVector};

use crate::env::LinearSystemSpec;
use crate::error::{Error, Result};

/// Filter state: estimate and error covariance.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub x_hat: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl KalmanState {
    /// Episode prior: `x̂ = 0`, `Σ = init_std²·I` (the reset distribution).
    pub fn prior(sys: &LinearSystemSpec) -> Self {
        KalmanState {
            x_hat: DVector::zeros(sys.n_s()),
            sigma: DMatrix::identity(sys.n_s(), sys.n_s()) * sys.init_std().powi(2),
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let sym = (&*m + m.transpose()) * 0.5;
    *m = sym;
}

/// Time update through `s' = A·s + B2·a + w`.
pub fn kalman_predict(
    kstate: &KalmanState,
    a: &DVector<f64>,
    sys: &LinearSystemSpec,
) -> KalmanState {
    let x_hat = sys.a() * &kstate.x_hat + sys.b2() * a;
    let mut sigma = sys.a() * &kstate.sigma * sys.a().transpose();
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += sys.noise_cov();
    }
    symmetrize(&mut sigma);
    KalmanState { x_hat, sigma }
}

/// Measurement update with `o = C·s + v`.
///
/// Errors when the innovation covariance `CΣCᵀ + V` is singular (e.g. a
/// noise-free filter whose predicted covariance has collapsed).
pub fn kalman_update(
    kstate: &KalmanState,
    o: &DVector<f64>,
    sys: &LinearSystemSpec,
) -> Result<KalmanState> {
    let c = sys.c();
    let n_o = sys.n_o();
    let mut innov_cov = c * &kstate.sigma * c.transpose();
    for i in 0..n_o {
        innov_cov[(i, i)] += sys.noise_cov();
    }
    symmetrize(&mut innov_cov);
    let chol = innov_cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Kalman innovation covariance".into()))?;
    // Gain K = Σ Cᵀ S⁻¹, computed as solve(S, C Σ)ᵀ for stability.
    let gain = chol.solve(&(c * &kstate.sigma)).transpose();

    let innovation = o - c * &kstate.x_hat;
    let x_hat = &kstate.x_hat + &gain * innovation;

    // Joseph form: Σ⁺ = (I − KC) Σ (I − KC)ᵀ + K V Kᵀ.
    let n_s = sys.n_s();
    let ikc = DMatrix::identity(n_s, n_s) - &gain * c;
    let mut sigma = &ikc * &kstate.sigma * ikc.transpose()
        + &gain * gain.transpose() * sys.noise_cov();
    symmetrize(&mut sigma);

    Ok(KalmanState { x_hat, sigma })
}

/// Full filter step: predict with `(a)`, then update with `(o)`.
pub fn kalman_step(
    kstate: &KalmanState,
    a: &DVector<f64>,
    o: &DVector<f64>,
    sys: &LinearSystemSpec,
) -> Result<KalmanState> {
    kalman_update(&kalman_predict(kstate, a, sys), o, sys)
}
