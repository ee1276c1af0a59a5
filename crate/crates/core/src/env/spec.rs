//! Environment specification types with validated construction and the
//! row-major JSON conventions used by all file formats.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convert row-major nested arrays into a matrix, validating rectangularity.
pub fn mat_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::parse(what, "ragged matrix rows"));
    }
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::parse(what, format!("non-finite entry at [{i}][{j}]")));
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Row-major nested arrays from a matrix.
pub fn rows_from_mat(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn check_finite_vec(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!("{what} is not symmetric")));
            }
        }
    }
    Ok(())
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// RewardSpec
// ---------------------------------------------------------------------------

/// Weights of the quadratic tracking reward.
///
/// Invariants enforced at construction (and on deserialization): `Q1` is
/// symmetric positive semidefinite, `Q2` symmetric positive definite, and all
/// dimensions are mutually consistent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawRewardSpec", into = "RawRewardSpec")]
pub struct RewardSpec {
    q1: DMatrix<f64>,
    q2: DMatrix<f64>,
    q3: DMatrix<f64>,
    s_r: DVector<f64>,
}

impl RewardSpec {
    pub fn new(
        q1: DMatrix<f64>,
        q2: DMatrix<f64>,
        q3: DMatrix<f64>,
        s_r: DVector<f64>,
    ) -> Result<Self> {
        let n_s = q1.nrows();
        let n_a = q2.nrows();
        if q1.ncols() != n_s {
            return Err(Error::dim("Q1 must be square"));
        }
        if q2.ncols() != n_a {
            return Err(Error::dim("Q2 must be square"));
        }
        if q3.nrows() != n_s || q3.ncols() != n_a {
            return Err(Error::dim(format!(
                "Q3 must be {n_s}x{n_a}, got {}x{}",
                q3.nrows(),
                q3.ncols()
            )));
        }
        if s_r.len() != n_s {
            return Err(Error::dim(format!(
                "s_r must have length {n_s}, got {}",
                s_r.len()
            )));
        }
        check_symmetric(&q1, "Q1")?;
        check_symmetric(&q2, "Q2")?;
        check_finite_vec(&s_r, "s_r")?;
        let q1_min = min_symmetric_eigenvalue(&q1);
        if q1_min < -1e-8 * q1.amax().max(1.0) {
            return Err(Error::invalid(format!(
                "Q1 must be positive semidefinite (min eigenvalue {q1_min:.3e})"
            )));
        }
        let q2_min = min_symmetric_eigenvalue(&q2);
        if q2_min <= 0.0 {
            return Err(Error::invalid(format!(
                "Q2 must be positive definite (min eigenvalue {q2_min:.3e})"
            )));
        }
        Ok(RewardSpec { q1, q2, q3, s_r })
    }

    /// `Q1 = I(n_s)`, `Q2 = I(n_a)`, `Q3 = 0`, `s_r = 0`.
    pub fn identity_weights(n_s: usize, n_a: usize) -> Self {
        RewardSpec {
            q1: DMatrix::identity(n_s, n_s),
            q2: DMatrix::identity(n_a, n_a),
            q3: DMatrix::zeros(n_s, n_a),
            s_r: DVector::zeros(n_s),
        }
    }

    /// Same weights with a replaced target state.
    pub fn with_target(mut self, s_r: DVector<f64>) -> Result<Self> {
        if s_r.len() != self.n_s() {
            return Err(Error::dim("with_target: wrong s_r length"));
        }
        check_finite_vec(&s_r, "s_r")?;
        self.s_r = s_r;
        Ok(self)
    }

    pub fn q1(&self) -> &DMatrix<f64> {
        &self.q1
    }
    pub fn q2(&self) -> &DMatrix<f64> {
        &self.q2
    }
    pub fn q3(&self) -> &DMatrix<f64> {
        &self.q3
    }
    pub fn s_r(&self) -> &DVector<f64> {
        &self.s_r
    }
    pub fn n_s(&self) -> usize {
        self.q1.nrows()
    }
    pub fn n_a(&self) -> usize {
        self.q2.nrows()
    }
}

#[derive(Serialize, Deserialize)]
struct RawRewardSpec {
    #[serde(rename = "Q1")]
    q1: Vec<Vec<f64>>,
    #[serde(rename = "Q2")]
    q2: Vec<Vec<f64>>,
    #[serde(rename = "Q3")]
    q3: Vec<Vec<f64>>,
    s_r: Vec<f64>,
}

impl TryFrom<RawRewardSpec> for RewardSpec {
    type Error = Error;
    fn try_from(raw: RawRewardSpec) -> Result<Self> {
        RewardSpec::new(
            mat_from_rows(&raw.q1, "Q1")?,
            mat_from_rows(&raw.q2, "Q2")?,
            mat_from_rows(&raw.q3, "Q3")?,
            DVector::from_vec(raw.s_r),
        )
    }
}

impl From<RewardSpec> for RawRewardSpec {
    fn from(s: RewardSpec) -> Self {
        RawRewardSpec {
            q1: rows_from_mat(&s.q1),
            q2: rows_from_mat(&s.q2),
            q3: rows_from_mat(&s.q3),
            s_r: s.s_r.iter().cloned().collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// LinearSystemSpec
// ---------------------------------------------------------------------------

/// Linear time-invariant system `s' = A·s + B2·a + w`, `o = C·s' + v` with
/// `w ~ N(0, noise_cov·I)`, `v ~ N(0, noise_cov·I)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawLinearSystemSpec", into = "RawLinearSystemSpec")]
pub struct LinearSystemSpec {
    a: DMatrix<f64>,
    b2: DMatrix<f64>,
    c: DMatrix<f64>,
    noise_cov: f64,
    n_steps: usize,
    init_std: f64,
}

impl LinearSystemSpec {
    pub fn new(
        a: DMatrix<f64>,
        b2: DMatrix<f64>,
        c: DMatrix<f64>,
        noise_cov: f64,
        n_steps: usize,
        init_std: f64,
    ) -> Result<Self> {
        let n_s = a.nrows();
        if a.ncols() != n_s {
            return Err(Error::dim("A must be square"));
        }
        if b2.nrows() != n_s {
            return Err(Error::dim(format!(
                "B2 must have {n_s} rows, got {}",
                b2.nrows()
            )));
        }
        if c.ncols() != n_s {
            return Err(Error::dim(format!(
                "C must have {n_s} columns, got {}",
                c.ncols()
            )));
        }
        if !(noise_cov >= 0.0 && noise_cov.is_finite()) {
            return Err(Error::invalid("noise_cov must be >= 0"));
        }
        if n_steps < 1 {
            return Err(Error::invalid("n_steps must be >= 1"));
        }
        if !(init_std >= 0.0 && init_std.is_finite()) {
            return Err(Error::invalid("init_std must be >= 0"));
        }
        for (m, name) in [(&a, "A"), (&b2, "B2"), (&c, "C")] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(LinearSystemSpec {
            a,
            b2,
            c,
            noise_cov,
            n_steps,
            init_std,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b2(&self) -> &DMatrix<f64> {
        &self.b2
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn noise_cov(&self) -> f64 {
        self.noise_cov
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn init_std(&self) -> f64 {
        self.init_std
    }
    pub fn n_s(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_a(&self) -> usize {
        self.b2.ncols()
    }
    pub fn n_o(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Serialize, Deserialize)]
struct RawLinearSystemSpec {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B2")]
    b2: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    noise_cov: f64,
    n_steps: usize,
    init_std: f64,
}

impl TryFrom<RawLinearSystemSpec> for LinearSystemSpec {
    type Error = Error;
    fn try_from(raw: RawLinearSystemSpec) -> Result<Self> {
        LinearSystemSpec::new(
            mat_from_rows(&raw.a, "A")?,
            mat_from_rows(&raw.b2, "B2")?,
            mat_from_rows(&raw.c, "C")?,
            raw.noise_cov,
            raw.n_steps,
            raw.init_std,
        )
    }
}

impl From<LinearSystemSpec> for RawLinearSystemSpec {
    fn from(s: LinearSystemSpec) -> Self {
        RawLinearSystemSpec {
            a: rows_from_mat(&s.a),
            b2: rows_from_mat(&s.b2),
            c: rows_from_mat(&s.c),
            noise_cov: s.noise_cov,
            n_steps: s.n_steps,
            init_std: s.init_std,
        }
    }
}

// ---------------------------------------------------------------------------
// PdeSpec
// ---------------------------------------------------------------------------

/// Which 1-D periodic PDE is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeKind {
    /// `u_t = ν·u_xx − u·u_x + Φ·a`
    Burgers,
    /// `u_t = ν·u_xx − c·u_x + ζ·u + Φ·a`
    Cdr,
}

/// Discretized 1-D periodic PDE on `n_s` uniform grid points over `[0, L)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawPdeSpec", into = "RawPdeSpec")]
pub struct PdeSpec {
    kind: PdeKind,
    nu: f64,
    c: f64,
    zeta: f64,
    phi: f64,
    domain_len: f64,
    n_s: usize,
    n_a: usize,
    n_o: usize,
    sample_time: f64,
    process_noise_cov: f64,
    sensor_noise_cov: f64,
    n_steps: usize,
    target_field: DVector<f64>,
}

/// All construction parameters of a [`PdeSpec`] (public mirror).
#[derive(Debug, Clone)]
pub struct PdeParams {
    pub kind: PdeKind,
    pub nu: f64,
    pub c: f64,
    pub zeta: f64,
    pub phi: f64,
    pub domain_len: f64,
    pub n_s: usize,
    pub n_a: usize,
    pub n_o: usize,
    pub sample_time: f64,
    pub process_noise_cov: f64,
    pub sensor_noise_cov: f64,
    pub n_steps: usize,
    pub target_field: DVector<f64>,
}

impl PdeSpec {
    pub fn new(p: PdeParams) -> Result<Self> {
        if !(p.nu > 0.0 && p.nu.is_finite()) {
            return Err(Error::invalid("nu must be > 0"));
        }
        if !(p.domain_len > 0.0 && p.domain_len.is_finite()) {
            return Err(Error::invalid("L must be > 0"));
        }
        if !(p.phi > 0.0 && p.phi <= p.domain_len) {
            return Err(Error::invalid("phi must lie in (0, L]"));
        }
        if p.n_s < 4 {
            return Err(Error::invalid("n_s must be >= 4 for the periodic stencil"));
        }
        if p.n_a < 1 {
            return Err(Error::invalid("n_a must be >= 1"));
        }
        if p.n_o < 1 || p.n_o > p.n_s {
            return Err(Error::invalid("n_o must lie in [1, n_s]"));
        }
        if !(p.sample_time > 0.0 && p.sample_time.is_finite()) {
            return Err(Error::invalid("sample_time must be > 0"));
        }
        if !(p.process_noise_cov >= 0.0 && p.sensor_noise_cov >= 0.0) {
            return Err(Error::invalid("noise covariances must be >= 0"));
        }
        if p.n_steps < 1 {
            return Err(Error::invalid("n_steps must be >= 1"));
        }
        if p.target_field.len() != p.n_s {
            return Err(Error::dim(format!(
                "target_field must have length {}, got {}",
                p.n_s,
                p.target_field.len()
            )));
        }
        check_finite_vec(&p.target_field, "target_field")?;
        if !p.c.is_finite() || !p.zeta.is_finite() {
            return Err(Error::NonFinite("c or zeta".into()));
        }
        Ok(PdeSpec {
            kind: p.kind,
            nu: p.nu,
            c: p.c,
            zeta: p.zeta,
            phi: p.phi,
            domain_len: p.domain_len,
            n_s: p.n_s,
            n_a: p.n_a,
            n_o: p.n_o,
            sample_time: p.sample_time,
            process_noise_cov: p.process_noise_cov,
            sensor_noise_cov: p.sensor_noise_cov,
            n_steps: p.n_steps,
            target_field: p.target_field,
        })
    }

    /// The same spec with altered physical parameters (used by task sampling).
    pub fn with_params(
        &self,
        nu: f64,
        c: f64,
        zeta: f64,
        phi: f64,
    ) -> Result<Self> {
        PdeSpec::new(PdeParams {
            nu,
            c,
            zeta,
            phi,
            ..self.params()
        })
    }

    /// All parameters as a [`PdeParams`] value.
    pub fn params(&self) -> PdeParams {
        PdeParams {
            kind: self.kind,
            nu: self.nu,
            c: self.c,
            zeta: self.zeta,
            phi: self.phi,
            domain_len: self.domain_len,
            n_s: self.n_s,
            n_a: self.n_a,
            n_o: self.n_o,
            sample_time: self.sample_time,
            process_noise_cov: self.process_noise_cov,
            sensor_noise_cov: self.sensor_noise_cov,
            n_steps: self.n_steps,
            target_field: self.target_field.clone(),
        }
    }

    pub fn kind(&self) -> PdeKind {
        self.kind
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn zeta(&self) -> f64 {
        self.zeta
    }
    pub fn phi(&self) -> f64 {
        self.phi
    }
    pub fn domain_len(&self) -> f64 {
        self.domain_len
    }
    pub fn n_s(&self) -> usize {
        self.n_s
    }
    pub fn n_a(&self) -> usize {
        self.n_a
    }
    pub fn n_o(&self) -> usize {
        self.n_o
    }
    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }
    pub fn process_noise_cov(&self) -> f64 {
        self.process_noise_cov
    }
    pub fn sensor_noise_cov(&self) -> f64 {
        self.sensor_noise_cov
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn target_field(&self) -> &DVector<f64> {
        &self.target_field
    }
    /// Grid spacing `Δx = L / n_s`.
    pub fn dx(&self) -> f64 {
        self.domain_len / self.n_s as f64
    }
}

#[derive(Serialize, Deserialize)]
struct RawPdeSpec {
    kind: PdeKind,
    nu: f64,
    #[serde(default)]
    c: f64,
    #[serde(default)]
    zeta: f64,
    phi: f64,
    #[serde(rename = "L")]
    domain_len: f64,
    n_s: usize,
    n_a: usize,
    n_o: usize,
    sample_time: f64,
    process_noise_cov: f64,
    sensor_noise_cov: f64,
    n_steps: usize,
    target_field: Vec<f64>,
}

impl TryFrom<RawPdeSpec> for PdeSpec {
    type Error = Error;
    fn try_from(raw: RawPdeSpec) -> Result<Self> {
        PdeSpec::new(PdeParams {
            kind: raw.kind,
            nu: raw.nu,
            c: raw.c,
            zeta: raw.zeta,
            phi: raw.phi,
            domain_len: raw.domain_len,
            n_s: raw.n_s,
            n_a: raw.n_a,
            n_o: raw.n_o,
            sample_time: raw.sample_time,
            process_noise_cov: raw.process_noise_cov,
            sensor_noise_cov: raw.sensor_noise_cov,
            n_steps: raw.n_steps,
            target_field: DVector::from_vec(raw.target_field),
        })
    }
}

impl From<PdeSpec> for RawPdeSpec {
    fn from(s: PdeSpec) -> Self {
        RawPdeSpec {
            kind: s.kind,
            nu: s.nu,
            c: s.c,
            zeta: s.zeta,
            phi: s.phi,
            domain_len: s.domain_len,
            n_s: s.n_s,
            n_a: s.n_a,
            n_o: s.n_o,
            sample_time: s.sample_time,
            process_noise_cov: s.process_noise_cov,
            sensor_noise_cov: s.sensor_noise_cov,
            n_steps: s.n_steps,
            target_field: s.target_field.iter().cloned().collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// EnvSpec
// ---------------------------------------------------------------------------

/// Either environment family, as embedded in task files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvSpec {
    Linear(LinearSystemSpec),
    Pde(PdeSpec),
}

impl EnvSpec {
    pub fn n_s(&self) -> usize {
        match self {
            EnvSpec::Linear(s) => s.n_s(),
            EnvSpec::Pde(s) => s.n_s(),
        }
    }
    pub fn n_a(&self) -> usize {
        match self {
            EnvSpec::Linear(s) => s.n_a(),
            EnvSpec::Pde(s) => s.n_a(),
        }
    }
    pub fn n_o(&self) -> usize {
        match self {
            EnvSpec::Linear(s) => s.n_o(),
            EnvSpec::Pde(s) => s.n_o(),
        }
    }
    pub fn n_steps(&self) -> usize {
        match self {
            EnvSpec::Linear(s) => s.n_steps(),
            EnvSpec::Pde(s) => s.n_steps(),
        }
    }
}
