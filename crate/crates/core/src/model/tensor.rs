//! Flat row-major `f64` tensors and the dense kernels the network is built
//! from.
//!
//! Everything the transformer does numerically reduces to three GEMM
//! variants plus a handful of row-wise maps (bias add, GELU, layer
//! normalization, dropout). Keeping these as free functions over `&[f64]`
//! slices makes the backward pass a mirror image of the forward pass with no
//! autograd machinery.

use crate::{Error, Result};

/// A dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    /// Constant-filled tensor of the given shape.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Wrap a flat buffer; `data.len()` must equal the shape's element count.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::dim(format!(
                "tensor data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of axes (1 = vector, 2 = matrix).
    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// True iff every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bit-exact equality (distinguishes `-0.0` from `0.0`, unlike `==`).
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

// ---------------------------------------------------------------------------
// GEMM kernels (row-major)
// ---------------------------------------------------------------------------

/// `C = A·B` with `A: m×k`, `B: k×n`, `C: m×n`.
///
/// i-k-j loop order: the inner loop walks contiguous rows of `B` and `C`.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += ail * bj;
            }
        }
    }
    c
}

/// Dot product over 8 independent accumulator lanes.
///
/// The lane split gives the compiler instruction-level parallelism that the
/// single-accumulator chain forbids; the reduction order is fixed, so results
/// are identical on every call (just not identical to a naive left fold).
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut lanes = [0.0f64; 8];
    let mut xc = x.chunks_exact(8);
    let mut yc = y.chunks_exact(8);
    for (xs, ys) in (&mut xc).zip(&mut yc) {
        for l in 0..8 {
            lanes[l] += xs[l] * ys[l];
        }
    }
    let mut tail = 0.0;
    for (a, b) in xc.remainder().iter().zip(yc.remainder()) {
        tail += a * b;
    }
    (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])))
        + tail
}

/// `C = A·Bᵀ` with `A: m×k`, `B: n×k`, `C: m×n`.
///
/// Each output element is a dot product of two contiguous rows.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cj) in crow.iter_mut().enumerate() {
            *cj = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// `C = Aᵀ·B` with `A: k×m`, `B: k×n`, `C: m×n`.
///
/// Accumulates rank-1 updates row by row; inner loop contiguous in `B`/`C`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, &ali) in arow.iter().enumerate() {
            if ali == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += ali * bj;
            }
        }
    }
    c
}

// ---------------------------------------------------------------------------
// Row-wise maps
// ---------------------------------------------------------------------------

/// Add a length-`n` bias vector to every row of an `m×n` matrix, in place.
pub fn add_bias(x: &mut [f64], bias: &[f64]) {
    let n = bias.len();
    debug_assert_eq!(x.len() % n, 0);
    for row in x.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of an `m×n` matrix (the bias gradient of a linear layer).
pub fn column_sums(x: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(x.len() % n, 0);
    let mut out = vec![0.0; n];
    for row in x.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// GELU activation (tanh form), elementwise.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// Exact derivative of [`gelu`].
#[inline]
pub fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu_map(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| gelu(v)).collect()
}

/// `dx = dy ⊙ gelu'(x_pre)`.
pub fn gelu_backward(dy: &[f64], x_pre: &[f64]) -> Vec<f64> {
    dy.iter()
        .zip(x_pre)
        .map(|(&g, &x)| g * gelu_prime(x))
        .collect()
}

/// Layer-normalization epsilon (variance regularizer).
pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization of an `m×n` matrix.
///
/// Returns `(y, xhat, inv_std)` where `y = scale ⊙ xhat + offset`,
/// `xhat = (x − μ)/√(σ² + ε)`; `xhat` and `inv_std` feed the backward pass.
pub fn layernorm_forward(
    x: &[f64],
    scale: &[f64],
    offset: &[f64],
    n: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    debug_assert_eq!(x.len() % n, 0);
    let m = x.len() / n;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; m];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        let xh = &mut xhat[i * n..(i + 1) * n];
        let yr = &mut y[i * n..(i + 1) * n];
        for j in 0..n {
            let h = (row[j] - mean) * is;
            xh[j] = h;
            yr[j] = scale[j] * h + offset[j];
        }
    }
    (y, xhat, inv_std)
}

/// Backward of [`layernorm_forward`].
///
/// Returns `(dx, dscale, doffset)` given upstream `dy`.
pub fn layernorm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    scale: &[f64],
    n: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = dy.len() / n;
    let mut dx = vec![0.0; dy.len()];
    let mut dscale = vec![0.0; n];
    let mut doffset = vec![0.0; n];
    for i in 0..m {
        let dyr = &dy[i * n..(i + 1) * n];
        let xh = &xhat[i * n..(i + 1) * n];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..n {
            dscale[j] += dyr[j] * xh[j];
            doffset[j] += dyr[j];
            let dxh = dyr[j] * scale[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        let mean_dxhat = sum_dxhat / n as f64;
        let mean_dxhat_xhat = sum_dxhat_xhat / n as f64;
        let dxr = &mut dx[i * n..(i + 1) * n];
        for j in 0..n {
            let dxh = dyr[j] * scale[j];
            dxr[j] = inv_std[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    (dx, dscale, doffset)
}
