//! Decision-transformer forward pass, loss, and exact reverse-mode gradients.
//!
//! One window of `K` positions becomes the token sequence
//! `(R̂₀, o₀, a₀, R̂₁, o₁, a₁, …)` of length `3K`. Each channel is embedded by
//! its own MLP, the three tokens of a position share one learned
//! relative-timestep embedding, and a pre-normalized causal attention stack
//! processes the sequence. The action prediction for position `i` is read
//! from the hidden state of the *observation* token of position `i`, which —
//! by the causal mask — never sees the action of position `i` itself, so the
//! same forward pass serves training and autoregressive control.
//!
//! The backward pass is hand-written against a recorded tape and is exact
//! reverse-mode differentiation of the forward arithmetic; every closed-form
//! piece is cross-checked against central finite differences in the tests.

use std::collections::BTreeMap;

use super::config::{LoraAdapters, ModelConfig, ModelParameters};
use super::tensor::{
    add_bias, column_sums, gelu_backward, gelu_map, layernorm_backward, layernorm_forward,
    matmul_nn, matmul_nt, matmul_tn, Tensor,
};
use crate::data::ContextWindow;
use crate::rng::StreamKey;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Batch
// ---------------------------------------------------------------------------

/// A stack of context windows in flat row-major storage.
///
/// `rtg`/`timesteps`/`mask` are `B×K`; `obs` is `B×K×n_o`; `act` is
/// `B×K×n_a`. `mask[b,k] = false` marks left padding: the tokens of that
/// position are excluded from everyone's attention and from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub b: usize,
    pub k: usize,
    pub n_o: usize,
    pub n_a: usize,
    pub rtg: Vec<f64>,
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Batch {
    /// Stack context windows; window lengths and observation/action widths
    /// must agree across the batch.
    pub fn from_windows<'a, I>(windows: I) -> Result<Batch>
    where
        I: IntoIterator<Item = &'a ContextWindow>,
    {
        let windows: Vec<&ContextWindow> = windows.into_iter().collect();
        let first = windows
            .first()
            .ok_or_else(|| Error::invalid("cannot build a batch from zero windows"))?;
        let k = first.len();
        let n_o = first.obs.first().map_or(0, |o| o.len());
        let n_a = first.act.first().map_or(0, |a| a.len());
        let b = windows.len();
        let mut batch = Batch {
            b,
            k,
            n_o,
            n_a,
            rtg: Vec::with_capacity(b * k),
            obs: Vec::with_capacity(b * k * n_o),
            act: Vec::with_capacity(b * k * n_a),
            timesteps: Vec::with_capacity(b * k),
            mask: Vec::with_capacity(b * k),
        };
        for (i, w) in windows.iter().enumerate() {
            if w.len() != k {
                return Err(Error::dim(format!(
                    "window {i} has K = {}, batch has K = {k}",
                    w.len()
                )));
            }
            for (o, a) in w.obs.iter().zip(&w.act) {
                if o.len() != n_o || a.len() != n_a {
                    return Err(Error::dim(format!(
                        "window {i} has obs/act widths {}/{}, batch has {}/{}",
                        o.len(),
                        a.len(),
                        n_o,
                        n_a
                    )));
                }
                batch.obs.extend(o.iter());
                batch.act.extend(a.iter());
            }
            batch.rtg.extend(&w.rtg);
            batch.timesteps.extend(&w.timesteps);
            batch.mask.extend(&w.mask);
        }
        Ok(batch)
    }

    /// Internal-consistency check of the flat buffers.
    pub fn validate(&self) -> Result<()> {
        let bk = self.b * self.k;
        if self.rtg.len() != bk
            || self.timesteps.len() != bk
            || self.mask.len() != bk
            || self.obs.len() != bk * self.n_o
            || self.act.len() != bk * self.n_a
        {
            return Err(Error::dim(format!(
                "inconsistent batch buffers for B = {}, K = {}",
                self.b, self.k
            )));
        }
        Ok(())
    }

    /// Number of unmasked scalar action entries (the MSE denominator).
    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count() * self.n_a
    }
}

/// Which tensors receive gradients and optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableSet {
    /// Every base parameter (and the adapters too, if attached and unfrozen).
    All,
    /// Only the adapter tensors; the base stays untouched.
    AdaptersOnly,
}

/// Loss, predictions, and the gradient collection for the trainable set.
#[derive(Debug, Clone)]
pub struct GradResult {
    pub loss: f64,
    /// Predicted actions, shape `[B, K, n_a]`.
    pub pred: Tensor,
    /// Gradients keyed by tensor name; frozen tensors have no entry.
    pub grads: BTreeMap<String, Tensor>,
}

// ---------------------------------------------------------------------------
// Attention mask
// ---------------------------------------------------------------------------

/// May token `query` attend to token `key`, given the position mask of one
/// window? Token `3k + c` belongs to position `k`; a token may attend only
/// backwards, and never to a padded position.
#[inline]
pub fn token_allowed(query: usize, key: usize, position_mask: &[bool]) -> bool {
    key <= query && position_mask[key / 3]
}

/// The full `3K × 3K` boolean attention mask for one window.
pub fn attention_allowed(position_mask: &[bool]) -> Vec<Vec<bool>> {
    let s = 3 * position_mask.len();
    (0..s)
        .map(|i| (0..s).map(|j| token_allowed(i, j, position_mask)).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

struct MlpTape {
    /// Input of each layer (`inputs[0]` is the raw channel input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each non-final layer (empty for the last).
    preacts: Vec<Vec<f64>>,
}

struct LayerTape {
    xhat1: Vec<f64>,
    inv_std1: Vec<f64>,
    h1: Vec<f64>,
    q: Vec<f64>,
    key: Vec<f64>,
    v: Vec<f64>,
    /// `h1·Aᵀ` for the q/v adapters (empty without adapters).
    xa_q: Vec<f64>,
    xa_v: Vec<f64>,
    /// Attention probabilities, `B×H×S×S`; exactly 0 where not allowed.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    attn_drop: Vec<f64>,
    xhat2: Vec<f64>,
    inv_std2: Vec<f64>,
    h2: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ff_drop: Vec<f64>,
}

struct Tape {
    rtg_mlp: MlpTape,
    obs_mlp: MlpTape,
    act_mlp: MlpTape,
    embed_drop: Vec<f64>,
    layers: Vec<LayerTape>,
    xhatf: Vec<f64>,
    inv_stdf: Vec<f64>,
    head_mlp: MlpTape,
    /// Predictions, `B·K × n_a`.
    pred: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Shared building blocks
// ---------------------------------------------------------------------------

/// `y = x·Wᵀ + b` over `rows` rows.
fn linear(x: &[f64], w: &Tensor, b: &Tensor, rows: usize) -> Vec<f64> {
    let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
    let mut y = matmul_nt(x, w.data(), rows, in_dim, out_dim);
    add_bias(&mut y, b.data());
    y
}

/// `y += scale·(x·Aᵀ)·Bᵀ`, returning `x·Aᵀ` for the tape.
///
/// Exact-zero contributions are skipped so zero-initialized adapters leave
/// the base activations bit-identical.
fn lora_add(
    y: &mut [f64],
    x: &[f64],
    a: &Tensor,
    b: &Tensor,
    scale: f64,
    rows: usize,
    d: usize,
    r: usize,
) -> Vec<f64> {
    let xa = matmul_nt(x, a.data(), rows, d, r);
    let lo = matmul_nt(&xa, b.data(), rows, r, d);
    for (yi, li) in y.iter_mut().zip(&lo) {
        let v = scale * li;
        if v != 0.0 {
            *yi += v;
        }
    }
    xa
}

fn dropout_mask(len: usize, p: f64, key: StreamKey) -> Vec<f64> {
    use rand::Rng;
    let mut rng = key.rng();
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn apply_mask(x: &mut [f64], mask: &[f64]) {
    if mask.is_empty() {
        return;
    }
    for (v, m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
}

fn mlp_forward(
    params: &ModelParameters,
    prefix: &str,
    depth: usize,
    input: Vec<f64>,
    rows: usize,
) -> (Vec<f64>, MlpTape) {
    let mut tape = MlpTape {
        inputs: Vec::with_capacity(depth),
        preacts: vec![Vec::new(); depth],
    };
    let mut x = input;
    for i in 0..depth {
        let w = params.get(&format!("{prefix}.{i}.w"));
        let b = params.get(&format!("{prefix}.{i}.b"));
        let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
        debug_assert_eq!(x.len(), rows * in_dim);
        tape.inputs.push(x);
        let y = {
            let xin = tape.inputs.last().expect("just pushed");
            let mut y = matmul_nt(xin, w.data(), rows, in_dim, out_dim);
            add_bias(&mut y, b.data());
            y
        };
        if i + 1 < depth {
            x = gelu_map(&y);
            tape.preacts[i] = y;
        } else {
            x = y;
        }
    }
    (x, tape)
}

/// Backward through an MLP. Parameter gradients are recorded only when
/// `want_param_grads`; the input gradient is always propagated.
fn mlp_backward(
    params: &ModelParameters,
    prefix: &str,
    depth: usize,
    tape: &MlpTape,
    dy: Vec<f64>,
    rows: usize,
    want_param_grads: bool,
    grads: &mut BTreeMap<String, Tensor>,
) -> Vec<f64> {
    let mut d = dy;
    for i in (0..depth).rev() {
        let w = params.get(&format!("{prefix}.{i}.w"));
        let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
        let dpre = if i + 1 < depth {
            gelu_backward(&d, &tape.preacts[i])
        } else {
            d
        };
        if want_param_grads {
            let dw = matmul_tn(&dpre, &tape.inputs[i], out_dim, rows, in_dim);
            grad_insert(grads, format!("{prefix}.{i}.w"), &[out_dim, in_dim], dw);
            grad_insert(
                grads,
                format!("{prefix}.{i}.b"),
                &[out_dim],
                column_sums(&dpre, out_dim),
            );
        }
        d = matmul_nn(&dpre, w.data(), rows, out_dim, in_dim);
    }
    d
}

fn grad_insert(grads: &mut BTreeMap<String, Tensor>, name: String, shape: &[usize], data: Vec<f64>) {
    use std::collections::btree_map::Entry;
    match grads.entry(name) {
        Entry::Vacant(e) => {
            e.insert(Tensor::from_vec(shape, data).expect("internal: gradient shape"));
        }
        Entry::Occupied(mut e) => {
            for (acc, v) in e.get_mut().data_mut().iter_mut().zip(&data) {
                *acc += v;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

fn check_inputs(
    cfg: &ModelConfig,
    adapters: Option<&LoraAdapters>,
    batch: &Batch,
) -> Result<()> {
    cfg.validate()?;
    batch.validate()?;
    if batch.k != cfg.k || batch.n_o != cfg.n_o || batch.n_a != cfg.n_a {
        return Err(Error::dim(format!(
            "batch (K = {}, n_o = {}, n_a = {}) does not match model config \
             (K = {}, n_o = {}, n_a = {})",
            batch.k, batch.n_o, batch.n_a, cfg.k, cfg.n_o, cfg.n_a
        )));
    }
    if let Some(&t) = batch.timesteps.iter().find(|&&t| t >= cfg.k) {
        return Err(Error::dim(format!(
            "timestep {t} out of range for context length {}",
            cfg.k
        )));
    }
    if let Some(ad) = adapters {
        if cfg.lora_rank == 0 {
            return Err(Error::dim(
                "adapters supplied but config has lora_rank 0".to_string(),
            ));
        }
        if ad.rank() != cfg.lora_rank || ad.alpha() != cfg.lora_alpha {
            return Err(Error::dim(format!(
                "adapter rank/alpha ({}, {}) disagree with config ({}, {})",
                ad.rank(),
                ad.alpha(),
                cfg.lora_rank,
                cfg.lora_alpha
            )));
        }
    }
    Ok(())
}

fn block_forward(
    cfg: &ModelConfig,
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    batch: &Batch,
    l: usize,
    x: &[f64],
    dropout_active: bool,
    dropout_seed: u64,
) -> (Vec<f64>, LayerTape) {
    let d = cfg.d_model;
    let rows = batch.b * cfg.seq_len();
    let name = |suffix: &str| format!("layer.{l}.{suffix}");

    let (h1, xhat1, inv_std1) = layernorm_forward(
        x,
        params.get(&name("ln1.scale")).data(),
        params.get(&name("ln1.offset")).data(),
        d,
    );

    let mut q = linear(&h1, params.get(&name("attn.wq")), params.get(&name("attn.bq")), rows);
    let key = linear(&h1, params.get(&name("attn.wk")), params.get(&name("attn.bk")), rows);
    let mut v = linear(&h1, params.get(&name("attn.wv")), params.get(&name("attn.bv")), rows);
    let (mut xa_q, mut xa_v) = (Vec::new(), Vec::new());
    if let Some(ad) = adapters {
        let r = ad.rank();
        let scale = ad.scale();
        xa_q = lora_add(
            &mut q,
            &h1,
            ad.get(&format!("lora.{l}.q.a")),
            ad.get(&format!("lora.{l}.q.b")),
            scale,
            rows,
            d,
            r,
        );
        xa_v = lora_add(
            &mut v,
            &h1,
            ad.get(&format!("lora.{l}.v.a")),
            ad.get(&format!("lora.{l}.v.b")),
            scale,
            rows,
            d,
            r,
        );
    }

    let (probs, ctx) = attention_forward(cfg, batch, &q, &key, &v);

    let mut proj = linear(&ctx, params.get(&name("attn.wo")), params.get(&name("attn.bo")), rows);
    let attn_drop = if dropout_active {
        dropout_mask(
            proj.len(),
            cfg.dropout_rate,
            StreamKey::new(dropout_seed)
                .with("dropout")
                .with("attn")
                .with_index(l as u64),
        )
    } else {
        Vec::new()
    };
    apply_mask(&mut proj, &attn_drop);
    let mut x_mid = x.to_vec();
    for (m, p) in x_mid.iter_mut().zip(&proj) {
        *m += p;
    }

    let (h2, xhat2, inv_std2) = layernorm_forward(
        &x_mid,
        params.get(&name("ln2.scale")).data(),
        params.get(&name("ln2.offset")).data(),
        d,
    );
    let ff_pre = linear(&h2, params.get(&name("ff.w1")), params.get(&name("ff.b1")), rows);
    let ff_act = gelu_map(&ff_pre);
    let mut ff_out = linear(&ff_act, params.get(&name("ff.w2")), params.get(&name("ff.b2")), rows);
    let ff_drop = if dropout_active {
        dropout_mask(
            ff_out.len(),
            cfg.dropout_rate,
            StreamKey::new(dropout_seed)
                .with("dropout")
                .with("ff")
                .with_index(l as u64),
        )
    } else {
        Vec::new()
    };
    apply_mask(&mut ff_out, &ff_drop);
    let mut x_out = x_mid;
    for (o, f) in x_out.iter_mut().zip(&ff_out) {
        *o += f;
    }

    let tape = LayerTape {
        xhat1,
        inv_std1,
        h1,
        q,
        key,
        v,
        xa_q,
        xa_v,
        probs,
        ctx,
        attn_drop,
        xhat2,
        inv_std2,
        h2,
        ff_pre,
        ff_act,
        ff_drop,
    };
    (x_out, tape)
}

fn attention_forward(
    cfg: &ModelConfig,
    batch: &Batch,
    q: &[f64],
    key: &[f64],
    v: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (bsz, kpos) = (batch.b, batch.k);
    let s = 3 * kpos;
    let heads = cfg.n_heads;
    let dh = cfg.d_head();
    let d = cfg.d_model;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let mut probs = vec![0.0; bsz * heads * s * s];
    let mut ctx = vec![0.0; bsz * s * d];
    let mut scores: Vec<f64> = Vec::with_capacity(s);
    let mut allowed: Vec<usize> = Vec::with_capacity(s);

    for b in 0..bsz {
        let pmask = &batch.mask[b * kpos..(b + 1) * kpos];
        for h in 0..heads {
            let col = h * dh;
            for i in 0..s {
                let ri = b * s + i;
                scores.clear();
                allowed.clear();
                let qrow = &q[ri * d + col..ri * d + col + dh];
                for j in 0..=i {
                    if !pmask[j / 3] {
                        continue;
                    }
                    let krow = &key[(b * s + j) * d + col..(b * s + j) * d + col + dh];
                    let mut acc = 0.0;
                    for (a, b2) in qrow.iter().zip(krow) {
                        acc += a * b2;
                    }
                    scores.push(acc * inv_sqrt);
                    allowed.push(j);
                }
                if allowed.is_empty() {
                    // A fully padded history: this token's attention output
                    // is defined as zero. Its own prediction is never read.
                    continue;
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - mx).exp();
                    sum += *sc;
                }
                let prow = &mut probs[((b * heads + h) * s + i) * s..((b * heads + h) * s + i + 1) * s];
                let crow = &mut ctx[ri * d + col..ri * d + col + dh];
                for (&j, &e) in allowed.iter().zip(scores.iter()) {
                    let p = e / sum;
                    prow[j] = p;
                    let vrow = &v[(b * s + j) * d + col..(b * s + j) * d + col + dh];
                    for (c, vv) in crow.iter_mut().zip(vrow) {
                        *c += p * vv;
                    }
                }
            }
        }
    }
    (probs, ctx)
}

fn forward_inner(
    cfg: &ModelConfig,
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    batch: &Batch,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<Tape> {
    check_inputs(cfg, adapters, batch)?;
    let d = cfg.d_model;
    let depth = cfg.n_embed_layers;
    let bk = batch.b * batch.k;
    let s = cfg.seq_len();
    let rows = batch.b * s;
    let dropout_active = train_mode && cfg.dropout_rate > 0.0;

    // Channel embeddings (each on B·K rows).
    let (e_rtg, rtg_mlp) = mlp_forward(params, "embed.rtg", depth, batch.rtg.clone(), bk);
    let (e_obs, obs_mlp) = mlp_forward(params, "embed.obs", depth, batch.obs.clone(), bk);
    let (e_act, act_mlp) = mlp_forward(params, "embed.act", depth, batch.act.clone(), bk);

    // Interleave and add the shared timestep embedding.
    let time = params.get("embed.time");
    let mut x = vec![0.0; rows * d];
    for b in 0..batch.b {
        for k in 0..batch.k {
            let src = (b * batch.k + k) * d;
            let trow = &time.data()[batch.timesteps[b * batch.k + k] * d..][..d];
            for (c, channel) in [&e_rtg, &e_obs, &e_act].into_iter().enumerate() {
                let dst = (b * s + 3 * k + c) * d;
                for j in 0..d {
                    x[dst + j] = channel[src + j] + trow[j];
                }
            }
        }
    }
    let embed_drop = if dropout_active {
        dropout_mask(
            x.len(),
            cfg.dropout_rate,
            StreamKey::new(dropout_seed).with("dropout").with("embed"),
        )
    } else {
        Vec::new()
    };
    apply_mask(&mut x, &embed_drop);

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (x_out, tape) =
            block_forward(cfg, params, adapters, batch, l, &x, dropout_active, dropout_seed);
        layers.push(tape);
        x = x_out;
    }

    let (hf, xhatf, inv_stdf) = layernorm_forward(
        &x,
        params.get("ln_f.scale").data(),
        params.get("ln_f.offset").data(),
        d,
    );

    // Read the observation-token rows and run the action head.
    let mut obs_rows = vec![0.0; bk * d];
    for b in 0..batch.b {
        for k in 0..batch.k {
            let src = (b * s + 3 * k + 1) * d;
            let dst = (b * batch.k + k) * d;
            obs_rows[dst..dst + d].copy_from_slice(&hf[src..src + d]);
        }
    }
    let (pred, head_mlp) = mlp_forward(params, "head", depth, obs_rows, bk);

    Ok(Tape {
        rtg_mlp,
        obs_mlp,
        act_mlp,
        embed_drop,
        layers,
        xhatf,
        inv_stdf,
        head_mlp,
        pred,
    })
}

/// Predict actions for every position of every window; shape `[B, K, n_a]`.
///
/// Dropout fires only in `train_mode` (and only if the config's rate is
/// nonzero); it is a pure function of `dropout_seed`.
pub fn forward(
    cfg: &ModelConfig,
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    batch: &Batch,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<Tensor> {
    let tape = forward_inner(cfg, params, adapters, batch, train_mode, dropout_seed)?;
    Tensor::from_vec(&[batch.b, batch.k, batch.n_a], tape.pred)
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean squared error between predictions and batch actions over unmasked
/// positions, averaged over the unmasked scalar count.
pub fn loss(pred: &Tensor, batch: &Batch) -> Result<f64> {
    batch.validate()?;
    if pred.shape() != [batch.b, batch.k, batch.n_a] {
        return Err(Error::dim(format!(
            "prediction shape {:?} does not match batch [{}, {}, {}]",
            pred.shape(),
            batch.b,
            batch.k,
            batch.n_a
        )));
    }
    let count = batch.unmasked_count();
    if count == 0 {
        return Err(Error::invalid("loss over an all-masked batch is undefined"));
    }
    let n_a = batch.n_a;
    let mut sum = 0.0;
    for (pos, &m) in batch.mask.iter().enumerate() {
        if !m {
            continue;
        }
        for j in 0..n_a {
            let e = pred.data()[pos * n_a + j] - batch.act[pos * n_a + j];
            sum += e * e;
        }
    }
    Ok(sum / count as f64)
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn block_backward(
    cfg: &ModelConfig,
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    batch: &Batch,
    l: usize,
    tape: &LayerTape,
    dx_out: Vec<f64>,
    want_base: bool,
    grads: &mut BTreeMap<String, Tensor>,
) -> Vec<f64> {
    let d = cfg.d_model;
    let f = cfg.d_ff;
    let rows = batch.b * cfg.seq_len();
    let name = |suffix: &str| format!("layer.{l}.{suffix}");

    // Feedforward branch: x_out = x_mid + dropout(W2·gelu(W1·h2 + b1) + b2).
    let mut dff_out = dx_out.clone();
    apply_mask(&mut dff_out, &tape.ff_drop);
    let w2 = params.get(&name("ff.w2"));
    if want_base {
        grad_insert(
            grads,
            name("ff.w2"),
            &[d, f],
            matmul_tn(&dff_out, &tape.ff_act, d, rows, f),
        );
        grad_insert(grads, name("ff.b2"), &[d], column_sums(&dff_out, d));
    }
    let dff_act = matmul_nn(&dff_out, w2.data(), rows, d, f);
    let dff_pre = gelu_backward(&dff_act, &tape.ff_pre);
    let w1 = params.get(&name("ff.w1"));
    if want_base {
        grad_insert(
            grads,
            name("ff.w1"),
            &[f, d],
            matmul_tn(&dff_pre, &tape.h2, f, rows, d),
        );
        grad_insert(grads, name("ff.b1"), &[f], column_sums(&dff_pre, f));
    }
    let dh2 = matmul_nn(&dff_pre, w1.data(), rows, f, d);
    let (dx_mid_ln, dscale2, doffset2) = layernorm_backward(
        &dh2,
        &tape.xhat2,
        &tape.inv_std2,
        params.get(&name("ln2.scale")).data(),
        d,
    );
    if want_base {
        grad_insert(grads, name("ln2.scale"), &[d], dscale2);
        grad_insert(grads, name("ln2.offset"), &[d], doffset2);
    }
    let mut dx_mid = dx_out;
    for (m, g) in dx_mid.iter_mut().zip(&dx_mid_ln) {
        *m += g;
    }

    // Attention branch: x_mid = x_in + dropout(Wo·ctx + bo).
    let mut dproj = dx_mid.clone();
    apply_mask(&mut dproj, &tape.attn_drop);
    let wo = params.get(&name("attn.wo"));
    if want_base {
        grad_insert(
            grads,
            name("attn.wo"),
            &[d, d],
            matmul_tn(&dproj, &tape.ctx, d, rows, d),
        );
        grad_insert(grads, name("attn.bo"), &[d], column_sums(&dproj, d));
    }
    let dctx = matmul_nn(&dproj, wo.data(), rows, d, d);

    let (dq, dkey, dv) = attention_backward(cfg, batch, tape, &dctx);

    // Projections back to the normalized input h1.
    let mut dh1 = matmul_nn(&dq, params.get(&name("attn.wq")).data(), rows, d, d);
    let dh1_k = matmul_nn(&dkey, params.get(&name("attn.wk")).data(), rows, d, d);
    let dh1_v = matmul_nn(&dv, params.get(&name("attn.wv")).data(), rows, d, d);
    for ((a, b), c) in dh1.iter_mut().zip(&dh1_k).zip(&dh1_v) {
        *a += b + c;
    }
    if want_base {
        grad_insert(grads, name("attn.wq"), &[d, d], matmul_tn(&dq, &tape.h1, d, rows, d));
        grad_insert(grads, name("attn.bq"), &[d], column_sums(&dq, d));
        grad_insert(grads, name("attn.wk"), &[d, d], matmul_tn(&dkey, &tape.h1, d, rows, d));
        grad_insert(grads, name("attn.bk"), &[d], column_sums(&dkey, d));
        grad_insert(grads, name("attn.wv"), &[d, d], matmul_tn(&dv, &tape.h1, d, rows, d));
        grad_insert(grads, name("attn.bv"), &[d], column_sums(&dv, d));
    }
    if let Some(ad) = adapters {
        let r = ad.rank();
        let scale = ad.scale();
        for (proj, dproj_t, xa) in [("q", &dq, &tape.xa_q), ("v", &dv, &tape.xa_v)] {
            let a = ad.get(&format!("lora.{l}.{proj}.a"));
            let b = ad.get(&format!("lora.{l}.{proj}.b"));
            // dB = scale · dYᵀ·xa, dxa = scale · dY·B, dA = dxaᵀ·h1,
            // dh1 += dxa·A.
            let mut db = matmul_tn(dproj_t, xa, d, rows, r);
            for v in db.iter_mut() {
                *v *= scale;
            }
            let mut dxa = matmul_nn(dproj_t, b.data(), rows, d, r);
            for v in dxa.iter_mut() {
                *v *= scale;
            }
            let da = matmul_tn(&dxa, &tape.h1, r, rows, d);
            grad_insert(grads, format!("lora.{l}.{proj}.b"), &[d, r], db);
            grad_insert(grads, format!("lora.{l}.{proj}.a"), &[r, d], da);
            let dh1_lora = matmul_nn(&dxa, a.data(), rows, r, d);
            for (acc, g) in dh1.iter_mut().zip(&dh1_lora) {
                *acc += g;
            }
        }
    }

    let (dx_in_ln, dscale1, doffset1) = layernorm_backward(
        &dh1,
        &tape.xhat1,
        &tape.inv_std1,
        params.get(&name("ln1.scale")).data(),
        d,
    );
    if want_base {
        grad_insert(grads, name("ln1.scale"), &[d], dscale1);
        grad_insert(grads, name("ln1.offset"), &[d], doffset1);
    }
    let mut dx_in = dx_mid;
    for (m, g) in dx_in.iter_mut().zip(&dx_in_ln) {
        *m += g;
    }
    dx_in
}

fn attention_backward(
    cfg: &ModelConfig,
    batch: &Batch,
    tape: &LayerTape,
    dctx: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (bsz, kpos) = (batch.b, batch.k);
    let s = 3 * kpos;
    let heads = cfg.n_heads;
    let dh = cfg.d_head();
    let d = cfg.d_model;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let mut dq = vec![0.0; bsz * s * d];
    let mut dkey = vec![0.0; bsz * s * d];
    let mut dv = vec![0.0; bsz * s * d];
    let mut dp: Vec<f64> = vec![0.0; s];

    for b in 0..bsz {
        for h in 0..heads {
            let col = h * dh;
            for i in 0..s {
                let ri = b * s + i;
                let prow = &tape.probs[((b * heads + h) * s + i) * s..((b * heads + h) * s + i + 1) * s];
                let dctx_row = &dctx[ri * d + col..ri * d + col + dh];
                // dp_j and the softmax row reduction; p = 0 marks disallowed
                // (or fully underflowed) entries, whose gradient is exactly 0.
                let mut rowdot = 0.0;
                for j in 0..=i {
                    let p = prow[j];
                    if p == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let rj = b * s + j;
                    let vrow = &tape.v[rj * d + col..rj * d + col + dh];
                    let mut acc = 0.0;
                    for (a, b2) in dctx_row.iter().zip(vrow) {
                        acc += a * b2;
                    }
                    dp[j] = acc;
                    rowdot += p * acc;
                    let dvrow = &mut dv[rj * d + col..rj * d + col + dh];
                    for (dst, g) in dvrow.iter_mut().zip(dctx_row) {
                        *dst += p * g;
                    }
                }
                let qrow_start = ri * d + col;
                for j in 0..=i {
                    let p = prow[j];
                    if p == 0.0 {
                        continue;
                    }
                    let ds = p * (dp[j] - rowdot) * inv_sqrt;
                    let rj = b * s + j;
                    let krow = &tape.key[rj * d + col..rj * d + col + dh];
                    for (idx, kv) in krow.iter().enumerate() {
                        dq[qrow_start + idx] += ds * kv;
                    }
                    let qrow = &tape.q[qrow_start..qrow_start + dh];
                    let dkrow = &mut dkey[rj * d + col..rj * d + col + dh];
                    for (dst, qv) in dkrow.iter_mut().zip(qrow) {
                        *dst += ds * qv;
                    }
                }
            }
        }
    }
    (dq, dkey, dv)
}

/// Exact reverse-mode gradients of the masked MSE loss.
///
/// `trainable` selects which tensors receive entries: `All` covers every
/// base tensor (plus adapters, when attached and not base-frozen);
/// `AdaptersOnly` covers exactly the adapter tensors and requires adapters.
/// Dropout participates when `train_mode` is set, exactly as in the forward
/// pass with the same `dropout_seed`.
pub fn loss_and_grad(
    cfg: &ModelConfig,
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    batch: &Batch,
    trainable: TrainableSet,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<GradResult> {
    let want_base = match trainable {
        TrainableSet::All => {
            if let Some(ad) = adapters {
                if ad.frozen_base() {
                    return Err(Error::invalid(
                        "trainable set `all` conflicts with adapters whose base is frozen; \
                         train adapters_only or unfreeze the base",
                    ));
                }
            }
            true
        }
        TrainableSet::AdaptersOnly => {
            if adapters.is_none() {
                return Err(Error::invalid(
                    "trainable set `adapters_only` requires attached adapters",
                ));
            }
            false
        }
    };

    let tape = forward_inner(cfg, params, adapters, batch, train_mode, dropout_seed)?;
    let pred = Tensor::from_vec(&[batch.b, batch.k, batch.n_a], tape.pred.clone())?;
    let loss_value = loss(&pred, batch)?;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("training loss".to_string()));
    }

    let d = cfg.d_model;
    let depth = cfg.n_embed_layers;
    let bk = batch.b * batch.k;
    let s = cfg.seq_len();
    let rows = batch.b * s;
    let n_a = batch.n_a;
    let count = batch.unmasked_count() as f64;

    // dL/dpred: 2·(pred − act)/count on unmasked positions, 0 elsewhere.
    let mut dpred = vec![0.0; bk * n_a];
    for (pos, &m) in batch.mask.iter().enumerate() {
        if !m {
            continue;
        }
        for j in 0..n_a {
            let idx = pos * n_a + j;
            dpred[idx] = 2.0 * (tape.pred[idx] - batch.act[idx]) / count;
        }
    }

    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();

    // Head MLP (parameter gradients only for the full trainable set, but the
    // input gradient always flows back to reach the attention stack).
    let d_obs_rows = mlp_backward(
        params,
        "head",
        depth,
        &tape.head_mlp,
        dpred,
        bk,
        want_base,
        &mut grads,
    );

    // Scatter into the full sequence and run the final LN backward.
    let mut dhf = vec![0.0; rows * d];
    for b in 0..batch.b {
        for k in 0..batch.k {
            let src = (b * batch.k + k) * d;
            let dst = (b * s + 3 * k + 1) * d;
            dhf[dst..dst + d].copy_from_slice(&d_obs_rows[src..src + d]);
        }
    }
    let (mut dx, dscale_f, doffset_f) = layernorm_backward(
        &dhf,
        &tape.xhatf,
        &tape.inv_stdf,
        params.get("ln_f.scale").data(),
        d,
    );
    if want_base {
        grad_insert(&mut grads, "ln_f.scale".to_string(), &[d], dscale_f);
        grad_insert(&mut grads, "ln_f.offset".to_string(), &[d], doffset_f);
    }

    for l in (0..cfg.n_layers).rev() {
        dx = block_backward(
            cfg,
            params,
            adapters,
            batch,
            l,
            &tape.layers[l],
            dx,
            want_base,
            &mut grads,
        );
    }

    if want_base {
        // Embedding dropout, then split the sequence gradient back into the
        // three channels and the shared timestep table.
        apply_mask(&mut dx, &tape.embed_drop);
        let mut d_rtg = vec![0.0; bk * d];
        let mut d_obs = vec![0.0; bk * d];
        let mut d_act = vec![0.0; bk * d];
        let mut d_time = vec![0.0; cfg.k * d];
        for b in 0..batch.b {
            for k in 0..batch.k {
                let dst = (b * batch.k + k) * d;
                let trow = batch.timesteps[b * batch.k + k] * d;
                for (c, channel) in [&mut d_rtg, &mut d_obs, &mut d_act].into_iter().enumerate() {
                    let src = (b * s + 3 * k + c) * d;
                    for j in 0..d {
                        let g = dx[src + j];
                        channel[dst + j] = g;
                        d_time[trow + j] += g;
                    }
                }
            }
        }
        grad_insert(&mut grads, "embed.time".to_string(), &[cfg.k, d], d_time);
        mlp_backward(params, "embed.rtg", depth, &tape.rtg_mlp, d_rtg, bk, true, &mut grads);
        mlp_backward(params, "embed.obs", depth, &tape.obs_mlp, d_obs, bk, true, &mut grads);
        mlp_backward(params, "embed.act", depth, &tape.act_mlp, d_act, bk, true, &mut grads);
    }

    // Adapters-only runs recorded lora.* gradients inside the blocks; when
    // the full set trains with adapters attached, both are already present.
    if !want_base {
        debug_assert!(grads.keys().all(|k| k.starts_with("lora.")));
    }

    for (gname, g) in &grads {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {gname}")));
        }
    }

    Ok(GradResult {
        loss: loss_value,
        pred,
        grads,
    })
}
