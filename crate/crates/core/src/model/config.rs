//! Model configuration, the named parameter collection, and LoRA adapters.
//!
//! Every tensor shape is derivable from [`ModelConfig`] alone through
//! [`shape_table`] / [`adapter_shape_table`]; initialization, checkpointing,
//! and the optimizer all validate against those tables, so a parameter set
//! can never silently drift from its configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::rng::{self, StreamKey};
use crate::{Error, Result};

/// Weight initializer scale (the convention of the GPT-2 model family).
pub const INIT_STD: f64 = 0.02;

/// Architecture and adapter hyperparameters.
///
/// `d_ff` is stored explicitly but pinned to `4·d_model`; `k` is the context
/// length (number of (return, observation, action) positions per window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_o: usize,
    pub n_a: usize,
    /// Depth of the three input-embedding MLPs and of the action head.
    pub n_embed_layers: usize,
    pub dropout_rate: f64,
    /// LoRA rank; 0 means the model carries no adapters.
    pub lora_rank: usize,
    /// LoRA scaling numerator (effective scale is `lora_alpha / lora_rank`).
    pub lora_alpha: f64,
    /// Default initialization seed carried with the architecture.
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, 128 hidden, context 20.
    pub fn desk(n_o: usize, n_a: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            k: 20,
            n_o,
            n_a,
            n_embed_layers: 3,
            dropout_rate: 0.1,
            lora_rank: 4,
            lora_alpha: 8.0,
            seed: 0,
        }
    }

    /// Reference-scale configuration (12 layers, 12 heads, 768 hidden,
    /// LoRA rank 32). Constructible, not intended for desk training.
    pub fn reference_scale(n_o: usize, n_a: usize) -> Self {
        ModelConfig {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_ff: 3072,
            k: 20,
            n_o,
            n_a,
            n_embed_layers: 3,
            dropout_rate: 0.1,
            lora_rank: 32,
            lora_alpha: 64.0,
            seed: 0,
        }
    }

    /// Tiny configuration used by gradient checks and fast tests:
    /// 1 layer, 2 heads, 8 hidden, context 3.
    pub fn tiny(n_o: usize, n_a: usize) -> Self {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 32,
            k: 3,
            n_o,
            n_a,
            n_embed_layers: 2,
            dropout_rate: 0.0,
            lora_rank: 2,
            lora_alpha: 4.0,
            seed: 0,
        }
    }

    /// Check the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 {
            return Err(Error::invalid(
                "model config needs n_layers, n_heads, d_model >= 1",
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff != 4 * self.d_model {
            return Err(Error::invalid(format!(
                "d_ff must equal 4*d_model, got {} vs 4*{}",
                self.d_ff, self.d_model
            )));
        }
        if self.k == 0 {
            return Err(Error::invalid("context length K must be at least 1"));
        }
        if self.n_o == 0 || self.n_a == 0 {
            return Err(Error::invalid("n_o and n_a must be at least 1"));
        }
        if self.n_embed_layers == 0 {
            return Err(Error::invalid("n_embed_layers must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.lora_rank > 0 && self.lora_alpha <= 0.0 {
            return Err(Error::invalid("lora_alpha must be positive when rank > 0"));
        }
        Ok(())
    }

    /// Head width `d_model / n_heads`.
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Token-sequence length of one window: three tokens per position.
    pub fn seq_len(&self) -> usize {
        3 * self.k
    }

    /// Effective LoRA scale `alpha / rank` (0 when rank = 0).
    pub fn lora_scale(&self) -> f64 {
        if self.lora_rank == 0 {
            0.0
        } else {
            self.lora_alpha / self.lora_rank as f64
        }
    }
}

/// Name/shape table of every base parameter tensor, in name order.
pub fn shape_table(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let d = cfg.d_model;
    let mut table = BTreeMap::new();
    // Input-embedding MLPs: raw channel width -> d, then d -> d.
    for (channel, raw) in [("rtg", 1), ("obs", cfg.n_o), ("act", cfg.n_a)] {
        for i in 0..cfg.n_embed_layers {
            let in_dim = if i == 0 { raw } else { d };
            table.insert(format!("embed.{channel}.{i}.w"), vec![d, in_dim]);
            table.insert(format!("embed.{channel}.{i}.b"), vec![d]);
        }
    }
    // Learned relative-timestep table, one row per window position.
    table.insert("embed.time".to_string(), vec![cfg.k, d]);
    for l in 0..cfg.n_layers {
        table.insert(format!("layer.{l}.ln1.scale"), vec![d]);
        table.insert(format!("layer.{l}.ln1.offset"), vec![d]);
        for proj in ["wq", "wk", "wv", "wo"] {
            table.insert(format!("layer.{l}.attn.{proj}"), vec![d, d]);
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            table.insert(format!("layer.{l}.attn.{bias}"), vec![d]);
        }
        table.insert(format!("layer.{l}.ln2.scale"), vec![d]);
        table.insert(format!("layer.{l}.ln2.offset"), vec![d]);
        table.insert(format!("layer.{l}.ff.w1"), vec![cfg.d_ff, d]);
        table.insert(format!("layer.{l}.ff.b1"), vec![cfg.d_ff]);
        table.insert(format!("layer.{l}.ff.w2"), vec![d, cfg.d_ff]);
        table.insert(format!("layer.{l}.ff.b2"), vec![d]);
    }
    table.insert("ln_f.scale".to_string(), vec![d]);
    table.insert("ln_f.offset".to_string(), vec![d]);
    // Action head MLP: d -> ... -> d -> n_a.
    for i in 0..cfg.n_embed_layers {
        let out_dim = if i + 1 == cfg.n_embed_layers { cfg.n_a } else { d };
        table.insert(format!("head.{i}.w"), vec![out_dim, d]);
        table.insert(format!("head.{i}.b"), vec![out_dim]);
    }
    table
}

/// Name/shape table of the adapter tensors (rank-decomposition pairs on the
/// query and value projections of every layer).
pub fn adapter_shape_table(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let d = cfg.d_model;
    let r = cfg.lora_rank;
    let mut table = BTreeMap::new();
    for l in 0..cfg.n_layers {
        for proj in ["q", "v"] {
            table.insert(format!("lora.{l}.{proj}.a"), vec![r, d]);
            table.insert(format!("lora.{l}.{proj}.b"), vec![d, r]);
        }
    }
    table
}

/// The named base-parameter collection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParameters {
    /// Wrap an existing collection, validating names and shapes against the
    /// configuration's shape table.
    pub fn from_tensors(cfg: &ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let table = shape_table(cfg);
        validate_collection("parameters", &table, &tensors)?;
        Ok(ModelParameters { tensors })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("internal: missing parameter tensor {name}"))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    /// Error (naming the tensor) if any entry is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter tensor {name}")));
            }
        }
        Ok(())
    }

    /// Bit-exact equality of every tensor.
    pub fn bits_eq(&self, other: &ModelParameters) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((an, at), (bn, bt))| an == bn && at.bits_eq(bt))
    }
}

/// Low-rank adapter pairs for the attention query/value projections.
///
/// `b` factors start at zero so a freshly attached adapter is the identity;
/// `frozen_base` records that the base weights are not to be updated while
/// these adapters train.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapters {
    rank: usize,
    alpha: f64,
    frozen_base: bool,
    tensors: BTreeMap<String, Tensor>,
}

impl LoraAdapters {
    pub fn from_tensors(cfg: &ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        if cfg.lora_rank == 0 {
            return Err(Error::invalid("config has lora_rank 0: no adapters exist"));
        }
        let table = adapter_shape_table(cfg);
        validate_collection("adapters", &table, &tensors)?;
        Ok(LoraAdapters {
            rank: cfg.lora_rank,
            alpha: cfg.lora_alpha,
            frozen_base: true,
            tensors,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Effective scale `alpha / rank`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn frozen_base(&self) -> bool {
        self.frozen_base
    }

    pub fn set_frozen_base(&mut self, frozen: bool) {
        self.frozen_base = frozen;
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("internal: missing adapter tensor {name}"))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("adapter tensor {name}")));
            }
        }
        Ok(())
    }

    pub fn bits_eq(&self, other: &LoraAdapters) -> bool {
        self.rank == other.rank
            && self.alpha == other.alpha
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((an, at), (bn, bt))| an == bn && at.bits_eq(bt))
    }
}

fn validate_collection(
    what: &str,
    table: &BTreeMap<String, Vec<usize>>,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<()> {
    for (name, shape) in table {
        match tensors.get(name) {
            None => {
                return Err(Error::dim(format!("{what}: missing tensor {name}")));
            }
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::dim(format!(
                    "{what}: tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            Some(_) => {}
        }
    }
    for name in tensors.keys() {
        if !table.contains_key(name) {
            return Err(Error::dim(format!("{what}: unexpected tensor {name}")));
        }
    }
    Ok(())
}

/// Initialize base parameters: weights ~ N(0, 0.02²), biases and
/// normalization offsets 0, normalization scales 1. Deterministic given
/// `seed`; each tensor draws from its own named substream, so the layout of
/// unrelated tensors never shifts another tensor's values.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    cfg.validate()?;
    let mut tensors = BTreeMap::new();
    for (name, shape) in shape_table(cfg) {
        // LN scales start at one; every 1-D tensor besides those (biases and
        // LN offsets) starts at exactly zero; matrices are N(0, INIT_STD²).
        let t = if name.ends_with(".scale") {
            Tensor::full(&shape, 1.0)
        } else if shape.len() == 1 {
            Tensor::zeros(&shape)
        } else {
            gaussian_tensor(&shape, INIT_STD, StreamKey::new(seed).with("init").with(&name))
        };
        tensors.insert(name, t);
    }
    Ok(ModelParameters { tensors })
}

/// Initialize adapters: `a` factors ~ N(0, 0.02²), `b` factors exactly zero
/// (identity at attach time). Errors when the config has `lora_rank = 0`.
pub fn init_adapters(cfg: &ModelConfig, seed: u64) -> Result<LoraAdapters> {
    cfg.validate()?;
    if cfg.lora_rank == 0 {
        return Err(Error::invalid(
            "cannot initialize adapters: config has lora_rank 0",
        ));
    }
    let mut tensors = BTreeMap::new();
    for (name, shape) in adapter_shape_table(cfg) {
        let t = if name.ends_with(".b") {
            Tensor::zeros(&shape)
        } else {
            gaussian_tensor(
                &shape,
                INIT_STD,
                StreamKey::new(seed).with("lora-init").with(&name),
            )
        };
        tensors.insert(name, t);
    }
    Ok(LoraAdapters {
        rank: cfg.lora_rank,
        alpha: cfg.lora_alpha,
        frozen_base: true,
        tensors,
    })
}

fn gaussian_tensor(shape: &[usize], std: f64, key: StreamKey) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let mut rng = key.rng();
    rng::fill_gaussian(&mut rng, std, t.data_mut());
    t
}

/// Merge adapters into the base weights: `W ← W + (α/r)·B·A` on the query
/// and value projections. Forward on the merged parameters equals the
/// adapter forward.
pub fn lora_merge(
    cfg: &ModelConfig,
    params: &ModelParameters,
    adapters: &LoraAdapters,
) -> Result<ModelParameters> {
    cfg.validate()?;
    if adapters.rank != cfg.lora_rank || adapters.alpha != cfg.lora_alpha {
        return Err(Error::dim(format!(
            "adapter rank/alpha ({}, {}) disagree with config ({}, {})",
            adapters.rank, adapters.alpha, cfg.lora_rank, cfg.lora_alpha
        )));
    }
    let table = adapter_shape_table(cfg);
    validate_collection("adapters", &table, &adapters.tensors)?;
    let mut merged = params.clone();
    let d = cfg.d_model;
    let r = cfg.lora_rank;
    let scale = cfg.lora_scale();
    for l in 0..cfg.n_layers {
        for (proj, weight) in [("q", "wq"), ("v", "wv")] {
            let a = adapters.get(&format!("lora.{l}.{proj}.a"));
            let b = adapters.get(&format!("lora.{l}.{proj}.b"));
            let wname = format!("layer.{l}.attn.{weight}");
            let w = merged
                .tensors
                .get_mut(&wname)
                .unwrap_or_else(|| panic!("internal: missing {wname}"));
            // ΔW = scale · B·A, with B: d×r, A: r×d.
            let delta = super::tensor::matmul_nn(b.data(), a.data(), d, r, d);
            for (wij, dij) in w.data_mut().iter_mut().zip(&delta) {
                let v = scale * dij;
                // Skipping exact zeros keeps the merge bit-exact for
                // zero-initialized adapters (avoids -0.0 + 0.0 flips).
                if v != 0.0 {
                    *wij += v;
                }
            }
        }
    }
    Ok(merged)
}
