//! Behavior-cloning baseline: a plain MLP regressing observation → action.
//!
//! Trains with the same optimizer and logging as the transformer and rolls
//! out under the same evaluation harness, so the only thing it lacks is
//! return conditioning — by construction its rollouts cannot react to the
//! target return.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::env::Policy;
use crate::error::{Error, Result};
use crate::model::optim::adamw_update;
use crate::model::tensor::{
    add_bias, column_sums, gelu_backward, gelu_map, matmul_nn, matmul_nt, matmul_tn,
};
use crate::model::{AdamWHyper, Tensor, TrainLogRow};
use crate::rng::{self, StreamKey};

/// Settings for a behavior-cloning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    /// Width of the three hidden layers.
    pub d_model: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hyper: AdamWHyper,
}

impl BcConfig {
    pub fn new(d_model: usize, epochs: usize, seed: u64) -> Self {
        BcConfig {
            d_model,
            epochs,
            batch_size: 64,
            seed,
            hyper: AdamWHyper::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::invalid("BC hidden width must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.hyper.validate()
    }
}

/// The layer names, in forward order. Weights are `[fan_in, fan_out]` (the
/// model computes `x · W + b`).
const BC_LAYERS: [(&str, &str); 4] = [("w1", "b1"), ("w2", "b2"), ("w3", "b3"), ("w4", "b4")];

/// A three-hidden-layer GELU MLP `n_o → d → d → d → n_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct BcModel {
    pub n_o: usize,
    pub n_a: usize,
    pub d_model: usize,
    tensors: BTreeMap<String, Tensor>,
}

impl BcModel {
    /// Initialize with zero biases and `N(0, 1/fan_in)` weights.
    pub fn init(n_o: usize, n_a: usize, d_model: usize, seed: u64) -> Result<Self> {
        if n_o == 0 || n_a == 0 || d_model == 0 {
            return Err(Error::invalid("BC model dimensions must be at least 1"));
        }
        let mut tensors = BTreeMap::new();
        for (i, (w, b)) in BC_LAYERS.iter().enumerate() {
            let (fan_in, fan_out) = match i {
                0 => (n_o, d_model),
                3 => (d_model, n_a),
                _ => (d_model, d_model),
            };
            let mut wt = Tensor::zeros(&[fan_in, fan_out]);
            let std = (1.0 / fan_in as f64).sqrt();
            let mut stream = StreamKey::new(seed).with("bc-init").with(w).rng();
            rng::fill_gaussian(&mut stream, std, wt.data_mut());
            tensors.insert((*w).to_string(), wt);
            tensors.insert((*b).to_string(), Tensor::zeros(&[fan_out]));
        }
        Ok(BcModel {
            n_o,
            n_a,
            d_model,
            tensors,
        })
    }

    fn weight(&self, name: &str) -> &Tensor {
        self.tensors.get(name).expect("all BC tensors installed at init")
    }

    /// Forward the batch `x` (`[b, n_o]` row-major), keeping pre-activations
    /// and activations for the backward pass.
    fn forward_tape(&self, x: &[f64], b: usize) -> BcTape {
        let d = self.d_model;
        let mut pre = Vec::with_capacity(3);
        let mut act = Vec::with_capacity(3);
        let mut h = x.to_vec();
        let mut width = self.n_o;
        for (w, bias) in BC_LAYERS.iter().take(3) {
            let mut z = matmul_nn(&h, self.weight(w).data(), b, width, d);
            add_bias(&mut z, self.weight(bias).data());
            h = gelu_map(&z);
            pre.push(z);
            act.push(h.clone());
            width = d;
        }
        let mut y = matmul_nn(&h, self.weight("w4").data(), b, d, self.n_a);
        add_bias(&mut y, self.weight("b4").data());
        BcTape { pre, act, y }
    }

    /// Predicted actions for a batch, `[b, n_a]` row-major.
    pub fn forward(&self, x: &[f64], b: usize) -> Result<Vec<f64>> {
        if x.len() != b * self.n_o {
            return Err(Error::dim(format!(
                "BC forward: input length {} != {} rows × n_o {}",
                x.len(),
                b,
                self.n_o
            )));
        }
        Ok(self.forward_tape(x, b).y)
    }

    /// Mean squared error against targets plus the full gradient set.
    fn loss_and_grad(
        &self,
        x: &[f64],
        targets: &[f64],
        b: usize,
    ) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let (n_o, n_a, d) = (self.n_o, self.n_a, self.d_model);
        let tape = self.forward_tape(x, b);
        let count = (b * n_a) as f64;
        let mut loss = 0.0;
        let mut dy = vec![0.0; b * n_a];
        for i in 0..b * n_a {
            let e = tape.y[i] - targets[i];
            loss += e * e / count;
            dy[i] = 2.0 * e / count;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("behavior-cloning loss".to_string()));
        }

        let mut grads = BTreeMap::new();
        // Output layer: y = h3·W4 + b4.
        let dw4 = matmul_tn(&tape.act[2], &dy, d, b, n_a);
        grads.insert("w4".to_string(), Tensor::from_vec(&[d, n_a], dw4)?);
        grads.insert(
            "b4".to_string(),
            Tensor::from_vec(&[n_a], column_sums(&dy, n_a))?,
        );
        let mut dh = matmul_nt(&dy, self.weight("w4").data(), b, n_a, d);

        // Hidden layers 3 → 1.
        for i in (0..3).rev() {
            let dz = gelu_backward(&dh, &tape.pre[i]);
            let (input, fan_in): (&[f64], usize) = if i == 0 {
                (x, n_o)
            } else {
                (&tape.act[i - 1], d)
            };
            let (w, bias) = BC_LAYERS[i];
            let dw = matmul_tn(input, &dz, fan_in, b, d);
            grads.insert(w.to_string(), Tensor::from_vec(&[fan_in, d], dw)?);
            grads.insert(
                bias.to_string(),
                Tensor::from_vec(&[d], column_sums(&dz, d))?,
            );
            if i > 0 {
                dh = matmul_nt(&dz, self.weight(w).data(), b, d, d);
            }
        }
        Ok((loss, grads))
    }

    /// Action for a single observation.
    pub fn act(&self, obs: &DVector<f64>) -> Result<DVector<f64>> {
        if obs.len() != self.n_o {
            return Err(Error::dim(format!(
                "BC act: observation length {} != n_o {}",
                obs.len(),
                self.n_o
            )));
        }
        let y = self.forward(obs.as_slice(), 1)?;
        Ok(DVector::from_vec(y))
    }

    /// Mean squared error of the model on a set of (obs, action) pairs.
    pub fn mse(&self, pairs: &BcPairs) -> Result<f64> {
        let b = pairs.len();
        let y = self.forward(&pairs.x, b)?;
        let count = (b * self.n_a) as f64;
        Ok(y.iter()
            .zip(&pairs.t)
            .map(|(a, b)| (a - b) * (a - b) / count)
            .sum())
    }
}

struct BcTape {
    /// Pre-activations z1..z3, each `[b, d]`.
    pre: Vec<Vec<f64>>,
    /// Activations h1..h3, each `[b, d]`.
    act: Vec<Vec<f64>>,
    /// Output `[b, n_a]`.
    y: Vec<f64>,
}

/// Flattened supervised pairs: `x` is `[n, n_o]`, `t` is `[n, n_a]`.
pub struct BcPairs {
    pub n_o: usize,
    pub n_a: usize,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
}

impl BcPairs {
    pub fn len(&self) -> usize {
        self.x.len() / self.n_o
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Collect every (observation, action) pair of every trajectory.
    pub fn from_trajectories(demos: &[Trajectory]) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::invalid("behavior cloning needs at least one trajectory"))?;
        let n_o = first.obs[0].len();
        let n_a = first.act[0].len();
        let mut x = Vec::new();
        let mut t = Vec::new();
        for traj in demos {
            if traj.obs[0].len() != n_o || traj.act[0].len() != n_a {
                return Err(Error::dim(format!(
                    "trajectory for task {} has mismatched dimensions",
                    traj.task_id
                )));
            }
            for (o, a) in traj.obs.iter().zip(&traj.act) {
                x.extend_from_slice(o.as_slice());
                t.extend_from_slice(a.as_slice());
            }
        }
        Ok(BcPairs { n_o, n_a, x, t })
    }

    fn gather(&self, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(rows.len() * self.n_o);
        let mut t = Vec::with_capacity(rows.len() * self.n_a);
        for &r in rows {
            x.extend_from_slice(&self.x[r * self.n_o..(r + 1) * self.n_o]);
            t.extend_from_slice(&self.t[r * self.n_a..(r + 1) * self.n_a]);
        }
        (x, t)
    }
}

/// Result of a behavior-cloning run.
#[derive(Debug, Clone)]
pub struct BcOutcome {
    pub model: BcModel,
    pub log: Vec<TrainLogRow>,
    pub aborted: Option<String>,
    pub steps_run: u64,
}

/// Train a behavior-cloning MLP on demonstration trajectories with AdamW
/// (bit-identical update arithmetic to the transformer optimizer; the 1-D
/// decay exemption applies to the biases). Epoch shuffles reuse the
/// `seed/"shuffle"/epoch` substream convention.
pub fn train_bc(demos: &[Trajectory], cfg: &BcConfig) -> Result<BcOutcome> {
    cfg.validate()?;
    let pairs = BcPairs::from_trajectories(demos)?;
    let mut model = BcModel::init(pairs.n_o, pairs.n_a, cfg.d_model, cfg.seed)?;

    let mut m: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut v: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut steps: BTreeMap<String, u64> = BTreeMap::new();

    let start = Instant::now();
    let mut log = Vec::new();
    let mut aborted = None;
    let mut global_step: u64 = 0;

    'epochs: for epoch in 0..cfg.epochs {
        // Last-good weights to roll back to; the moments need no snapshot
        // because an abort ends the run.
        let snapshot = model.tensors.clone();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut shuffle_rng = StreamKey::new(cfg.seed)
            .with("shuffle")
            .with_index(epoch as u64)
            .rng();
        order.shuffle(&mut shuffle_rng);

        for chunk in order.chunks(cfg.batch_size) {
            let (x, t) = pairs.gather(chunk);
            let (loss, grads) = match model.loss_and_grad(&x, &t, chunk.len()) {
                Ok(r) => r,
                Err(e @ Error::NonFinite(_)) => {
                    model.tensors = snapshot;
                    aborted = Some(e.to_string());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            for (name, g) in &grads {
                let w = model
                    .tensors
                    .get_mut(name)
                    .expect("gradient names mirror model tensors");
                let t_count = steps.entry(name.clone()).or_insert(0);
                *t_count += 1;
                let mt = m
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(g.shape()));
                let vt = v
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(g.shape()));
                let decay = if w.ndim() >= 2 { cfg.hyper.weight_decay } else { 0.0 };
                adamw_update(
                    w.data_mut(),
                    g.data(),
                    mt.data_mut(),
                    vt.data_mut(),
                    *t_count,
                    decay,
                    &cfg.hyper,
                );
            }
            if model.tensors.values().any(|t| !t.is_finite()) {
                model.tensors = snapshot;
                aborted = Some("non-finite behavior-cloning update".to_string());
                break 'epochs;
            }
            global_step += 1;
            log.push(TrainLogRow {
                step: global_step,
                loss,
                lr: cfg.hyper.lr,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
    }

    Ok(BcOutcome {
        model,
        log,
        aborted,
        steps_run: global_step,
    })
}

/// [`BcModel`] as a [`Policy`]: deterministic, reward-blind, prompt-blind.
pub struct BcPolicy {
    model: BcModel,
}

impl BcPolicy {
    pub fn new(model: BcModel) -> Self {
        BcPolicy { model }
    }

    pub fn model(&self) -> &BcModel {
        &self.model
    }
}

impl Policy for BcPolicy {
    fn reset_episode(&mut self, _episode_seed: u64) {}

    fn act(&mut self, obs: &DVector<f64>) -> DVector<f64> {
        self.model
            .act(obs)
            .expect("BC policy evaluated on mismatched observation size")
    }
}

// ---------------------------------------------------------------------------
// JSON persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TensorJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BcModelJson {
    format_version: u32,
    n_o: usize,
    n_a: usize,
    d_model: usize,
    tensors: BTreeMap<String, TensorJson>,
}

const BC_FORMAT_VERSION: u32 = 1;

/// Serialize a BC model to JSON (exact f64 round trip).
pub fn bc_to_json(model: &BcModel) -> String {
    let doc = BcModelJson {
        format_version: BC_FORMAT_VERSION,
        n_o: model.n_o,
        n_a: model.n_a,
        d_model: model.d_model,
        tensors: model
            .tensors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    TensorJson {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("BC model serializes")
}

/// Parse a BC model from JSON, validating names and shapes.
pub fn bc_from_json(text: &str) -> Result<BcModel> {
    let doc: BcModelJson = serde_json::from_str(text).map_err(|e| Error::Parse {
        what: "BC model JSON".to_string(),
        detail: e.to_string(),
    })?;
    if doc.format_version != BC_FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported BC model format version {}",
            doc.format_version
        )));
    }
    let reference = BcModel::init(doc.n_o, doc.n_a, doc.d_model, 0)?;
    let mut tensors = BTreeMap::new();
    for (name, expected) in &reference.tensors {
        let got = doc
            .tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("BC model JSON is missing tensor {name}")))?;
        if got.shape != expected.shape() {
            return Err(Error::dim(format!(
                "BC tensor {name} has shape {:?}, expected {:?}",
                got.shape,
                expected.shape()
            )));
        }
        tensors.insert(name.clone(), Tensor::from_vec(&got.shape, got.data.clone())?);
    }
    if doc.tensors.len() != reference.tensors.len() {
        return Err(Error::invalid("BC model JSON has unexpected extra tensors"));
    }
    Ok(BcModel {
        n_o: doc.n_o,
        n_a: doc.n_a,
        d_model: doc.d_model,
        tensors,
    })
}
