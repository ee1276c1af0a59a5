//! AdamW: adaptive moments with decoupled weight decay.
//!
//! Decay is applied directly to the weights (never through the moment
//! estimates), and one-dimensional tensors — biases and normalization
//! scales/offsets — are exempt. Moments and step counts are kept per tensor,
//! so a tensor first trained late (e.g. adapters attached mid-pipeline) still
//! gets correct bias correction.

use std::collections::BTreeMap;

use super::config::{LoraAdapters, ModelParameters};
use super::tensor::Tensor;
use crate::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper {
            lr: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("AdamW lr must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("AdamW weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("AdamW betas must lie in [0, 1)"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid("AdamW eps must be positive"));
        }
        Ok(())
    }
}

/// Per-tensor first/second moments and step counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState {
    pub(crate) steps: BTreeMap<String, u64>,
    pub(crate) m: BTreeMap<String, Tensor>,
    pub(crate) v: BTreeMap<String, Tensor>,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of updates a tensor has received.
    pub fn step_of(&self, name: &str) -> u64 {
        self.steps.get(name).copied().unwrap_or(0)
    }
}

/// Apply one AdamW update to every tensor named in `grads`.
///
/// Names starting with `lora.` resolve into `adapters`, everything else into
/// `params`. Iteration is in name order, so updates are deterministic.
pub fn adamw_step(
    params: &mut ModelParameters,
    mut adapters: Option<&mut LoraAdapters>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamWState,
    hyper: &AdamWHyper,
) -> Result<()> {
    hyper.validate()?;
    for (name, g) in grads {
        let target: &mut Tensor = if name.starts_with("lora.") {
            match adapters.as_deref_mut() {
                Some(ad) => ad
                    .tensors_mut()
                    .get_mut(name)
                    .ok_or_else(|| Error::invalid(format!("gradient for unknown adapter tensor {name}")))?,
                None => {
                    return Err(Error::invalid(format!(
                        "gradient for adapter tensor {name} but no adapters supplied"
                    )))
                }
            }
        } else {
            params
                .tensors_mut()
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter tensor {name}")))?
        };
        if g.shape() != target.shape() {
            return Err(Error::dim(format!(
                "gradient for {name} has shape {:?}, tensor has {:?}",
                g.shape(),
                target.shape()
            )));
        }

        let t = state.steps.entry(name.clone()).or_insert(0);
        *t += 1;
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        // 1-D tensors (biases, normalization scales/offsets) skip decay.
        let decay = if target.ndim() >= 2 {
            hyper.weight_decay
        } else {
            0.0
        };
        adamw_update(target.data_mut(), g.data(), m.data_mut(), v.data_mut(), *t, decay, hyper);
        if !target.data().iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("updated tensor {name}")));
        }
    }
    Ok(())
}

/// The raw AdamW update on one flat tensor: first/second moment EMA, step-`t`
/// bias correction (1-based), then the decoupled-decay parameter update.
/// Shared by the transformer optimizer and the behavior-cloning baseline so
/// both train under bit-identical arithmetic.
pub(crate) fn adamw_update(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    decay: f64,
    hyper: &AdamWHyper,
) {
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    for i in 0..w.len() {
        let gi = g[i];
        let mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
        let vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
        m[i] = mi;
        v[i] = vi;
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        w[i] -= hyper.lr * (mhat / (vhat.sqrt() + hyper.eps)) + hyper.lr * decay * w[i];
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Seconds since training started (telemetry; excluded from
    /// reproducibility comparisons).
    pub wall_time: f64,
}

/// Render the training log as CSV with a `step,loss,lr,wall_time` header.
pub fn train_log_to_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from("step,loss,lr,wall_time\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.3}\n", r.step, r.loss, r.lr, r.wall_time));
    }
    out
}
