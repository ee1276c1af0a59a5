//! The decision-transformer model.
//!
//! A from-scratch sequence model over (return-to-go, observation, action)
//! token triples:
//!
//! - [`config`]: [`ModelConfig`], the named parameter collection, LoRA
//!   adapters, initialization, and adapter merging.
//! - [`net`]: batches of context windows, the causal forward pass, the
//!   masked-MSE loss, and exact reverse-mode gradients.
//! - [`optim`]: AdamW with decoupled weight decay and the training-log CSV.
//! - [`checkpoint`]: a single-file manifest + `f32`-payload format.
//!
//! Everything runs on flat `f64` buffers ([`Tensor`]); there is no autograd
//! framework — the backward pass mirrors the forward pass by hand and is
//! validated against central finite differences on every parameter class.

pub mod checkpoint;
pub mod config;
pub mod net;
pub mod optim;
pub mod tensor;


pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::{
    adapter_shape_table, init_adapters, init_params, lora_merge, shape_table, LoraAdapters,
    ModelConfig, ModelParameters, INIT_STD,
};
pub use net::{
    attention_allowed, forward, loss, loss_and_grad, token_allowed, Batch, GradResult,
    TrainableSet,
};
pub use optim::{adamw_step, train_log_to_csv, AdamWHyper, AdamWState, TrainLogRow};
pub use tensor::Tensor;
