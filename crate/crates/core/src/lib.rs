//! Decision-transformer control pipeline.
//!
//! A desk-scale pipeline for studying return-conditioned sequence models as
//! output-feedback controllers for partially observable systems:
//!
//! - [`env`]: linear state-space systems and 1-D periodic PDEs (Burgers,
//!   convection–diffusion–reaction) with process/sensor noise, sparse sensing,
//!   and a quadratic tracking reward.
//! - [`classical`]: LQR/LQG via Riccati recursions, Kalman filtering, a
//!   central H∞ output-feedback controller, and a derivative-free static-gain
//!   search used to fit expert/medium demonstrator policies.
//! - [`data`]: trajectory collection, reward-to-go, fixed-length context
//!   windows, normalization anchors, task perturbation/sampling, and the
//!   `.djsonl` dataset format.
//! - [`model`]: a from-scratch decision transformer (flat `f64` tensors,
//!   exact reverse-mode gradients, AdamW, LoRA adapters, checkpointing).
//! - [`protocol`]: offline training, autoregressive evaluation rollouts,
//!   k-shot adaptation, behavior cloning, and the single-task / multi-task /
//!   H∞-comparison experiment protocols.
//!
//! Everything is deterministic given a root seed: randomness flows through
//! named [`rng`] substreams, so any artifact can be regenerated bit-for-bit.

pub mod classical;
pub mod data;
pub mod env;
pub mod error;
pub mod model;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
