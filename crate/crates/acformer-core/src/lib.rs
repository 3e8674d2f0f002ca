//! ACFormer: multivariate time-series forecasting with an auto-convolutional
//! encoder, channel-wise attention, and gradient-based receptive-field
//! analysis, built on a small reverse-mode autodiff tensor core.
//!
//! The crate is organized along the pipeline:
//!
//! * [`tensor`] — dense f64 tensors and the Wengert-tape autodiff engine
//! * [`model`] — the forecasting network (RevIN, shared patch compression,
//!   temporal gated attention, independent patch expansion) and checkpoints
//! * [`data`] — CSV ingestion, chronological splits, sliding-window batches
//! * [`train`] — Adam, learning-rate schedule, fitting, evaluation, reports
//! * [`synth`] — the synthetic residual-extraction study (autoencoder
//!   variants over linear/convolutional compartments)
//! * [`analysis`] — conventional and individual receptive fields, variance
//!   attention, attention-map dumps, channel correlation
//! * [`rng`] — named-stream deterministic randomness

pub mod analysis;
pub mod data;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use model::{AcformerConfig, Ablation, ModelParams};
pub use tensor::{Tape, Tensor, TensorError, Var};
