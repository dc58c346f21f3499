//! Dual-tower multimodal forecasting core.
//!
//! A patch-based transformer encodes each channel's input window into a
//! sequence of patch embeddings. A frozen, pooled text embedding for the
//! channel attends over those patches (cross-attention) and a small
//! feed-forward head maps the fused vector to the forecast horizon.
//!
//! Everything here is `no_std` + `alloc`: the reverse-mode autodiff tape,
//! the data pipeline over in-memory series, the encoder, the fusion head,
//! Adam training with early stopping, the metrics and the synthetic
//! benchmark. File formats, configuration files and the CLI live in the
//! companion `tfhts` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod ablation;
pub mod data;
pub mod encoder;
mod error;
pub mod eval;
pub mod exec;
pub mod fusion;
pub mod gradcheck;
mod math;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Activation, Tape, Var};
pub use tensor::{Tensor, TensorError};
