//! Multimodal outcome prediction from 3-D CT volumes and clinical metadata.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors,
//! - [`nn`]: layers with hand-derived backward passes (3-D convolution,
//!   instance norm, squeeze-and-excitation attention, ...),
//! - [`model`]: the attention CNN with image/metadata fusion and the
//!   metadata-only network,
//! - [`train`]: focal loss, SGD with momentum, cosine annealing and the
//!   early-stopped training loop,
//! - [`data`]: volume I/O, CT preprocessing, augmentation, metadata
//!   encoding, cohort splitting and a synthetic cohort generator,
//! - [`eval`]: metrics, checkpoints, reports and experiment orchestration.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
