//! The attention CNN with image/metadata fusion, and the metadata-only
//! baseline network.
//!
//! Image path: three conv blocks (3×3×3 conv → instance norm → LeakyReLU,
//! strided as configured), optional channel and spatial squeeze-and-excitation
//! added onto the last block's output, then global average pooling. The
//! pooled features and the metadata vector are each passed through a
//! fully connected layer with ReLU, concatenated, and mapped to class logits.

mod config;
mod network;
mod params;

pub(crate) use config::parse_value;
pub use config::{Mode, ModelConfig, CLINICAL_DIM, TREATMENT_DIM};
pub use network::{argmax_rows, clinic_dnn_forward, ife_forward, imf_forward, predict, ForwardPass, IfeTrace, Network};
pub use params::{build_model, ModelParams, BLOCK_NAMES};
