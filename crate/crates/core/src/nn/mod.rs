//! Layers with hand-derived backward passes.
//!
//! Each layer is a small config struct implementing [`Layer`]: `forward`
//! returns the output together with whatever it needs to cache, and
//! `backward` turns an upstream gradient into a [`GradBundle`] holding the
//! gradient for the layer input and for every parameter tensor. The
//! underlying kernels are also exposed as free functions so composite
//! blocks (the attention modules, the model) can reuse them without
//! shuffling parameter maps around.

mod activation;
mod attention;
mod conv;
mod dropout;
mod linear;
mod norm;
mod params;
mod pool;
mod softmax;

pub use activation::{Activation, ActivationKind};
pub use attention::{ChannelSe, SpatialSe};
pub use conv::{conv3d_backward, conv3d_forward, conv3d_param_grads, conv_output_len, Conv3d};
pub use dropout::Dropout;
pub use linear::{linear_backward, linear_forward, Linear};
pub use norm::InstanceNorm3d;
pub use params::{GradBundle, LayerParams};
pub use pool::{global_avg_pool, global_avg_pool_backward, GlobalAvgPool};
pub use softmax::{softmax, softmax_backward, Softmax};

use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_SE_RATIO: usize = 2;

pub trait Layer {
    type Cache;

    fn forward(&self, params: &LayerParams, x: &Tensor) -> Result<(Tensor, Self::Cache)>;

    fn backward(&self, params: &LayerParams, cache: &Self::Cache, grad_out: &Tensor) -> Result<GradBundle>;
}

/// Splits an `N×C×D×H×W` shape into `(N, C, D·H·W)`.
pub(crate) fn split_ncs(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 5 {
        return Err(crate::Error::shape(format!(
            "expected an N×C×D×H×W tensor, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2] * shape[3] * shape[4]))
}
